"""Finite episodic MDPs whose optimal Q-function is linear in a known feature map.

Step indices are 0-based here (``h = 0 .. H-1``); value tables carry one
extra terminal row ``V[H] == 0``.  Environments are immutable after
construction, so one instance can be shared by concurrent runs.
"""

from collections import deque
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels

ROW_SUM_TOL = 1e-12
REALIZATION_TOL = 1e-9

MAZE_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
CHAIN_LEFT, CHAIN_RIGHT = 0, 1


class EnvironmentBuildError(ValueError):
    """Raised when an environment cannot be constructed from its spec."""


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-step map (state, action) -> R^d stored as a dense table ``(H, S, A, d)``.

    ``norm_bound`` is the constant L with ``||phi phi^T||_2^2 <= L`` for every
    entry, i.e. ``||phi||^4 <= L``.
    """

    table: np.ndarray
    norm_bound: float

    def __post_init__(self):
        table = _frozen(self.table)
        if table.ndim != 4:
            raise ValueError(f"feature table must be (H, S, A, d), got shape {table.shape}")
        object.__setattr__(self, "table", table)
        if not self.norm_bound > 0:
            raise ValueError("norm_bound must be positive")

    @property
    def dim(self) -> int:
        return self.table.shape[3]

    @property
    def horizon(self) -> int:
        return self.table.shape[0]

    def __call__(self, x: int, a: int, h: int) -> np.ndarray:
        return self.table[h, x, a]

    eval = __call__

    def max_outer_norm_sq(self) -> float:
        """max over entries of ``||phi phi^T||_2^2`` (= ``||phi||_2^4``)."""
        sq = np.einsum("hxad,hxad->hxa", self.table, self.table)
        return float(np.max(sq) ** 2) if sq.size else 0.0


@dataclass(frozen=True, eq=False)
class EpisodicMDP:
    """Finite-horizon MDP with bounded, zero-mean uniform reward noise.

    transitions: ``(H, S, A, S)``; reward_mean: ``(H, S, A)``;
    initial_dist: ``(S,)``; rewards are ``reward_mean + U[-b, b]``.
    """

    transitions: np.ndarray
    reward_mean: np.ndarray
    initial_dist: np.ndarray
    gamma: float = 1.0
    noise_bound: float = 0.0
    name: str = "mdp"
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = _frozen(self.transitions)
        R = _frozen(self.reward_mean)
        mu = _frozen(self.initial_dist)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise EnvironmentBuildError(f"transitions must be (H, S, A, S), got {P.shape}")
        if R.shape != P.shape[:3]:
            raise EnvironmentBuildError(f"reward_mean shape {R.shape} does not match {P.shape[:3]}")
        if mu.shape != (P.shape[1],):
            raise EnvironmentBuildError("initial_dist length must equal the number of states")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=3) - 1.0)) > ROW_SUM_TOL:
            raise EnvironmentBuildError("every transition row must be a probability vector")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
            raise EnvironmentBuildError("initial_dist must be a probability vector")
        if not 0.0 <= self.gamma <= 1.0:
            raise EnvironmentBuildError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.noise_bound < 0:
            raise EnvironmentBuildError("noise_bound must be non-negative")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "reward_mean", R)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "_cum", _frozen(np.cumsum(P, axis=3)))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    def reset(self, rng: np.random.Generator) -> int:
        cum = np.cumsum(self.initial_dist)
        return int(min(np.searchsorted(cum, rng.random(), side="right"), self.n_states - 1))

    def step(self, h: int, x: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        """Sample ``(next_state, reward)`` for taking ``a`` in ``x`` at step ``h``."""
        u = rng.random()
        nxt = int(np.searchsorted(self._cum[h, x, a], u, side="right"))
        nxt = min(nxt, self.n_states - 1)
        r = self.reward_mean[h, x, a]
        if self.noise_bound > 0:
            r += rng.uniform(-self.noise_bound, self.noise_bound)
        return nxt, float(r)

    def is_deterministic(self) -> bool:
        return bool(np.all((self.transitions == 0.0) | (self.transitions == 1.0)))


@dataclass(frozen=True, eq=False)
class LinearQRealization:
    """Per-step weights with ``Q*_h(x, a) = phi(x, a, h) . weights[h]``."""

    weights: np.ndarray
    weight_bound: float

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))

    def q_table(self, features: FeatureMap) -> np.ndarray:
        return np.einsum("hxad,hd->hxa", features.table, self.weights)


@dataclass(frozen=True)
class OptimalValues:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H + 1, S)

    def greedy_policy(self) -> np.ndarray:
        return greedy(self.Q)


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(q, axis=-1)


# -- operations -----------------------------------------------------------------


def tabular_one_hot(n_states: int, n_actions: int, horizon: int) -> FeatureMap:
    """Indicator features; coordinate ``a * n_states + x`` is hot."""
    if n_states < 1 or n_actions < 1 or horizon < 1:
        raise ValueError("n_states, n_actions and horizon must be >= 1")
    d = n_states * n_actions
    table = np.zeros((horizon, n_states, n_actions, d))
    for x in range(n_states):
        for a in range(n_actions):
            table[:, x, a, a * n_states + x] = 1.0
    return FeatureMap(table, norm_bound=1.0)


def optimal_q(mdp: EpisodicMDP) -> OptimalValues:
    Q, V = kernels.backward_induction(mdp.transitions, mdp.reward_mean, float(mdp.gamma))
    return OptimalValues(Q, V)


PolicyLike = np.ndarray | Callable[[int, int], int]


def as_action_probs(policy: PolicyLike, n_states: int, n_actions: int, horizon: int) -> np.ndarray:
    """Normalise a policy to an ``(H, S, A)`` probability table.

    Accepts an ``(H, S)`` integer action table, an ``(H, S, A)`` table of
    probabilities, or a callable ``policy(x, h) -> action``.
    """
    if callable(policy):
        acts = np.array([[policy(x, h) for x in range(n_states)] for h in range(horizon)])
        policy = acts
    pol = np.asarray(policy)
    if pol.shape == (horizon, n_states):
        probs = np.zeros((horizon, n_states, n_actions))
        h_idx, x_idx = np.indices((horizon, n_states))
        probs[h_idx, x_idx, pol.astype(int)] = 1.0
        return probs
    if pol.shape == (horizon, n_states, n_actions):
        probs = pol.astype(float)
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=2) - 1.0)) > 1e-9:
            raise ValueError("policy rows must be probability vectors")
        return probs
    raise ValueError(f"cannot interpret policy of shape {pol.shape}")


def policy_values(mdp: EpisodicMDP, policy: PolicyLike) -> np.ndarray:
    """Exact value table ``(H + 1, S)`` of ``policy`` by backward induction."""
    probs = as_action_probs(policy, mdp.n_states, mdp.n_actions, mdp.horizon)
    return kernels.evaluate_policy(mdp.transitions, mdp.reward_mean, float(mdp.gamma), probs)


def policy_value(mdp: EpisodicMDP, policy: PolicyLike) -> float:
    """Expected (discounted) return of ``policy`` from the initial distribution."""
    return float(mdp.initial_dist @ policy_values(mdp, policy)[0])


def reachable(mdp: EpisodicMDP) -> np.ndarray:
    """Boolean ``(H, S)``: states reachable at each step under some policy."""
    out = np.zeros((mdp.horizon, mdp.n_states), dtype=bool)
    out[0] = mdp.initial_dist > 0
    for h in range(mdp.horizon - 1):
        nxt = mdp.transitions[h][out[h]].reshape(-1, mdp.n_states)
        out[h + 1] = np.any(nxt > 0, axis=0)
    return out


def realize_linear_q(mdp: EpisodicMDP, features: FeatureMap, values: OptimalValues | None = None) -> LinearQRealization:
    """Least-squares weights reproducing Q* on reachable pairs; raises if not exact."""
    if features.horizon != mdp.horizon or features.table.shape[1:3] != (mdp.n_states, mdp.n_actions):
        raise EnvironmentBuildError("feature map does not match the MDP's (H, S, A)")
    values = values if values is not None else optimal_q(mdp)
    reach = reachable(mdp)
    weights = np.zeros((mdp.horizon, features.dim))
    for h in range(mdp.horizon):
        rows = features.table[h][reach[h]].reshape(-1, features.dim)
        target = values.Q[h][reach[h]].reshape(-1)
        w, *_ = np.linalg.lstsq(rows, target, rcond=None)
        resid = np.max(np.abs(rows @ w - target)) if rows.size else 0.0
        if resid > REALIZATION_TOL:
            raise EnvironmentBuildError(f"Q* is not linear in the features at step {h} (residual {resid:.3g})")
        weights[h] = w
    bound = float(np.max(np.linalg.norm(weights, axis=1)))
    return LinearQRealization(weights, weight_bound=bound)


def noise_sigma(mdp: EpisodicMDP, values: OptimalValues | None = None) -> float:
    """Sub-Gaussian parameter of the regression noise in the optimal target.

    Combines the reward noise bound ``b`` with half the spread of the
    next-step optimal value over each transition's support (Hoeffding), added
    in quadrature since the two sources are independent.  Equals ``b`` when
    transitions are deterministic.
    """
    values = values if values is not None else optimal_q(mdp)
    spread = 0.0
    for h in range(mdp.horizon - 1):
        nxt = values.V[h + 1]
        support = mdp.transitions[h] > 0
        hi = np.where(support, nxt, -np.inf).max(axis=2)
        lo = np.where(support, nxt, np.inf).min(axis=2)
        spread = max(spread, float(np.max(hi - lo)))
    return float(np.hypot(mdp.noise_bound, 0.5 * mdp.gamma * spread))


def _normalise_returns(P, R, gamma):
    """Scale rewards so the largest optimal return from any state is <= 1."""
    _, V = kernels.backward_induction(P, R, gamma)
    top = float(np.max(V[0]))
    return R / top if top > 1.0 else R


def _bundle(mdp: EpisodicMDP, features: FeatureMap | None = None):
    features = features if features is not None else tabular_one_hot(mdp.n_states, mdp.n_actions, mdp.horizon)
    realization = realize_linear_q(mdp, features)
    return mdp, features, realization


def make_chain_mdp(
    n: int,
    horizon: int,
    slip_prob: float = 0.0,
    noise_bound: float = 0.0,
    small_reward: float | None = None,
    gamma: float = 1.0,
):
    """Left/right chain starting at the leftmost state.

    Action 0 moves left, action 1 moves right; with probability ``slip_prob``
    the move is reversed.  Choosing left at the leftmost state pays
    ``small_reward`` (default ``0.1 / horizon``); landing on the rightmost
    state at the final step pays 1.
    """
    if n < 2:
        raise EnvironmentBuildError("chain needs n >= 2")
    if horizon < 1:
        raise EnvironmentBuildError("horizon must be >= 1")
    if not 0.0 <= slip_prob < 0.5:
        raise EnvironmentBuildError(f"slip_prob must lie in [0, 0.5), got {slip_prob}")
    small = 0.1 / horizon if small_reward is None else float(small_reward)
    H, S, A = horizon, n, 2
    P = np.zeros((H, S, A, S))
    for x in range(S):
        left, right = max(x - 1, 0), min(x + 1, S - 1)
        P[:, x, CHAIN_LEFT, left] += 1.0 - slip_prob
        P[:, x, CHAIN_LEFT, right] += slip_prob
        P[:, x, CHAIN_RIGHT, right] += 1.0 - slip_prob
        P[:, x, CHAIN_RIGHT, left] += slip_prob
    R = np.zeros((H, S, A))
    R[:, 0, CHAIN_LEFT] = small
    R[H - 1] += P[H - 1, :, :, S - 1]
    init = np.zeros(S)
    init[0] = 1.0
    R = _normalise_returns(P, R, gamma)
    mdp = EpisodicMDP(P, R, init, gamma=gamma, noise_bound=noise_bound, name=f"chain-{n}")
    return _bundle(mdp)


@dataclass(frozen=True)
class MazeLayout:
    rows: tuple[str, ...]
    cells: tuple[tuple[int, int], ...]  # open cells, row-major; index = state id
    start: int
    goal: int

    def state_of(self, r: int, c: int) -> int:
        return self.cells.index((r, c))


def parse_maze(rows: Sequence[str]) -> MazeLayout:
    rows = tuple(rows)
    if not rows or len({len(r) for r in rows}) != 1:
        raise EnvironmentBuildError("maze rows must be non-empty and of equal length")
    cells, start, goal = [], [], []
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == "#":
                continue
            if ch not in ".SG":
                raise EnvironmentBuildError(f"unknown maze symbol {ch!r}")
            if ch == "S":
                start.append(len(cells))
            if ch == "G":
                goal.append(len(cells))
            cells.append((i, j))
    if len(start) != 1 or len(goal) != 1:
        raise EnvironmentBuildError("maze needs exactly one 'S' and one 'G'")
    return MazeLayout(rows, tuple(cells), start[0], goal[0])


def maze_moves(layout: MazeLayout) -> np.ndarray:
    """``(S, 4)`` next-state table; blocked moves stay put."""
    index = {cell: s for s, cell in enumerate(layout.cells)}
    nxt = np.zeros((len(layout.cells), len(MAZE_MOVES)), dtype=int)
    for s, (r, c) in enumerate(layout.cells):
        for a, (dr, dc) in enumerate(MAZE_MOVES):
            nxt[s, a] = index.get((r + dr, c + dc), s)
    return nxt


def maze_distances(layout: MazeLayout) -> np.ndarray:
    """Breadth-first shortest-path lengths from the start (-1 if unreachable)."""
    moves = maze_moves(layout)
    dist = np.full(len(layout.cells), -1)
    dist[layout.start] = 0
    queue = deque([layout.start])
    while queue:
        s = queue.popleft()
        for t in moves[s]:
            if dist[t] < 0:
                dist[t] = dist[s] + 1
                queue.append(t)
    return dist


def make_maze_mdp(rows: Sequence[str], horizon: int | None = None, noise_bound: float = 0.0):
    """Deterministic episodic maze: reward 1 for stepping onto the goal.

    The goal is absorbing and pays nothing afterwards.  ``horizon`` defaults
    to the shortest start-to-goal path length.
    """
    layout = parse_maze(rows)
    if layout.start == layout.goal:
        raise EnvironmentBuildError("start and goal coincide")
    dist = maze_distances(layout)
    shortest = int(dist[layout.goal])
    if shortest < 0:
        raise EnvironmentBuildError("goal is unreachable from the start")
    H = shortest if horizon is None else int(horizon)
    if H < shortest:
        raise EnvironmentBuildError(f"goal needs {shortest} steps but horizon is {H}")
    moves = maze_moves(layout)
    S, A = len(layout.cells), len(MAZE_MOVES)
    P = np.zeros((H, S, A, S))
    R = np.zeros((H, S, A))
    for s in range(S):
        for a in range(A):
            t = layout.goal if s == layout.goal else moves[s, a]
            P[:, s, a, t] = 1.0
            if s != layout.goal and t == layout.goal:
                R[:, s, a] = 1.0
    init = np.zeros(S)
    init[layout.start] = 1.0
    mdp = EpisodicMDP(P, R, init, gamma=1.0, noise_bound=noise_bound, name="maze")
    return _bundle(mdp)


def make_random_mdp(
    n_states: int,
    n_actions: int,
    horizon: int,
    rng: np.random.Generator,
    noise_bound: float = 0.0,
    gamma: float = 1.0,
    concentration: float = 1.0,
):
    """Dirichlet transitions and uniform mean rewards, rescaled to returns <= 1."""
    H, S, A = horizon, n_states, n_actions
    P = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    P /= P.sum(axis=3, keepdims=True)
    R = rng.uniform(0.0, 1.0, size=(H, S, A))
    init = np.zeros(S)
    init[0] = 1.0
    R = _normalise_returns(P, R, gamma)
    mdp = EpisodicMDP(P, R, init, gamma=gamma, noise_bound=noise_bound, name="random")
    return _bundle(mdp)


# -- serialisable environment specs ---------------------------------------------------


ENV_KINDS = ("chain", "maze", "random")


@dataclass
class EnvSpec:
    """Human-readable environment description (see :func:`build_environment`)."""

    kind: str = "chain"
    n: int = 5
    H: int | None = None
    slip_prob: float = 0.0
    grid: list[str] | None = None
    noise_bound: float = 0.0
    seed: int = 0
    n_states: int = 3
    n_actions: int = 2
    gamma: float = 1.0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise EnvironmentBuildError(f"unknown environment keys: {sorted(unknown)}")
        spec = cls(**data)
        if spec.kind not in ENV_KINDS:
            raise EnvironmentBuildError(f"unknown environment kind {spec.kind!r}; expected one of {ENV_KINDS}")
        if spec.grid is not None:
            spec.grid = list(spec.grid)
        return spec


def build_environment(spec: EnvSpec):
    """Construct ``(mdp, features, realization)`` from a spec."""
    from .rng import make_stream

    if spec.kind == "chain":
        H = spec.n - 1 if spec.H is None else spec.H
        return make_chain_mdp(spec.n, H, spec.slip_prob, spec.noise_bound, gamma=spec.gamma)
    if spec.kind == "maze":
        if not spec.grid:
            raise EnvironmentBuildError("maze spec needs 'grid' rows")
        return make_maze_mdp(spec.grid, spec.H, spec.noise_bound)
    if spec.kind == "random":
        rng = make_stream(spec.seed, "environment")
        H = 3 if spec.H is None else spec.H
        return make_random_mdp(spec.n_states, spec.n_actions, H, rng, spec.noise_bound, spec.gamma)
    raise EnvironmentBuildError(f"unknown environment kind {spec.kind!r}")
