"""Exploration strategies for episodic MDPs with linear Q-functions.

Every agent draws its randomness from the generator handed to its
constructor, and breaks value ties toward the lowest action index.  The
episodic agents share one driving protocol used by the harness::

    agent.begin_episode()
    a = agent.act(x, h)            # for h = 0 .. H-1
    agent.observe(Transition(...))
    agent.end_episode()

``episode_policy()`` returns the ``(H, S, A)`` action distribution the agent
commits to for the current episode (evaluated exactly for pseudo-regret) and
``greedy_policy()`` the ``(H, S)`` greedy map of its point estimate.
"""

from dataclasses import dataclass

import numpy as np

from .env import FeatureMap, greedy
from .estimator import (
    GaussianPosterior,
    RidgeState,
    blr_posterior,
    posterior_from_ridge,
    radius_recursion,
    rho_empirical,
)


@dataclass(frozen=True)
class Transition:
    x: int
    a: int
    r: float
    x_next: int
    h: int
    terminal: bool


def _one_hot_policy(actions: np.ndarray, n_actions: int) -> np.ndarray:
    probs = np.zeros(actions.shape + (n_actions,))
    np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
    return probs


# -- action selection rules -----------------------------------------------------------


def epsilon_greedy_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Argmax with probability ``1 - epsilon``, otherwise a uniform action."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q_values, dtype=float)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.shape[0]))
    return int(np.argmax(q))


def boltzmann_probs(q_values, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(q_values, dtype=float) / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


def boltzmann_action(q_values, temperature: float, rng: np.random.Generator) -> int:
    """Sample from ``softmax(q / temperature)``."""
    p = boltzmann_probs(q_values, temperature)
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, p.shape[0] - 1)


# -- shared machinery for per-step linear learners ----------------------------------


TARGET_MODES = ("pessimistic", "mean", "sampled")


class _PerStepLinearLearner:
    """Per-step ridge regression on ``phi(x, a, h)`` with regression targets
    built at the end of each episode from the previous episode's estimates."""

    def __init__(self, features: FeatureMap, lam: float, gamma: float, rng: np.random.Generator):
        self.features = features
        self.table = features.table
        self.H, self.S, self.A, self.d = features.table.shape
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.rng = rng
        self.states = [RidgeState(self.d, lam) for _ in range(self.H)]
        self.weights = np.zeros((self.H, self.d))
        self.episode = 0
        self._pending: list[Transition] = []
        self._policy = np.zeros((self.H, self.S), dtype=int)

    def q_table(self, weights=None) -> np.ndarray:
        w = self.weights if weights is None else weights
        return np.einsum("hxad,hd->hxa", self.table, w)

    def greedy_policy(self) -> np.ndarray:
        return greedy(self.q_table())

    def episode_policy(self) -> np.ndarray:
        return _one_hot_policy(self._policy, self.A)

    def begin_episode(self) -> None:
        self._policy = self._plan()

    def act(self, x: int, h: int) -> int:
        return int(self._policy[h, x])

    def observe(self, transition: Transition) -> None:
        self._pending.append(transition)

    def end_episode(self) -> None:
        targets = [self.build_target(tr) for tr in self._pending]
        for tr, y in zip(self._pending, targets):
            self.states[tr.h].update(self.table[tr.h, tr.x, tr.a], y)
            self._record_visit(tr)
        self._pending = []
        self.episode += 1
        self._refresh()

    def next_value(self, x_next: int, h_next: int) -> float:
        raise NotImplementedError

    def build_target(self, tr: Transition) -> float:
        if tr.terminal or tr.h >= self.H - 1:
            return tr.r
        return tr.r + self.gamma * self.next_value(tr.x_next, tr.h + 1)

    def _plan(self) -> np.ndarray:
        return self.greedy_policy()

    def _record_visit(self, tr: Transition) -> None:
        pass

    def _refresh(self) -> None:
        for h, st in enumerate(self.states):
            self.weights[h] = st.estimate()


class _ConfidenceLearner(_PerStepLinearLearner):
    """Adds per-step confidence radii and pessimistic regression targets."""

    def __init__(
        self,
        features: FeatureMap,
        rng: np.random.Generator,
        *,
        lam: float = 1.0,
        gamma: float = 1.0,
        delta: float = 0.1,
        sigma: float = 1.0,
        weight_bound: float = 1.0,
        rho: float | str = "empirical",
        optimal_policy: np.ndarray | None = None,
        targets: str = "pessimistic",
    ):
        super().__init__(features, lam, gamma, rng)
        if targets not in TARGET_MODES:
            raise ValueError(f"targets must be one of {TARGET_MODES}, got {targets!r}")
        if targets == "sampled" and not hasattr(self, "sampled"):
            raise ValueError("sampled targets need a posterior-sampling agent")
        self.targets = targets
        self.delta = float(delta)
        self.sigma = float(sigma)
        self.weight_bound = float(weight_bound)
        self.rho_mode = rho
        if rho == "empirical":
            if optimal_policy is None:
                raise ValueError("empirical rho needs the optimal policy of the simulator")
            pi_star = np.asarray(optimal_policy, dtype=int)
            h_idx, x_idx = np.indices((self.H, self.S))
            self._optimal_rows = self.table[h_idx, x_idx, pi_star]  # (H, S, d)
        elif isinstance(rho, str):
            raise ValueError(f"rho must be 'empirical' or a number, got {rho!r}")
        elif float(rho) < 0:
            raise ValueError("rho must be non-negative")
        self.visits = np.zeros((self.H, self.S))
        self.rhos = np.zeros(self.H)
        self.thetas = np.zeros(self.H)
        self._refresh()

    def _record_visit(self, tr: Transition) -> None:
        self.visits[tr.h, tr.x] += 1.0

    def _refresh(self) -> None:
        super()._refresh()
        if self.rho_mode == "empirical":
            for h in range(self.H):
                self.rhos[h] = rho_empirical(self.states[h], self._optimal_rows[h], self.visits[h])
        else:
            self.rhos[:] = float(self.rho_mode)
        self.thetas = radius_recursion(
            self.episode,
            self.delta,
            self.d,
            self.sigma,
            self.lam,
            self.features.norm_bound,
            self.weight_bound,
            self.rhos,
        )

    def bonus(self, h: int, rows) -> np.ndarray:
        return self.thetas[h] * self.states[h].inv_norms(rows)

    def upper_bounds(self, h: int, x: int) -> np.ndarray:
        rows = self.table[h, x]
        return rows @ self.weights[h] + self.bonus(h, rows)

    def lower_bounds(self, h: int, x: int) -> np.ndarray:
        rows = self.table[h, x]
        return rows @ self.weights[h] - self.bonus(h, rows)

    def next_value(self, x_next: int, h_next: int) -> float:
        if self.targets == "pessimistic":
            return pessimistic_next_value(self, x_next, h_next)
        if h_next >= self.H:
            return 0.0
        w = self.sampled[h_next] if self.targets == "sampled" else self.weights[h_next]
        return float(np.max(self.table[h_next, x_next] @ w))


class LinUcbAgent(_ConfidenceLearner):
    """Optimism in the face of uncertainty over per-step confidence ellipsoids.

    Acts greedily on ``phi . w_hat + theta ||phi||_{gram^{-1}}``, the closed
    form of maximising a linear function over the ellipsoid.  Statistics are
    updated once per episode.
    """

    def ucb_table(self) -> np.ndarray:
        out = np.empty((self.H, self.S, self.A))
        for h in range(self.H):
            rows = self.table[h]
            out[h] = rows @ self.weights[h] + self.bonus(h, rows)
        return out

    def _plan(self) -> np.ndarray:
        return greedy(self.ucb_table())


class LinPsrlAgent(_ConfidenceLearner):
    """Posterior sampling with a Gaussian prior ``N(0, prior_var I)`` per step.

    The likelihood variance is ``sigma^2``; the posterior is the conjugate
    update on the same observable (pessimistic) targets LinUCB regresses on,
    so the ridge statistics use ``lam = sigma^2 / prior_var``.  One weight
    vector per step is drawn at the start of every episode.

    By default targets bootstrap from the sampled model the episode followed
    (``targets="sampled"``); ``"pessimistic"`` regresses on the same lower
    confidence values as LinUCB.
    """

    def __init__(self, features: FeatureMap, rng: np.random.Generator, *, prior_var: float = 1.0, sigma: float = 1.0, targets: str = "sampled", **kw):
        if not prior_var > 0:
            raise ValueError("prior_var must be positive")
        self.prior_var = float(prior_var)
        self.sampled = np.zeros((features.table.shape[0], features.table.shape[-1]))
        super().__init__(features, rng, lam=sigma**2 / prior_var, sigma=sigma, targets=targets, **kw)
        self.draws = 0

    def posterior(self, h: int) -> GaussianPosterior:
        return posterior_from_ridge(self.states[h], self.sigma)

    def _plan(self) -> np.ndarray:
        self.sampled = linpsrl_begin_episode(self)
        return greedy(self.q_table(self.sampled))


class EpsilonGreedyAgent(_PerStepLinearLearner):
    """Dithering baseline: least-squares Q estimates, epsilon-greedy actions.

    Estimates start at zero and regress on ``r + gamma max_a Q_hat(x', a)``;
    with one-hot features this is sample-average Q-learning (1/n step sizes).
    """

    def __init__(self, features: FeatureMap, rng: np.random.Generator, *, epsilon: float = 0.1, lam: float = 1.0, gamma: float = 1.0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        super().__init__(features, lam, gamma, rng)
        self.epsilon = float(epsilon)
        self._q = self.q_table()

    def _plan(self) -> np.ndarray:
        self._q = self.q_table()
        return greedy(self._q)

    def act(self, x: int, h: int) -> int:
        return epsilon_greedy_action(self._q[h, x], self.epsilon, self.rng)

    def episode_policy(self) -> np.ndarray:
        probs = (1.0 - self.epsilon) * _one_hot_policy(self._policy, self.A)
        return probs + self.epsilon / self.A

    def next_value(self, x_next: int, h_next: int) -> float:
        return float(np.max(self.table[h_next, x_next] @ self.weights[h_next]))


class BoltzmannAgent(EpsilonGreedyAgent):
    """Softmax-over-estimates baseline."""

    def __init__(self, features: FeatureMap, rng: np.random.Generator, *, temperature: float = 0.1, lam: float = 1.0, gamma: float = 1.0):
        super().__init__(features, rng, epsilon=0.0, lam=lam, gamma=gamma)
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.temperature = float(temperature)

    def act(self, x: int, h: int) -> int:
        return boltzmann_action(self._q[h, x], self.temperature, self.rng)

    def episode_policy(self) -> np.ndarray:
        z = self._q / self.temperature
        z = np.exp(z - z.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)


def linucb_action(agent: LinUcbAgent, x: int, h: int) -> int:
    return int(np.argmax(agent.upper_bounds(h, x)))


def pessimistic_next_value(agent: _ConfidenceLearner, x_next: int, h_next: int) -> float:
    """Best lower confidence bound at ``(x_next, h_next)``; zero past the horizon."""
    if h_next >= agent.H:
        return 0.0
    return float(np.max(agent.lower_bounds(h_next, x_next)))


def build_target(transition: Transition, agent: _ConfidenceLearner, gamma: float) -> float:
    """Observable regression target ``r + gamma * pessimistic value of x'``."""
    if transition.terminal or transition.h >= agent.H - 1:
        return transition.r
    return transition.r + gamma * pessimistic_next_value(agent, transition.x_next, transition.h + 1)


def linpsrl_begin_episode(agent: LinPsrlAgent) -> np.ndarray:
    """One posterior draw per step, used for the whole episode."""
    out = np.empty((agent.H, agent.d))
    for h in range(agent.H):
        out[h] = agent.posterior(h).sample(agent.rng)
    agent.draws += 1
    return out


# -- BDQN-lite --------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.x = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.x_next = np.zeros(capacity, dtype=np.int64)
        self.h = np.zeros(capacity, dtype=np.int64)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self._head
        self.x[i], self.a[i], self.r[i] = tr.x, tr.a, tr.r
        self.x_next[i], self.h[i], self.terminal[i] = tr.x_next, tr.h, tr.terminal
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_slots(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0, dtype=np.int64)
        return rng.integers(self.size, size=n)


def state_one_hot(n_states: int, horizon: int) -> np.ndarray:
    """``(H, S, H*S)`` indicator of the (step, state) pair."""
    table = np.zeros((horizon, n_states, horizon * n_states))
    for h in range(horizon):
        table[h, np.arange(n_states), h * n_states + np.arange(n_states)] = 1.0
    return table


class BdqnLiteAgent:
    """Thompson sampling over per-action BLR posteriors on fixed state features.

    Schedule per step ``t`` (counted from 1): every ``rebuild_period`` steps the
    posteriors are refit on ``batch_size`` uniform replay samples and the
    target weights are set to the new posterior means; every
    ``sample_period`` steps fresh weights are drawn around the target
    weights; every ``target_period`` steps the feature-network target sync
    hook runs (a no-op for fixed features).
    """

    def __init__(
        self,
        state_features,
        n_actions: int,
        rng: np.random.Generator,
        *,
        gamma: float = 1.0,
        sigma: float = 0.001,
        sigma_eps: float = 1.0,
        target_period: int = 100,
        sample_period: int | None = None,
        rebuild_period: int | None = None,
        batch_size: int | None = None,
        buffer_capacity: int = 100_000,
    ):
        self.phi = np.asarray(state_features, dtype=float)  # (H, S, d)
        self.H, self.S, self.d = self.phi.shape
        self.A = int(n_actions)
        self.rng = rng
        self.gamma = float(gamma)
        self.sigma, self.sigma_eps = float(sigma), float(sigma_eps)
        self.target_period = int(target_period)
        self.sample_period = int(sample_period if sample_period is not None else max(target_period // 10, 1))
        self.rebuild_period = int(rebuild_period if rebuild_period is not None else 10 * target_period)
        self.batch_size = int(batch_size if batch_size is not None else 10 * target_period)
        if min(self.target_period, self.sample_period, self.rebuild_period, self.batch_size) < 1:
            raise ValueError("periods and batch size must be >= 1")
        self.buffer = ReplayBuffer(buffer_capacity)
        prior = GaussianPosterior(np.zeros(self.d), self.sigma**2 * np.eye(self.d))
        self.posteriors = [prior] * self.A
        self.target_weights = np.zeros((self.A, self.d))
        self.weights = np.stack([p.sample(rng) for p in self.posteriors])
        self.t = 0
        self.rebuilds = 0
        self.draws = 0
        self.target_syncs = 0
        self._policy = np.zeros((self.H, self.S), dtype=int)

    def q_values(self, x: int, h: int, weights=None) -> np.ndarray:
        w = self.weights if weights is None else weights
        return w @ self.phi[h, x]

    def rebuild(self) -> None:
        slots = self.buffer.sample_slots(self.batch_size, self.rng)
        buf = self.buffer
        x, a, r = buf.x[slots], buf.a[slots], buf.r[slots]
        xn, h, term = buf.x_next[slots], buf.h[slots], buf.terminal[slots]
        y = r.copy()
        live = ~term & (h < self.H - 1)
        if np.any(live):
            nxt = self.phi[h[live] + 1, xn[live]]  # (m, d)
            a_hat = np.argmax(nxt @ self.weights.T, axis=1)
            y[live] += self.gamma * np.einsum("md,md->m", nxt, self.target_weights[a_hat])
        feats = self.phi[h, x]
        self.posteriors = [
            blr_posterior(feats[a == k], y[a == k], self.sigma, self.sigma_eps, dim=self.d)
            for k in range(self.A)
        ]
        self.target_weights = np.stack([p.mean for p in self.posteriors])
        self.rebuilds += 1

    def draw(self) -> None:
        self.weights = np.stack(
            [GaussianPosterior(self.target_weights[k], p.cov).sample(self.rng) for k, p in enumerate(self.posteriors)]
        )
        self.draws += 1

    def sync_feature_target(self) -> None:
        # Fixed features: nothing to copy.
        self.target_syncs += 1

    def act(self, x: int, h: int) -> int:
        self.t += 1
        if self.t % self.rebuild_period == 0:
            self.rebuild()
        if self.t % self.sample_period == 0:
            self.draw()
        if self.t % self.target_period == 0:
            self.sync_feature_target()
        return int(np.argmax(self.q_values(x, h)))

    def observe(self, tr: Transition) -> None:
        self.buffer.add(tr)

    def begin_episode(self) -> None:
        self._policy = greedy(np.einsum("hxd,ad->hxa", self.phi, self.weights))

    def end_episode(self) -> None:
        pass

    def episode_policy(self) -> np.ndarray:
        return _one_hot_policy(self._policy, self.A)

    def greedy_policy(self) -> np.ndarray:
        return greedy(np.einsum("hxd,ad->hxa", self.phi, self.target_weights))


def bdqn_step(agent: BdqnLiteAgent, observation: tuple[int, int]) -> int:
    x, h = observation
    return agent.act(x, h)


# -- hypothesis-set PSRL -------------------------------------------------------------


class HypothesisSetPsrl:
    """Posterior sampling over a finite set of candidate Q tables.

    In a deterministic environment the true Q satisfies the Bellman equation
    exactly on every observed transition; a candidate that violates it on an
    observed transition has zero likelihood and its mass is set to zero.
    """

    def __init__(self, q_tables, rng: np.random.Generator, *, prior=None, gamma: float = 1.0, tol: float = 1e-9):
        self.q = np.asarray(q_tables, dtype=float)  # (K, H, S, A)
        self.K, self.H, self.S, self.A = self.q.shape
        self.rng = rng
        self.gamma = float(gamma)
        self.tol = float(tol)
        mass = np.ones(self.K) if prior is None else np.asarray(prior, dtype=float)
        if mass.shape != (self.K,) or np.any(mass < 0) or mass.sum() <= 0:
            raise ValueError("prior must be a non-negative vector over hypotheses")
        self.mass = mass / mass.sum()
        self.choice = -1
        self._policy = np.zeros((self.H, self.S), dtype=int)

    def begin_episode(self) -> None:
        cum = np.cumsum(self.mass)
        k = int(np.searchsorted(cum, self.rng.random() * cum[-1], side="right"))
        self.choice = min(k, self.K - 1)
        while self.mass[self.choice] == 0.0:  # guard against cumsum rounding
            self.choice -= 1
        self._policy = greedy(self.q[self.choice])

    def act(self, x: int, h: int) -> int:
        return int(self._policy[h, x])

    def observe(self, tr: Transition) -> None:
        pred = self.q[:, tr.h, tr.x, tr.a]
        target = np.full(self.K, tr.r)
        if not tr.terminal and tr.h < self.H - 1:
            target += self.gamma * self.q[:, tr.h + 1, tr.x_next].max(axis=1)
        self.mass[np.abs(pred - target) > self.tol] = 0.0
        total = self.mass.sum()
        if total <= 0.0:
            raise RuntimeError("every hypothesis was contradicted; the true Q is not in the set")
        self.mass /= total

    def end_episode(self) -> None:
        pass

    def episode_policy(self) -> np.ndarray:
        return _one_hot_policy(self._policy, self.A)

    def greedy_policy(self) -> np.ndarray:
        return greedy(self.q[int(np.argmax(self.mass))])


def hypothesis_psrl_episode(agent: HypothesisSetPsrl, mdp, env_rng: np.random.Generator):
    """Run one episode; returns ``(chosen index, episode return, mass copy)``."""
    agent.begin_episode()
    x = mdp.reset(env_rng)
    ret = 0.0
    for h in range(mdp.horizon):
        a = agent.act(x, h)
        x_next, r = mdp.step(h, x, a, env_rng)
        ret += (mdp.gamma**h) * r
        agent.observe(Transition(x, a, r, x_next, h, h == mdp.horizon - 1))
        x = x_next
    agent.end_episode()
    return agent.choice, ret, agent.mass.copy()


def maze_hypothesis_set(rows, n_hypotheses: int, rng: np.random.Generator, horizon: int | None = None):
    """Q tables for the maze and ``n_hypotheses - 1`` relocated-goal variants.

    Every variant keeps the grid and horizon; its goal sits on another open
    cell reachable within the horizon, so all candidates promise return 1.
    Returns ``(q_tables (K, H, S, A), index of the true table)``.
    """
    from .env import make_maze_mdp, maze_distances, optimal_q, parse_maze

    layout = parse_maze(rows)
    true_mdp, _, _ = make_maze_mdp(rows, horizon=horizon)
    H = true_mdp.horizon
    dist = maze_distances(layout)
    candidates = [
        s
        for s in sorted(range(len(layout.cells)), key=lambda s: (-dist[s], s))
        if s not in (layout.start, layout.goal) and 1 <= dist[s] <= H
    ]
    if len(candidates) < n_hypotheses - 1:
        raise ValueError(f"maze has only {len(candidates)} alternative goal cells")
    tables = [optimal_q(true_mdp).Q]
    plain = [row.replace("G", ".") for row in rows]
    for s in candidates[: n_hypotheses - 1]:
        r, c = layout.cells[s]
        moved = list(plain)
        moved[r] = moved[r][:c] + "G" + moved[r][c + 1 :]
        mdp, _, _ = make_maze_mdp(moved, horizon=H)
        tables.append(optimal_q(mdp).Q)
    order = rng.permutation(n_hypotheses)
    q = np.stack(tables)[order]
    return q, int(np.flatnonzero(order == 0)[0])
