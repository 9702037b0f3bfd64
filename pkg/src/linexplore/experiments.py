"""Desk-scale exploration experiments: maze goal-finding, episodes to the
first optimal policy, and the BDQN-lite schedule run."""

import hashlib
from dataclasses import dataclass

import numpy as np

from .agents import (
    BdqnLiteAgent,
    HypothesisSetPsrl,
    Transition,
    hypothesis_psrl_episode,
    maze_hypothesis_set,
    state_one_hot,
)
from .env import (
    EnvSpec,
    build_environment,
    make_maze_mdp,
    maze_moves,
    optimal_q,
    parse_maze,
    policy_value,
)
from .harness import AgentSpec, RunConfig, make_agent
from .rng import make_stream

# Goal six steps from the start; sixteen other open cells lie within six steps.
DEFAULT_MAZE = (
    "S..#.",
    ".#...",
    "...#G",
    ".#...",
    ".....",
)


@dataclass(frozen=True)
class GoalSearch:
    """Episodes until the first success per seed; censored runs hit the cap."""

    episodes: np.ndarray
    censored: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.episodes))

    @property
    def mean(self) -> float:
        return float(np.mean(self.episodes))


def psrl_episodes_to_goal(rows, n_hypotheses: int, seed: int, horizon: int | None = None) -> int:
    """Episodes hypothesis-set PSRL needs before its first goal visit."""
    mdp, _, _ = make_maze_mdp(rows, horizon=horizon)
    q, _ = maze_hypothesis_set(rows, n_hypotheses, make_stream(seed, "hypotheses"), horizon=mdp.horizon)
    agent = HypothesisSetPsrl(q, make_stream(seed, "agent"))
    env_rng = make_stream(seed, "environment")
    episode = 0
    while True:
        episode += 1
        _, ret, _ = hypothesis_psrl_episode(agent, mdp, env_rng)
        if ret > 0.0:
            return episode


def epsilon_episodes_to_goal(rows, epsilon: float, seed: int, horizon: int | None = None,
                             max_episodes: int = 100_000, batch: int = 4096) -> tuple[int, bool]:
    """Episodes an uninformed epsilon-greedy learner needs to first reach the goal.

    Until the first reward every regression target is zero, so a learner
    started from zero estimates keeps all values exactly zero and acts
    epsilon-greedily over ties (greedy choice: lowest action index).  That
    phase is simulated directly, many episodes at a time.  Returns
    ``(episodes, censored)``; censored runs report ``max_episodes``.
    """
    layout = parse_maze(rows)
    mdp, _, _ = make_maze_mdp(rows, horizon=horizon)
    moves = maze_moves(layout)
    A = moves.shape[1]
    rng = make_stream(seed, "agent")
    done = 0
    while done < max_episodes:
        n = min(batch, max_episodes - done)
        explore = rng.random((n, mdp.horizon)) < epsilon
        random_a = rng.integers(A, size=(n, mdp.horizon))
        actions = np.where(explore, random_a, 0)
        x = np.full(n, layout.start)
        hit = np.zeros(n, dtype=bool)
        for h in range(mdp.horizon):
            x = np.where(x == layout.goal, x, moves[x, actions[:, h]])
            hit |= x == layout.goal
        if np.any(hit):
            return done + int(np.argmax(hit)) + 1, False
        done += n
    return max_episodes, True


@dataclass(frozen=True)
class MazeComparison:
    psrl: GoalSearch
    epsilon: GoalSearch

    @property
    def median_ratio(self) -> float:
        return self.epsilon.median / self.psrl.median


def maze_comparison(rows=DEFAULT_MAZE, n_hypotheses: int = 16, epsilon: float = 0.2, seeds=range(200),
                    horizon: int | None = 6, max_episodes: int = 100_000) -> MazeComparison:
    seeds = list(seeds)
    psrl = np.array([psrl_episodes_to_goal(rows, n_hypotheses, s, horizon) for s in seeds])
    eps = [epsilon_episodes_to_goal(rows, epsilon, s, horizon, max_episodes) for s in seeds]
    return MazeComparison(
        GoalSearch(psrl, np.zeros(len(seeds), dtype=bool)),
        GoalSearch(np.array([e for e, _ in eps]), np.array([c for _, c in eps])),
    )


def episodes_to_first_optimal(config: RunConfig, seed: int, max_episodes: int = 2000, tol: float = 1e-9) -> tuple[int, bool]:
    """First episode whose starting greedy policy is optimal; ``(cap, True)`` if never."""
    bundle = build_environment(config.env)
    mdp = bundle[0]
    agent = make_agent(config, bundle, make_stream(seed, "agent"))
    env_rng = make_stream(seed, "environment")
    v_star = float(mdp.initial_dist @ optimal_q(mdp).V[0])
    for episode in range(1, max_episodes + 1):
        agent.begin_episode()
        if policy_value(mdp, agent.greedy_policy()) >= v_star - tol:
            return episode, False
        x = mdp.reset(env_rng)
        for h in range(mdp.horizon):
            a = agent.act(x, h)
            x_next, r = mdp.step(h, x, a, env_rng)
            agent.observe(Transition(x, a, r, x_next, h, h == mdp.horizon - 1))
            x = x_next
        agent.end_episode()
    return max_episodes, True


def first_optimal_search(env: EnvSpec, agent: AgentSpec, seeds, max_episodes: int = 2000) -> GoalSearch:
    cfg = RunConfig(env=env, agent=agent, episodes=max_episodes, seeds=list(seeds))
    runs = [episodes_to_first_optimal(cfg, s, max_episodes) for s in seeds]
    return GoalSearch(np.array([e for e, _ in runs]), np.array([c for _, c in runs]))


@dataclass(frozen=True)
class ScheduleRun:
    steps: int
    rebuilds: int
    draws: int
    target_syncs: int
    action_digest: str


def bdqn_schedule_run(steps: int = 100_000, seed: int = 0, target_period: int = 100, sample_period: int = 10,
                      rebuild_period: int = 1000, batch_size: int = 1000, env: EnvSpec | None = None) -> ScheduleRun:
    """Drive BDQN-lite for a fixed number of steps and count schedule events."""
    env = env if env is not None else EnvSpec(kind="chain", n=8, H=7, slip_prob=0.1)
    mdp = build_environment(env)[0]
    agent = BdqnLiteAgent(
        state_one_hot(mdp.n_states, mdp.horizon), mdp.n_actions, make_stream(seed, "agent"),
        gamma=mdp.gamma, target_period=target_period, sample_period=sample_period,
        rebuild_period=rebuild_period, batch_size=batch_size,
    )
    env_rng = make_stream(seed, "environment")
    actions = np.empty(steps, dtype=np.int8)
    t = 0
    while t < steps:
        agent.begin_episode()
        x = mdp.reset(env_rng)
        for h in range(mdp.horizon):
            if t == steps:
                break
            a = agent.act(x, h)
            actions[t] = a
            x_next, r = mdp.step(h, x, a, env_rng)
            agent.observe(Transition(x, a, r, x_next, h, h == mdp.horizon - 1))
            x = x_next
            t += 1
        agent.end_episode()
    digest = hashlib.sha256(actions.tobytes() + agent.target_weights.tobytes()).hexdigest()
    return ScheduleRun(steps, agent.rebuilds, agent.draws, agent.target_syncs, digest)
