"""Acceptance criteria, one test each.

Every test records a single ``PASS``/``FAIL`` line (shown in the terminal
summary) and then asserts at the stated tolerance.
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from linexplore.env import EnvSpec
from linexplore.estimator import RidgeState, bar_rho, blr_posterior
from linexplore.experiments import (
    bdqn_schedule_run,
    first_optimal_search,
    maze_comparison,
)
from linexplore.harness import AgentSpec, RunConfig, run_single, sublinearity_diagnostic
from linexplore.rng import make_stream
from linexplore.verify import (
    random_trajectories,
    verify_confidence_lemma,
    verify_determinant_lemma,
    verify_self_normalized,
)


def record(n: int, ok: bool, text: str, elapsed: float, limit: float) -> None:
    ok = ok and elapsed < limit
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}  ({elapsed:.1f}s, limit {limit:.0f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_01_blr_matches_dense_oracle():
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = make_stream(i, "acceptance-blr")
        d, n = int(rng.integers(1, 9)), int(rng.integers(0, 201))
        sigma, sigma_eps = rng.uniform(0.2, 3.0, size=2)
        Phi, y = rng.standard_normal((n, d)), rng.standard_normal(n)
        post = blr_posterior(Phi, y, sigma, sigma_eps, dim=d)
        cov = np.linalg.inv(Phi.T @ Phi / sigma_eps**2 + np.eye(d) / sigma**2)
        mean = cov @ Phi.T @ y / sigma_eps**2
        worst = max(worst, _rel(post.cov, cov), _rel(post.mean, mean) if n else float(np.abs(post.mean).max()))
    record(1, worst <= 1e-10, f"BLR vs dense oracle, worst relative error {worst:.1e}", time.perf_counter() - start, 5)


def test_02_ridge_incremental_equals_batch():
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = make_stream(i, "acceptance-ridge")
        d, n = int(rng.integers(1, 9)), int(rng.integers(1, 201))
        lam = float(rng.uniform(0.1, 5.0))
        X, y = rng.standard_normal((n, d)), rng.standard_normal(n)
        inc = RidgeState(d, lam)
        cut = int(rng.integers(0, n + 1))
        for row, t in zip(X[:cut], y[:cut]):
            inc.update(row, t)
        inc.update_batch(X[cut:], y[cut:])
        for row, t in zip(X[cut:], y[cut:]):
            inc.update(row, t)
        both = np.vstack([X, X[cut:]]), np.concatenate([y, y[cut:]])
        direct = np.linalg.solve(lam * np.eye(d) + both[0].T @ both[0], both[0].T @ both[1])
        worst = max(worst, float(np.max(np.abs(inc.estimate() - direct))))
    record(2, worst <= 1e-9, f"interleaved ridge vs batch solve, max abs diff {worst:.1e}", time.perf_counter() - start, 5)


def test_03_determinant_inequality():
    start = time.perf_counter()
    report = verify_determinant_lemma(random_trajectories(1000, 1000, 4, seed=0), lam=1.0)
    record(3, report.failures == 0, f"determinant inequality, {report.failures}/1000 violations", time.perf_counter() - start, 10)


def test_04_self_normalized_coverage():
    start = time.perf_counter()
    report = verify_self_normalized(d=3, T=500, delta=0.05, N=2000, seed=0)
    record(4, report.passed, f"self-normalized bound, {report.failures}/2000 failures (threshold {report.threshold:.1f})",
           time.perf_counter() - start, 60)


def test_05_confidence_interval_coverage():
    start = time.perf_counter()
    env = EnvSpec(kind="random", n_states=3, n_actions=2, H=3, noise_bound=0.1, seed=0)
    report = verify_confidence_lemma(env, delta=0.1, T=200, N=1000, seed=0)
    record(5, report.passed, f"H=3 simultaneous coverage, {report.failures}/1000 failures (threshold {report.threshold:.1f}, "
           f"worst distance/radius {report.details['max_ratio']:.2f})", time.perf_counter() - start, 300)


CHAIN = EnvSpec(kind="chain", n=5, H=4, slip_prob=0.1, noise_bound=0.1)
REGRET_SEEDS = (0, 1, 2)


def _pooled_fit(agent: AgentSpec):
    start = time.perf_counter()
    cfg = RunConfig(env=CHAIN, agent=agent, episodes=10_000, seeds=list(REGRET_SEEDS))
    regret = np.mean([run_single(cfg, s).regret for s in REGRET_SEEDS], axis=0)
    return sublinearity_diagnostic(regret), time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["linucb", "linpsrl"])
def test_06_sublinear_regret_confidence_agents(kind):
    fit, elapsed = _pooled_fit(AgentSpec(kind))
    record(6, fit.alpha < 0.85 and fit.r2 > 0.9, f"{kind} alpha {fit.alpha:.3f}, R^2 {fit.r2:.3f}", elapsed, 600)


@pytest.mark.slow
def test_06_epsilon_greedy_regret_is_linear():
    fit, elapsed = _pooled_fit(AgentSpec("epsilon_greedy", {"epsilon": 0.1}))
    record(6, fit.alpha > 0.95, f"epsilon_greedy alpha {fit.alpha:.3f}, R^2 {fit.r2:.3f}", elapsed, 600)


@pytest.mark.slow
def test_07_maze_exploration_separation():
    start = time.perf_counter()
    res = maze_comparison(n_hypotheses=16, epsilon=0.2, seeds=range(200), horizon=6)
    within = int(np.sum(res.psrl.episodes <= 16))
    ok = within == 200 and res.epsilon.median >= 5 * res.psrl.median
    record(7, ok, f"PSRL within K in {within}/200 runs (median {res.psrl.median}); epsilon-greedy median "
           f"{res.epsilon.median:.0f} ({int(res.epsilon.censored.sum())} censored), ratio {res.median_ratio:.0f}",
           time.perf_counter() - start, 120)


@pytest.mark.slow
def test_08_bdqn_reaches_optimal_policy_sooner():
    start = time.perf_counter()
    env = EnvSpec(kind="chain", n=8, H=7, slip_prob=0.1)
    seeds = range(20)
    bdqn = first_optimal_search(env, AgentSpec("bdqn", {"sigma": 1.0, "target_period": 10, "batch_size": 3000}), seeds)
    eps = first_optimal_search(env, AgentSpec("epsilon_greedy", {"epsilon": 0.1}), seeds)
    ratio = bdqn.median / eps.median
    ok = bdqn.median < eps.median and ratio <= 0.7
    record(8, ok, f"median episodes to optimal: bdqn {bdqn.median} ({int(bdqn.censored.sum())} censored), "
           f"epsilon-greedy {eps.median} ({int(eps.censored.sum())} censored), ratio {ratio:.2f}",
           time.perf_counter() - start, 600)


def test_09_schedule_counts_and_reproducibility():
    start = time.perf_counter()
    a = bdqn_schedule_run(steps=100_000, seed=0, target_period=100, sample_period=10, rebuild_period=1000, batch_size=1000)
    b = bdqn_schedule_run(steps=100_000, seed=0, target_period=100, sample_period=10, rebuild_period=1000, batch_size=1000)
    ok = (a.rebuilds, a.draws, a.target_syncs) == (100, 10_000, 1000) and a.action_digest == b.action_digest
    record(9, ok, f"{a.rebuilds} rebuilds, {a.draws} draws, {a.target_syncs} syncs, reproducible {a.action_digest == b.action_digest}",
           (time.perf_counter() - start) / 2, 60)


def test_10_bar_rho_values_and_monotonicity():
    start = time.perf_counter()
    ok = bar_rho([0.0], 1.0, 1) == 1.0 and bar_rho([1.0, 1.0], 1.0, 2) == 5.0
    rng = make_stream(0, "acceptance-bar-rho")
    for _ in range(200):
        H = int(rng.integers(1, 6))
        gamma = float(rng.uniform(0, 1))
        rhos = rng.uniform(0, 3, size=H)
        base = bar_rho(rhos, gamma, H)
        for i in range(H):
            bumped = rhos.copy()
            bumped[i] += float(rng.uniform(0, 1))
            ok &= bar_rho(bumped, gamma, H) >= base - 1e-12 * max(1.0, base)
    record(10, bool(ok), "hand values 1 and 5, monotone over 200 random grids", time.perf_counter() - start, 1)
