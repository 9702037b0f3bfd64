import math

import numpy as np
import pytest
from scipy import stats

from linexplore.agents import (
    BdqnLiteAgent,
    EpsilonGreedyAgent,
    HypothesisSetPsrl,
    LinPsrlAgent,
    LinUcbAgent,
    ReplayBuffer,
    Transition,
    bdqn_step,
    boltzmann_action,
    build_target,
    epsilon_greedy_action,
    hypothesis_psrl_episode,
    linpsrl_begin_episode,
    linucb_action,
    maze_hypothesis_set,
    pessimistic_next_value,
    state_one_hot,
)
from linexplore.env import (
    FeatureMap,
    make_chain_mdp,
    make_maze_mdp,
    optimal_q,
    tabular_one_hot,
)
from linexplore.estimator import GaussianPosterior, RidgeState
from linexplore.experiments import DEFAULT_MAZE
from linexplore.rng import make_stream


def _hand_agent(theta=0.5, A=2):
    """Two-step agent with one state; statistics set by hand."""
    rng = make_stream(0, "hand")
    table = rng.standard_normal((2, 1, A, 3))
    agent = LinUcbAgent(FeatureMap(table, 1.0), rng, rho=0.0)
    gram = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 3.0]])
    for h in range(2):
        s = RidgeState(3)
        s.gram, s.inv = gram.copy(), np.linalg.inv(gram)
        agent.states[h] = s
    agent.weights = np.array([[0.4, -0.2, 0.9], [0.1, 0.7, -0.3]])
    agent.thetas = np.array([theta, theta])
    return agent, table, np.linalg.inv(gram)


def _dense_bounds(table, w, inv, theta, h, sign):
    return [table[h, 0, a] @ w[h] + sign * theta * math.sqrt(table[h, 0, a] @ inv @ table[h, 0, a]) for a in range(table.shape[2])]


# -- LinUCB -----------------------------------------------------------------------------------


def test_linucb_zero_radius_is_greedy():
    agent, table, _ = _hand_agent(theta=0.0)
    for h in range(2):
        assert linucb_action(agent, 0, h) == int(np.argmax(table[h, 0] @ agent.weights[h]))


def test_linucb_single_action():
    agent, _, _ = _hand_agent(A=1)
    assert linucb_action(agent, 0, 0) == 0


@pytest.mark.parametrize("theta", [0.1, 0.5, 3.0])
def test_linucb_matches_dense_oracle(theta):
    agent, table, inv = _hand_agent(theta)
    for h in range(2):
        ucb = _dense_bounds(table, agent.weights, inv, theta, h, +1)
        np.testing.assert_allclose(agent.upper_bounds(h, 0), ucb, rtol=1e-12)
        assert linucb_action(agent, 0, h) == int(np.argmax(ucb))


def test_linucb_ties_go_to_lowest_index():
    table = np.zeros((1, 1, 3, 2))
    agent = LinUcbAgent(FeatureMap(table + [1.0, 0.0], 1.0), make_stream(0, "t"), rho=0.0)
    assert linucb_action(agent, 0, 0) == 0


@pytest.mark.parametrize("scale", [1e-6, 0.5, 7.0, 1e6])
def test_argmax_invariant_to_positive_scaling(scale):
    agent, _, _ = _hand_agent(theta=0.8)
    for h in range(2):
        ucb = agent.upper_bounds(h, 0)
        assert int(np.argmax(scale * ucb)) == linucb_action(agent, 0, h)


# -- pessimistic values and targets -----------------------------------------------------------------


def test_pessimistic_value_cases():
    agent, table, inv = _hand_agent(theta=0.0)
    assert pessimistic_next_value(agent, 0, 1) == pytest.approx(float(np.max(table[1, 0] @ agent.weights[1])))
    assert pessimistic_next_value(agent, 0, 2) == 0.0
    agent, table, inv = _hand_agent(theta=0.7)
    assert pessimistic_next_value(agent, 0, 1) == pytest.approx(max(_dense_bounds(table, agent.weights, inv, 0.7, 1, -1)), rel=1e-12)


def test_build_target_cases():
    agent, table, inv = _hand_agent(theta=0.7)
    assert build_target(Transition(0, 1, 0.3, 0, 1, True), agent, 1.0) == 0.3
    assert build_target(Transition(0, 1, 0.3, 0, 0, False), agent, 0.0) == 0.3
    lcb = max(_dense_bounds(table, agent.weights, inv, 0.7, 1, -1))
    assert build_target(Transition(0, 1, 0.3, 0, 0, False), agent, 0.9) == pytest.approx(0.3 + 0.9 * lcb, rel=1e-12)


def test_target_mode_validation():
    feats = tabular_one_hot(2, 2, 2)
    with pytest.raises(ValueError):
        LinUcbAgent(feats, make_stream(0, "t"), rho=0.0, targets="sampled")
    with pytest.raises(ValueError):
        LinUcbAgent(feats, make_stream(0, "t"), rho=0.0, targets="optimistic")
    with pytest.raises(ValueError):
        LinUcbAgent(feats, make_stream(0, "t"))  # empirical rho without the optimal policy


def test_optimism_when_sets_cover_truth():
    mdp, feats, real = make_chain_mdp(5, 4, slip_prob=0.1, noise_bound=0.1)
    values = optimal_q(mdp)
    pi = values.greedy_policy()
    agent = LinUcbAgent(feats, make_stream(3, "agent"), sigma=0.1, weight_bound=real.weight_bound,
                        optimal_policy=pi, gamma=mdp.gamma)
    env_rng = make_stream(3, "environment")
    checked = 0
    for _ in range(150):
        agent.begin_episode()
        for h in range(mdp.horizon):
            s = agent.states[h]
            diff = agent.weights[h] - real.weights[h]
            if math.sqrt(diff @ s.gram @ diff) <= agent.thetas[h]:
                for x in range(mdp.n_states):
                    truth = feats.table[h, x, pi[h, x]] @ real.weights[h]
                    assert agent.upper_bounds(h, x).max() >= truth - 1e-12
                    checked += 1
        x = mdp.reset(env_rng)
        for h in range(mdp.horizon):
            a = agent.act(x, h)
            xn, r = mdp.step(h, x, a, env_rng)
            agent.observe(Transition(x, a, r, xn, h, h == mdp.horizon - 1))
            x = xn
        agent.end_episode()
    assert checked > 0


# -- LinPSRL ------------------------------------------------------------------------------------------


def _psrl(seed=0):
    _mdp, feats, _ = make_chain_mdp(3, 2)
    return LinPsrlAgent(feats, make_stream(seed, "agent"), rho=1.0, prior_var=1.0, sigma=0.5)


def test_linpsrl_zero_covariance_gives_means(monkeypatch):
    agent = _psrl()
    agent.weights = make_stream(1, "w").standard_normal(agent.weights.shape)
    monkeypatch.setattr(agent, "posterior", lambda h: GaussianPosterior(agent.weights[h], np.zeros((agent.d, agent.d))))
    np.testing.assert_array_equal(linpsrl_begin_episode(agent), agent.weights)
    agent.begin_episode()
    np.testing.assert_array_equal(agent._policy, agent.greedy_policy())


def test_linpsrl_draws_are_seeded():
    np.testing.assert_array_equal(linpsrl_begin_episode(_psrl(4)), linpsrl_begin_episode(_psrl(4)))


def test_linpsrl_samples_match_posterior():
    agent = _psrl()
    row0, row1 = agent.table[0, 0, 1], agent.table[0, 1, 0]
    agent.states[0].update(row0, 1.0)
    agent.states[0].update(row1, -0.5)
    post = agent.posterior(0)
    draws = np.array([linpsrl_begin_episode(agent)[0] for _ in range(10_000)])
    for i in range(agent.d):
        res = stats.kstest(draws[:, i], "norm", args=(post.mean[i], math.sqrt(post.cov[i, i])))
        assert res.pvalue > 1e-3


# -- BDQN-lite ------------------------------------------------------------------------------------------


def _bdqn(**kw):
    return BdqnLiteAgent(state_one_hot(3, 2), 2, make_stream(0, "agent"), **kw)


def test_bdqn_terminal_target_is_reward():
    agent = _bdqn(sigma=1.0, target_period=10, sample_period=1, rebuild_period=10**9, batch_size=500)
    agent.target_weights = np.full((2, agent.d), 5.0)
    agent.buffer.add(Transition(2, 1, 0.7, 0, 1, True))
    agent.rebuild()
    expected = GaussianPosterior(*_blr_one(agent.phi[1, 2], 0.7, 500, 1.0, 1.0))
    np.testing.assert_allclose(agent.posteriors[1].mean, expected.mean, rtol=1e-10)
    np.testing.assert_array_equal(agent.posteriors[0].mean, 0.0)


def _blr_one(phi, y, n, sigma, sigma_eps):
    prec = n * np.outer(phi, phi) / sigma_eps**2 + np.eye(phi.size) / sigma**2
    cov = np.linalg.inv(prec)
    return cov @ (n * phi * y) / sigma_eps**2, cov


def test_bdqn_nonterminal_target_uses_target_weights():
    agent = _bdqn(sigma=1.0, rebuild_period=10**9, batch_size=400)
    agent.weights = np.zeros((2, agent.d))
    agent.weights[1, 3 + 1] = 1.0  # action 1 looks best at (h=1, x=1)
    agent.target_weights = np.zeros((2, agent.d))
    agent.target_weights[1, 3 + 1] = 2.0
    agent.buffer.add(Transition(0, 0, 0.5, 1, 0, False))
    agent.rebuild()
    mean, _ = _blr_one(agent.phi[0, 0], 0.5 + 2.0, 400, 1.0, 1.0)
    np.testing.assert_allclose(agent.posteriors[0].mean, mean, rtol=1e-10)


def test_bdqn_prior_before_rebuild():
    agent = _bdqn(sigma=0.3)
    for p in agent.posteriors:
        np.testing.assert_array_equal(p.mean, 0.0)
        np.testing.assert_allclose(p.cov, 0.09 * np.eye(agent.d))


def test_bdqn_degenerate_sampling_is_greedy_on_mean():
    agent = _bdqn(sigma=1.0, sample_period=1)
    agent.target_weights = make_stream(2, "w").standard_normal((2, agent.d))
    agent.posteriors = [GaussianPosterior(np.zeros(agent.d), np.zeros((agent.d, agent.d)))] * 2
    for x in range(3):
        assert bdqn_step(agent, (x, 0)) == int(np.argmax(agent.target_weights @ agent.phi[0, x]))


def test_bdqn_tiny_run_reproducible():
    def run():
        agent = _bdqn(sigma=1.0, target_period=1, sample_period=1, rebuild_period=2, batch_size=4)
        out = []
        for x, h in [(0, 0), (1, 1), (2, 0)]:
            out.append(bdqn_step(agent, (x, h)))
            agent.observe(Transition(x, out[-1], 1.0, 1, h, h == 1))
        return out, agent.weights.copy()

    (a1, w1), (a2, w2) = run(), run()
    assert a1 == a2
    np.testing.assert_array_equal(w1, w2)


def test_bdqn_schedule_counts():
    agent = _bdqn(target_period=7, sample_period=3, rebuild_period=11, batch_size=5)
    for t in range(1000):
        agent.act(t % 3, t % 2)
        agent.observe(Transition(t % 3, 0, 0.0, 0, t % 2, t % 2 == 1))
    assert (agent.rebuilds, agent.draws, agent.target_syncs) == (1000 // 11, 1000 // 3, 1000 // 7)


def test_replay_uniformity():
    n, draws = 20, 100_000
    buf = ReplayBuffer(n)
    for i in range(n + 5):  # wraps around
        buf.add(Transition(i % 3, 0, float(i), 0, 0, False))
    assert len(buf) == n
    assert sorted(buf.r.tolist()) == [float(i) for i in range(5, n + 5)]
    freq = np.bincount(buf.sample_slots(draws, make_stream(0, "replay")), minlength=n) / draws
    p = 1 / n
    assert np.all(np.abs(freq - p) <= 5 * math.sqrt(p * (1 - p) / draws))


# -- dithering baselines ---------------------------------------------------------------------------


def test_epsilon_greedy_cases():
    rng = make_stream(0, "eps")
    assert epsilon_greedy_action([0.1, 0.9, 0.3], 0.0, rng) == 1
    assert epsilon_greedy_action([0.5, 0.5], 0.0, rng) == 0
    n, A = 100_000, 4
    freq = np.bincount([epsilon_greedy_action(np.arange(A), 1.0, rng) for _ in range(n)], minlength=A) / n
    assert np.all(np.abs(freq - 1 / A) <= 4 * math.sqrt(0.25 * 0.75 / n))
    with pytest.raises(ValueError):
        epsilon_greedy_action([0.0], 1.5, rng)


def test_boltzmann_cases():
    rng = make_stream(0, "boltz")
    n = 100_000
    p = math.e / (math.e + 1)
    hits = sum(boltzmann_action([1.0, 0.0], 1.0, rng) == 0 for _ in range(n)) / n
    assert abs(hits - p) <= 4 * math.sqrt(p * (1 - p) / n)
    freq = np.bincount([boltzmann_action([3.0, -2.0, 0.5], 1e9, rng) for _ in range(30_000)], minlength=3) / 30_000
    assert np.all(np.abs(freq - 1 / 3) <= 4 * math.sqrt(2 / 9 / 30_000))
    from linexplore.agents import boltzmann_probs

    np.testing.assert_array_equal(boltzmann_probs([2.0, 2.0, 2.0, 2.0], 0.3), 0.25)
    with pytest.raises(ValueError):
        boltzmann_action([1.0], 0.0, rng)


def test_epsilon_agent_stays_at_zero_before_first_reward():
    # The vectorised maze shortcut relies on this: no reward, no movement in the estimates.
    mdp, feats, _ = make_maze_mdp(DEFAULT_MAZE, horizon=6)
    agent = EpsilonGreedyAgent(feats, make_stream(0, "agent"), epsilon=0.2)
    env_rng = make_stream(0, "environment")
    for _ in range(300):
        agent.begin_episode()
        x, got = mdp.reset(env_rng), 0.0
        for h in range(mdp.horizon):
            a = agent.act(x, h)
            xn, r = mdp.step(h, x, a, env_rng)
            got += r
            agent.observe(Transition(x, a, r, xn, h, h == mdp.horizon - 1))
            x = xn
        if got > 0:
            break
        agent.end_episode()
        assert not np.any(agent.weights)
    assert not np.any(agent.greedy_policy())


# -- hypothesis-set PSRL ---------------------------------------------------------------------------


def test_hypothesis_set_of_one():
    mdp, _, _ = make_maze_mdp(DEFAULT_MAZE, horizon=6)
    q, truth = maze_hypothesis_set(DEFAULT_MAZE, 1, make_stream(0, "h"), horizon=6)
    agent = HypothesisSetPsrl(q, make_stream(0, "agent"))
    for _ in range(3):
        choice, ret, mass = hypothesis_psrl_episode(agent, mdp, make_stream(0, "environment"))
        assert (choice, ret, mass[0]) == (truth, 1.0, 1.0)


@pytest.mark.parametrize("seed", range(25))
def test_truth_found_within_K_and_eliminations_stick(seed):
    K = 16
    mdp, _, _ = make_maze_mdp(DEFAULT_MAZE, horizon=6)
    q, truth = maze_hypothesis_set(DEFAULT_MAZE, K, make_stream(seed, "h"), horizon=6)
    agent = HypothesisSetPsrl(q, make_stream(seed, "agent"))
    env_rng = make_stream(seed, "environment")
    dead: set[int] = set()
    for episode in range(1, K + 1):
        choice, ret, mass = hypothesis_psrl_episode(agent, mdp, env_rng)
        assert choice not in dead
        assert mass.sum() == pytest.approx(1.0)
        if choice != truth:
            assert mass[choice] == 0.0
        dead |= set(np.flatnonzero(mass == 0.0).tolist())
        assert all(mass[k] == 0.0 for k in dead)
        if ret > 0:
            assert choice == truth
            return
    pytest.fail("true hypothesis not reached within K episodes")


def test_contradicting_everything_raises():
    q = np.zeros((2, 1, 1, 1))
    agent = HypothesisSetPsrl(q, make_stream(0, "agent"))
    with pytest.raises(RuntimeError):
        agent.observe(Transition(0, 0, 1.0, 0, 0, True))
