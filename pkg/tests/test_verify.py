import json
import math

import numpy as np
import pytest

from linexplore import kernels
from linexplore.env import EnvSpec
from linexplore.verify import (
    LemmaReport,
    NoiseSpec,
    binomial_threshold,
    random_trajectories,
    self_normalized_bound,
    verify_confidence_lemma,
    verify_determinant_lemma,
    verify_self_normalized,
    verify_subgaussian_assumption,
    write_report,
)


@pytest.mark.parametrize("k,N,delta", [(0, 10, 0.1), (5, 2000, 0.05), (131, 2000, 0.05), (132, 2000, 0.05), (1, 50, 0.0)])
def test_pass_rule(k, N, delta):
    report = LemmaReport("x", N, k, delta)
    assert report.passed == (k <= delta * N + 3 * math.sqrt(delta * (1 - delta) * N))
    assert report.threshold == binomial_threshold(N, delta)


def test_noiseless_self_normalized_has_no_failures():
    report = verify_self_normalized(sigma=0.0, N=50, T=50)
    assert report.failures == 0 and report.passed


@pytest.mark.parametrize("sign", [1.0, -1.0])
@pytest.mark.parametrize("sigma,lam,delta", [(1.0, 1.0, 0.05), (0.3, 2.0, 0.2)])
def test_scalar_single_step_closed_form(sign, sigma, lam, delta):
    stat, logdet = kernels.self_normalized_trials(np.ones((1, 1, 1)), np.array([[sign * sigma]]), lam)
    assert stat[0] == pytest.approx(sigma**2 / (lam + 1), rel=1e-12)
    assert logdet[0] == pytest.approx(math.log(lam + 1), rel=1e-12)
    bound = self_normalized_bound(logdet, 1, sigma, lam, delta)[0]
    assert bound == pytest.approx(2 * sigma**2 * (0.5 * math.log((lam + 1) / lam) + math.log(1 / delta)), rel=1e-12)
    assert stat[0] <= bound


def test_self_normalized_default_size():
    report = verify_self_normalized(d=3, T=500, delta=0.05, N=2000, seed=0)
    assert report.passed, report.summary()


def test_self_normalized_is_reproducible():
    a, b = verify_self_normalized(N=40, T=60, seed=5), verify_self_normalized(N=40, T=60, seed=5)
    assert a.to_dict() == b.to_dict()


def test_confidence_zero_noise():
    report = verify_confidence_lemma(EnvSpec(kind="chain", n=4, H=3), N=20, T=100)
    assert report.failures == 0


@pytest.mark.parametrize("H", [1, 2])
def test_confidence_zero_noise_short_horizons(H):
    report = verify_confidence_lemma(EnvSpec(kind="chain", n=4, H=H), N=20, T=100)
    assert report.failures == 0


def test_confidence_single_step_passes():
    env = EnvSpec(kind="random", n_states=3, n_actions=2, H=1, noise_bound=0.1, seed=0)
    report = verify_confidence_lemma(env, delta=0.1, T=200, N=400)
    assert report.passed, report.summary()


def test_confidence_with_doubled_propagation_passes():
    # Two radius-theta sets around the same centre are 2 theta apart at worst;
    # with that slack the multi-step check covers at the nominal rate.
    env = EnvSpec(kind="random", n_states=3, n_actions=2, H=3, noise_bound=0.1, seed=0)
    report = verify_confidence_lemma(env, delta=0.1, T=200, N=300, bias_factor=2.0)
    assert report.passed, report.summary()


def test_determinant_trivial_and_adversarial():
    report = verify_determinant_lemma(np.zeros((3, 0, 2)), lam=2.0)
    assert report.failures == 0 and report.details["rhs"] == pytest.approx(2 * math.log(2.0))
    repeated = np.tile([1.0, 0.0, 0.0], (1, 2000, 1))
    report = verify_determinant_lemma(repeated)
    assert report.failures == 0
    assert report.details["max_lhs"] == pytest.approx(math.log(2001.0), rel=1e-9)


def test_determinant_random_trajectories():
    report = verify_determinant_lemma(random_trajectories(1000, 200, 4, seed=0))
    assert report.failures == 0 and report.delta == 0.0


def test_determinant_rejects_invalid_input():
    with pytest.raises(ValueError):
        verify_determinant_lemma(np.ones((1, 3, 2)), lam=0.5)
    with pytest.raises(ValueError):
        verify_determinant_lemma(np.full((1, 3, 2), 2.0))
    with pytest.raises(ValueError):
        verify_determinant_lemma(np.ones((3, 2)))


def test_subgaussian_zero_noise_is_exact():
    report = verify_subgaussian_assumption(NoiseSpec("zero"), N=1000)
    assert report.failures == 0
    for row in report.details["grid"]:
        assert row["mean"] == pytest.approx(math.exp(-row["alpha"] ** 2 / 2))


def test_subgaussian_rademacher_and_uniform():
    assert verify_subgaussian_assumption(NoiseSpec("rademacher", 0.5, 0.5), N=100_000).passed
    assert verify_subgaussian_assumption(NoiseSpec("uniform", 1.0, 1.0), N=1_000_000).passed


def test_subgaussian_detects_understated_sigma():
    report = verify_subgaussian_assumption(NoiseSpec("rademacher", 1.0, 0.2), N=100_000)
    assert not report.passed


def test_report_file(tmp_path):
    reports = [verify_determinant_lemma(random_trajectories(5, 10, 2)), LemmaReport("x", 10, 9, 0.1)]
    doc = json.loads(write_report(reports, tmp_path / "r.json").read_text())
    assert [r["verdict"] for r in doc["reports"]] == ["pass", "fail"]
    assert doc["all_passed"] is False
