"""Monte-Carlo and exact checks of the concentration lemmas behind the agents.

Coverage reports pass when the failure count ``k`` over ``N`` trials stays
within the binomial three-sigma band ``k <= delta N + 3 sqrt(delta (1 - delta) N)``.
Exact inequalities use ``delta = 0``, so a single violation fails them.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .env import EnvSpec, build_environment, noise_sigma, optimal_q
from .estimator import confidence_radius
from .rng import make_stream


def binomial_threshold(trials: int, delta: float) -> float:
    return delta * trials + 3.0 * math.sqrt(delta * (1.0 - delta) * trials)


@dataclass
class LemmaReport:
    lemma: str
    trials: int
    failures: int
    delta: float
    details: dict = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        return binomial_threshold(self.trials, self.delta)

    @property
    def passed(self) -> bool:
        return self.failures <= self.threshold

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(threshold=self.threshold, verdict=self.verdict)
        return out

    def summary(self) -> str:
        return f"{self.lemma}: {self.verdict} ({self.failures}/{self.trials} failures, threshold {self.threshold:.1f})"


# -- self-normalized bound ---------------------------------------------------------


def self_normalized_bound(logdet: np.ndarray, d: int, sigma: float, lam: float, delta: float) -> np.ndarray:
    """``2 sigma^2 log(det(gram)^{1/2} det(lam I)^{-1/2} / delta)``."""
    return 2.0 * sigma**2 * (0.5 * (logdet - d * math.log(lam)) + math.log(1.0 / delta))


def verify_self_normalized(d: int = 3, T: int = 500, sigma: float = 1.0, lam: float = 1.0, delta: float = 0.05,
                           N: int = 2000, seed: int = 0) -> LemmaReport:
    """Check ``||S_T||^2_{gram^{-1}}`` against the self-normalized bound at a fixed ``T``.

    Features depend on the running sum ``S`` (so they are adapted to the
    past); noise is uniform on ``[-sigma, sigma]``, which is sigma-sub-Gaussian.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    directions = np.empty((N, T, d))
    noise = np.empty((N, T))
    for i in range(N):
        rng = make_stream(seed, "self-normalized", i)
        directions[i] = rng.standard_normal((T, d))
        noise[i] = rng.uniform(-sigma, sigma, size=T)
    stat, logdet = kernels.self_normalized_trials(directions, noise, float(lam))
    bound = self_normalized_bound(logdet, d, sigma, lam, delta)
    failures = int(np.sum(stat > bound))
    return LemmaReport("self_normalized", N, failures, delta, {
        "d": d, "T": T, "sigma": sigma, "lam": lam, "seed": seed,
        "max_ratio": float(np.max(stat / np.maximum(bound, 1e-300))) if N else 0.0,
    })


# -- confidence intervals ------------------------------------------------------------


def collect_uniform_data(mdp, T: int, N: int, seed: int):
    """Uniform-random behaviour for ``T`` episodes in each of ``N`` trials.

    Returns states ``(N, T, H + 1)``, actions ``(N, T, H)`` and noisy rewards ``(N, T, H)``.
    """
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    cum_p = np.cumsum(mdp.transitions, axis=-1)
    cum_init = np.cumsum(mdp.initial_dist)
    X = np.empty((N, T, H + 1), dtype=np.int64)
    acts = np.empty((N, T, H), dtype=np.int64)
    rewards = np.empty((N, T, H))
    for i in range(N):
        rng = make_stream(seed, "confidence", i)
        a = rng.integers(A, size=(T, H))
        u0 = rng.random(T)
        u = rng.random((T, H))
        nu = rng.uniform(-mdp.noise_bound, mdp.noise_bound, size=(T, H)) if mdp.noise_bound > 0 else np.zeros((T, H))
        x = np.minimum(np.searchsorted(cum_init, u0 * cum_init[-1], side="right"), S - 1)
        X[i, :, 0] = x
        for h in range(H):
            rewards[i, :, h] = mdp.reward_mean[h, x, a[:, h]] + nu[:, h]
            c = cum_p[h, x, a[:, h]]  # (T, S)
            x = np.minimum(np.sum(c <= (u[:, h] * c[:, -1])[:, None], axis=1), S - 1)
            X[i, :, h + 1] = x
        acts[i] = a
    return X, acts, rewards


def verify_confidence_lemma(env: EnvSpec, delta: float = 0.1, T: int = 200, N: int = 1000, seed: int = 0,
                            lam: float = 1.0, sigma: float | None = None, bias_factor: float = 1.0) -> LemmaReport:
    """Simultaneous-in-``h`` ellipsoid coverage of the true per-step weights.

    Data come from a uniform-random behaviour policy.  Steps are fitted from
    the last backwards on observable targets ``r + gamma * max_a LCB`` built
    from the already fitted next step, with radii from the backward recursion
    and the empirical rho of the optimal policy.  A trial fails if any step's
    ``||w_hat - w*||_gram`` exceeds its radius.

    ``bias_factor`` scales the ``theta^{h+1} rho^{h+1}`` term of the
    recursion; 1 is the recursion as stated.
    """
    mdp, features, realization = build_environment(env)
    values = optimal_q(mdp)
    pi_star = values.greedy_policy()
    sigma = noise_sigma(mdp, values) if sigma is None else float(sigma)
    H, S = mdp.horizon, mdp.n_states
    table = features.table
    d = features.dim
    X, acts, rewards = collect_uniform_data(mdp, T, N, seed)
    fail = np.zeros(N, dtype=bool)
    worst = np.zeros(N)
    theta_next = np.zeros(N)
    rho_next = np.zeros(N)
    next_lcb = np.zeros((N, T))
    eye = np.eye(d)
    for h in range(H - 1, -1, -1):
        phi = table[h, X[:, :, h], acts[:, :, h]]  # (N, T, d)
        y = rewards[:, :, h] + (mdp.gamma * next_lcb if h < H - 1 else 0.0)
        gram = lam * eye + np.einsum("ntd,nte->nde", phi, phi)
        inv = np.linalg.inv(gram)
        w = np.einsum("nde,ne->nd", inv, np.einsum("ntd,nt->nd", phi, y))
        err = w - realization.weights[h]
        dist = np.sqrt(np.einsum("nd,nde,ne->n", err, gram, err))
        base = confidence_radius(T, delta, d, sigma, lam, features.norm_bound, realization.weight_bound, horizon=H)
        theta = base + bias_factor * theta_next * rho_next
        fail |= dist > theta
        worst = np.maximum(worst, dist / theta)
        # quantities consumed by step h - 1
        rows = table[h][X[:, :, h]]  # (N, T, A, d)
        widths = np.sqrt(np.einsum("ntad,nde,ntae->nta", rows, inv, rows))
        next_lcb = np.max(np.einsum("ntad,nd->nta", rows, w) - theta[:, None, None] * widths, axis=-1)
        opt_rows = table[h, np.arange(S), pi_star[h]]  # (S, d)
        opt_sq = np.einsum("sd,nde,se->ns", opt_rows, inv, opt_rows)
        visits = np.stack([np.bincount(X[n, :, h], minlength=S) for n in range(N)])
        rho_next = np.sqrt(np.sum(visits * opt_sq, axis=1))
        theta_next = theta
    return LemmaReport("confidence", N, int(fail.sum()), delta, {
        "environment": env.to_dict(), "T": T, "lam": lam, "sigma": sigma, "seed": seed, "bias_factor": bias_factor,
        "max_ratio": float(worst.max()) if N else 0.0,
    })


# -- determinant lemma -------------------------------------------------------------------


def random_trajectories(N: int, T: int, d: int, seed: int = 0, L: float = 1.0) -> np.ndarray:
    """Features with random directions and norms uniform on ``(0, L]``."""
    out = np.empty((N, T, d))
    for i in range(N):
        rng = make_stream(seed, "determinant", i)
        v = rng.standard_normal((T, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        out[i] = v * (L * (1.0 - rng.random((T, 1))))
    return out


def verify_determinant_lemma(features, lam: float = 1.0, L: float = 1.0) -> LemmaReport:
    """Exact check of ``sum_t log(1 + ||phi_t||^2) <= d log(lam + T L^2 / d)`` per trajectory.

    ``features`` is ``(N, T, d)``.  The right-hand side is only an upper bound
    for ``lam >= 1``, so smaller values are rejected.
    """
    features = np.ascontiguousarray(features, dtype=float)
    if features.ndim != 3:
        raise ValueError("features must have shape (trials, T, d)")
    if lam < 1.0:
        raise ValueError("the bound d log(lam + T L^2 / d) needs lam >= 1")
    N, T, d = features.shape
    if np.any(np.linalg.norm(features, axis=2) > L * (1 + 1e-12)):
        raise ValueError("feature norms exceed L")
    rhs = d * math.log(lam + T * L * L / d)
    lhs = kernels.determinant_lemma_lhs(features, float(lam)) if T else np.zeros(N)
    violations = int(np.sum(lhs > rhs))
    return LemmaReport("determinant", N, violations, 0.0, {
        "T": T, "d": d, "lam": lam, "L": L, "rhs": rhs, "max_lhs": float(lhs.max()) if N else 0.0,
    })


# -- sub-Gaussian noise ------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded noise: ``uniform`` on ``[-bound, bound]``, ``rademacher`` at ``+-bound`` or ``zero``."""

    kind: str = "uniform"
    bound: float = 1.0
    sigma: float = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-self.bound, self.bound, size=n)
        if self.kind == "rademacher":
            return self.bound * rng.choice((-1.0, 1.0), size=n)
        if self.kind == "zero":
            return np.zeros(n)
        raise ValueError(f"unknown noise kind {self.kind!r}")


def verify_subgaussian_assumption(noise: NoiseSpec, alphas=(-3.0, -1.0, -0.1, 0.1, 1.0, 3.0), N: int = 1_000_000,
                                  seed: int = 0, phi: float = 1.0) -> LemmaReport:
    """Empirical ``E exp(a phi nu / sigma - (a phi)^2 / 2) <= 1 + 5 SE`` for each ``a``."""
    nu = noise.sample(make_stream(seed, "subgaussian"), N)
    rows = []
    bad = 0
    for a in alphas:
        z = np.exp(a * phi * nu / noise.sigma - (a * phi) ** 2 / 2.0)
        mean, se = float(z.mean()), float(z.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
        ok = mean <= 1.0 + 5.0 * se
        bad += not ok
        rows.append({"alpha": a, "mean": mean, "se": se, "ok": ok})
    return LemmaReport("subgaussian", len(rows), bad, 0.0, {"noise": asdict(noise), "N": N, "seed": seed, "grid": rows})


# -- suite -----------------------------------------------------------------------------------


def run_suite(seed: int = 0, quick: bool = False) -> list[LemmaReport]:
    """All checks at their default sizes (``quick`` shrinks the trial counts)."""
    scale = 10 if quick else 1
    conf_env = EnvSpec(kind="random", n_states=3, n_actions=2, H=3, noise_bound=0.1, seed=seed)
    return [
        verify_self_normalized(N=2000 // scale, seed=seed),
        verify_confidence_lemma(conf_env, N=1000 // scale, seed=seed),
        verify_determinant_lemma(random_trajectories(1000 // scale, 1000, 4, seed=seed)),
        verify_subgaussian_assumption(NoiseSpec("uniform", 1.0, 1.0), N=1_000_000 // scale, seed=seed),
    ]


def write_report(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"reports": [r.to_dict() for r in reports], "all_passed": all(r.passed for r in reports)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    return path
