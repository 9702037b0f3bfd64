"""Ridge statistics, confidence ellipsoids and the Gaussian BLR posterior.

The regularised gram matrix ``gram = lam * I + sum(phi phi^T)`` and moment
vector ``moment = sum(phi * target)`` are the sufficient statistic for
everything here: the ridge estimate, both matrix-weighted norms, the
ellipsoid radius and the Bayesian linear regression posterior.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels

SNAPSHOT_VERSION = 1
JITTER_BASE = 1e-10
JITTER_ESCALATIONS = 3


class CholeskyError(np.linalg.LinAlgError):
    pass


class RidgeState:
    """Incremental ridge regression statistics for one time step.

    The inverse of the gram matrix is kept up to date with Sherman-Morrison
    updates (used for weighted norms); estimates solve against the gram
    itself through a Cholesky factorisation.
    """

    def __init__(self, dim: int, lam: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.gram = lam * np.eye(dim)
        self.moment = np.zeros(dim)
        self.count = 0
        self.inv = np.eye(dim) / lam

    def copy(self) -> "RidgeState":
        out = RidgeState.__new__(RidgeState)
        out.dim, out.lam, out.count = self.dim, self.lam, self.count
        out.gram, out.moment, out.inv = self.gram.copy(), self.moment.copy(), self.inv.copy()
        return out

    def update(self, phi, target: float) -> "RidgeState":
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"feature must have shape ({self.dim},), got {phi.shape}")
        if not (np.all(np.isfinite(phi)) and math.isfinite(target)):
            raise ValueError("non-finite feature or target")
        self.gram += np.outer(phi, phi)
        self.moment += target * phi
        self.count += 1
        kernels.sherman_morrison(self.inv, phi)
        return self

    def update_batch(self, features, targets) -> "RidgeState":
        Phi = np.atleast_2d(np.asarray(features, dtype=float))
        y = np.asarray(targets, dtype=float).reshape(-1)
        if Phi.size == 0:
            return self
        if Phi.shape != (y.shape[0], self.dim):
            raise ValueError("features must be (n, dim) with one target per row")
        if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite feature or target")
        self.gram += Phi.T @ Phi
        self.moment += Phi.T @ y
        self.count += y.shape[0]
        self.refresh_inverse()
        return self

    def refresh_inverse(self) -> None:
        """Recompute the inverse from scratch (drops Sherman-Morrison drift)."""
        c = linalg.cho_factor(self.gram, lower=True)
        self.inv = linalg.cho_solve(c, np.eye(self.dim))
        self.inv = 0.5 * (self.inv + self.inv.T)

    def estimate(self) -> np.ndarray:
        c = linalg.cho_factor(self.gram, lower=True)
        return linalg.cho_solve(c, self.moment)

    def logdet(self) -> float:
        _sign, val = np.linalg.slogdet(self.gram)
        return float(val)

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ self.gram @ v), 0.0))

    def inv_norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ self.inv @ v), 0.0))

    def inv_norms(self, rows) -> np.ndarray:
        """``||row||_{gram^{-1}}`` for every row of ``rows`` (any leading shape)."""
        rows = np.asarray(rows, dtype=float)
        quad = np.einsum("...i,ij,...j->...", rows, self.inv, rows)
        return np.sqrt(np.maximum(quad, 0.0))


def ridge_update(state: RidgeState, phi, target: float) -> RidgeState:
    return state.update(phi, target)


def estimate_weights(state: RidgeState) -> np.ndarray:
    """Ridge estimate ``gram^{-1} moment``."""
    return state.estimate()


def weighted_norms(state: RidgeState, v) -> tuple[float, float]:
    """``(||v||_gram, ||v||_{gram^{-1}})``."""
    return state.norm(v), state.inv_norm(v)


def save_snapshot(state: RidgeState, path) -> None:
    """Write ``(gram, moment, count, lam)`` to a versioned ``.npz`` file."""
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.int64(SNAPSHOT_VERSION),
            gram=state.gram,
            moment=state.moment,
            count=np.int64(state.count),
            lam=np.float64(state.lam),
        )


def load_snapshot(path) -> RidgeState:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        gram = np.array(data["gram"])
        state = RidgeState(gram.shape[0], float(data["lam"]))
        state.gram = gram
        state.moment = np.array(data["moment"])
        state.count = int(data["count"])
    state.refresh_inverse()
    return state


# -- confidence sets --------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and positive, got {self.sigma}")


@dataclass(frozen=True)
class ConfidenceSet:
    """Ellipsoid ``{w : ||w - center||_shape <= radius}``."""

    center: np.ndarray
    shape: np.ndarray
    radius: float
    delta: float

    def distance(self, w) -> float:
        diff = np.asarray(w, dtype=float) - self.center
        return math.sqrt(max(float(diff @ self.shape @ diff), 0.0))

    def __contains__(self, w) -> bool:
        return self.distance(w) <= self.radius


def confidence_set(state: RidgeState, radius: float, delta: float) -> ConfidenceSet:
    return ConfidenceSet(state.estimate(), state.gram.copy(), float(radius), float(delta))


def confidence_radius(
    t: int,
    delta: float,
    d: int,
    sigma: float,
    lam: float,
    L: float,
    L_omega: float,
    theta_next: float = 0.0,
    rho_next: float = 0.0,
    horizon: int = 1,
) -> float:
    """Ellipsoid radius after ``t`` episodes for one step of the recursion.

    ``sigma * sqrt(2 log(H / delta) + d log(1 + t L^2 / lam)) + sqrt(lam) L_omega
    + theta_next * rho_next``; pass ``theta_next = rho_next = 0`` for the last step.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if theta_next < 0 or rho_next < 0:
        raise ValueError("theta_next and rho_next must be non-negative")
    inner = 2.0 * math.log(horizon / delta) + d * math.log1p(t * L * L / lam)
    return sigma * math.sqrt(max(inner, 0.0)) + math.sqrt(lam) * L_omega + theta_next * rho_next


def radius_recursion(
    t: int,
    delta: float,
    d: int,
    sigma: float,
    lam: float,
    L: float,
    L_omega: float,
    rhos,
) -> np.ndarray:
    """Radii for every step, evaluated from the last step backwards.

    ``rhos[h]`` is the rho bound of step ``h`` (0-based); the value for the
    step after the horizon is taken as zero.  Returns ``thetas`` with
    ``thetas[h] = base + thetas[h + 1] * rhos[h + 1]``.
    """
    rhos = np.asarray(rhos, dtype=float)
    H = rhos.shape[0]
    thetas = np.zeros(H)
    theta_next, rho_next = 0.0, 0.0
    for h in range(H - 1, -1, -1):
        thetas[h] = confidence_radius(t, delta, d, sigma, lam, L, L_omega, theta_next, rho_next, horizon=H)
        theta_next, rho_next = thetas[h], rhos[h]
    return thetas


def rho_empirical(state: RidgeState, optimal_features, counts=None) -> float:
    """sqrt of the summed squared ``gram^{-1}``-norms of optimal-action features.

    ``counts`` optionally weights each row (visits of the corresponding state),
    which is how callers aggregate repeated states.
    """
    rows = np.asarray(optimal_features, dtype=float)
    if rows.size == 0:
        return 0.0
    rows = rows.reshape(-1, state.dim)
    sq = state.inv_norms(rows) ** 2
    if counts is not None:
        sq = sq * np.asarray(counts, dtype=float).reshape(-1)
    return math.sqrt(float(sq.sum()))


def bar_rho(rhos, gamma: float, horizon: int) -> float:
    """Horizon-combination of the per-step rho bounds.

    ``rhos`` lists ``rho^2, ..., rho^{H+1}`` (1-based superscripts, length
    ``horizon``); evaluates
    ``sum_i gamma^{2(H-i)} (1 + sum_{j=2..i} gamma^{j-1} prod_{k<j} rho^{H-(i-k)+1})^2``.
    """
    rhos = [float(r) for r in rhos]
    H = int(horizon)
    if H < 1:
        raise ValueError("horizon must be >= 1")
    if len(rhos) != H:
        raise ValueError(f"expected {H} rho values (rho^2 .. rho^{H + 1}), got {len(rhos)}")
    if any(r < 0 for r in rhos) or not 0.0 <= gamma <= 1.0:
        raise ValueError("rho values must be >= 0 and gamma in [0, 1]")

    def rho(m):
        return rhos[m - 2]

    total = 0.0
    for i in range(1, H + 1):
        inner = 1.0
        for j in range(2, i + 1):
            prod = 1.0
            for k in range(1, j):
                prod *= rho(H - (i - k) + 1)
            inner += gamma ** (j - 1) * prod
        total += gamma ** (2 * (H - i)) * inner * inner
    return total


# -- Bayesian linear regression ----------------------------------------------------


def _cholesky_with_jitter(m: np.ndarray) -> np.ndarray:
    d = m.shape[0]
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    scale = JITTER_BASE * float(np.trace(m)) / d
    for _ in range(JITTER_ESCALATIONS + 1):
        try:
            return np.linalg.cholesky(m + scale * np.eye(d))
        except np.linalg.LinAlgError:
            scale *= 10.0
    raise CholeskyError("covariance is not positive definite even after jitter")


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        self._factor = None

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            if not np.any(self.cov):
                self._factor = np.zeros_like(self.cov)
            else:
                self._factor = _cholesky_with_jitter(0.5 * (self.cov + self.cov.T))
        return self._factor

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.mean.shape[0])
        return self.mean + self.factor @ z


def blr_posterior(features, targets, sigma: float, sigma_eps: float, dim: int | None = None) -> GaussianPosterior:
    """Conjugate posterior for ``y = phi . w + N(0, sigma_eps^2)``, ``w ~ N(0, sigma^2 I)``.

    ``cov = (Phi^T Phi / sigma_eps^2 + I / sigma^2)^{-1}`` and
    ``mean = cov Phi^T y / sigma_eps^2``.  ``features`` holds one row per sample.
    """
    if not (sigma > 0 and sigma_eps > 0):
        raise ValueError("prior and likelihood scales must be positive")
    y = np.asarray(targets, dtype=float).reshape(-1)
    Phi = np.asarray(features, dtype=float)
    if Phi.size == 0:
        if dim is None:
            raise ValueError("dim is required when there is no data")
        Phi = np.zeros((0, dim))
    elif Phi.ndim != 2:
        Phi = Phi.reshape(y.shape[0], -1)
    if Phi.shape[0] != y.shape[0]:
        raise ValueError("features and targets disagree in length")
    d = Phi.shape[1]
    precision = Phi.T @ Phi / sigma_eps**2 + np.eye(d) / sigma**2
    c = linalg.cho_factor(precision, lower=True)
    cov = linalg.cho_solve(c, np.eye(d))
    cov = 0.5 * (cov + cov.T)
    mean = linalg.cho_solve(c, Phi.T @ y) / sigma_eps**2
    return GaussianPosterior(mean, cov)


def posterior_from_ridge(state: RidgeState, sigma_eps: float) -> GaussianPosterior:
    """BLR posterior from ridge statistics with ``state.lam = sigma_eps^2 / sigma^2``."""
    c = linalg.cho_factor(state.gram, lower=True)
    cov = sigma_eps**2 * linalg.cho_solve(c, np.eye(state.dim))
    return GaussianPosterior(linalg.cho_solve(c, state.moment), 0.5 * (cov + cov.T))


def sample_gaussian(posterior: GaussianPosterior, rng: np.random.Generator) -> np.ndarray:
    return posterior.sample(rng)


def determinant_lemma_gap(features, lam: float, d: int, L: float, T: int | None = None) -> tuple[float, float]:
    """``(sum_t log(1 + ||phi_t||^2_{gram_{t-1}^{-1}}), d log(lam + T L^2 / d))``."""
    Phi = np.asarray(features, dtype=float).reshape(-1, d)
    T = Phi.shape[0] if T is None else int(T)
    rhs = d * math.log(lam + T * L * L / d)
    if Phi.shape[0] == 0:
        return 0.0, rhs
    lhs = float(kernels.determinant_lemma_lhs(np.ascontiguousarray(Phi[None]), float(lam))[0])
    return lhs, rhs
