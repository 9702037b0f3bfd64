"""Hot numerical kernels.

Every kernel exists twice: a loop version compiled with numba (``*_nb``) and
a vectorised numpy version (``*_np``).  The public name is bound to one of
them according to :data:`linexplore._accel.USE_NUMBA`.  Both versions are
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.

Array conventions used throughout the package (0-based step index ``h``):

* transitions ``P``: ``(H, S, A, S)``
* mean rewards ``R``: ``(H, S, A)``
* Q tables ``(H, S, A)``, value tables ``(H + 1, S)`` with ``V[H] == 0``
* policies ``(H, S, A)`` rows of action probabilities
"""

import numpy as np

from ._accel import NUMBA_AVAILABLE, USE_NUMBA, njit

__all__ = [
    "NUMBA_AVAILABLE",
    "USE_NUMBA",
    "backward_induction",
    "determinant_lemma_lhs",
    "evaluate_policy",
    "self_normalized_trials",
    "sherman_morrison",
]


# -- rank-one inverse update --------------------------------------------------


@njit
def sherman_morrison_nb(inv, phi):
    d = phi.shape[0]
    v = np.zeros(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += inv[i, j] * phi[j]
        v[i] = acc
    quad = 0.0
    for i in range(d):
        quad += phi[i] * v[i]
    scale = 1.0 / (1.0 + quad)
    for i in range(d):
        for j in range(d):
            inv[i, j] -= scale * v[i] * v[j]
    return quad


def sherman_morrison_np(inv, phi):
    v = inv @ phi
    quad = float(phi @ v)
    inv -= np.outer(v, v) / (1.0 + quad)
    return quad


# -- finite-horizon dynamic programming ---------------------------------------


@njit
def backward_induction_nb(P, R, gamma):
    H, S, A = R.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        for x in range(S):
            best = -np.inf
            for a in range(A):
                cont = 0.0
                for y in range(S):
                    cont += P[h, x, a, y] * V[h + 1, y]
                q = R[h, x, a] + gamma * cont
                Q[h, x, a] = q
                best = max(best, q)
            V[h, x] = best
    return Q, V


def backward_induction_np(P, R, gamma):
    H, S, A = R.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = R[h] + gamma * (P[h] @ V[h + 1])
        V[h] = Q[h].max(axis=1)
    return Q, V


@njit
def evaluate_policy_nb(P, R, gamma, pi):
    H, S, A = R.shape
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        for x in range(S):
            acc = 0.0
            for a in range(A):
                p = pi[h, x, a]
                if p == 0.0:
                    continue
                cont = 0.0
                for y in range(S):
                    cont += P[h, x, a, y] * V[h + 1, y]
                acc += p * (R[h, x, a] + gamma * cont)
            V[h, x] = acc
    return V


def evaluate_policy_np(P, R, gamma, pi):
    H, S, _ = R.shape
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q = R[h] + gamma * (P[h] @ V[h + 1])
        V[h] = (pi[h] * Q).sum(axis=1)
    return V


# -- Monte-Carlo batches for the concentration checks -------------------------


@njit
def determinant_lemma_lhs_nb(features, lam):
    n_traj, T, d = features.shape
    out = np.zeros(n_traj)
    for k in range(n_traj):
        inv = np.eye(d) / lam
        total = 0.0
        for t in range(T):
            quad = sherman_morrison_nb(inv, features[k, t])
            total += np.log1p(quad)
        out[k] = total
    return out


def determinant_lemma_lhs_np(features, lam):
    n_traj, T, d = features.shape
    inv = np.broadcast_to(np.eye(d) / lam, (n_traj, d, d)).copy()
    total = np.zeros(n_traj)
    for t in range(T):
        phi = features[:, t, :]
        v = np.einsum("nij,nj->ni", inv, phi)
        quad = np.einsum("ni,ni->n", phi, v)
        inv -= v[:, :, None] * v[:, None, :] / (1.0 + quad)[:, None, None]
        total += np.log1p(quad)
    return total


@njit
def self_normalized_trials_nb(directions, noise, lam):
    # Feature at step t leans toward the running sum S_{t-1}: adapted, but
    # independent of the noise drawn at step t.
    n_trials, T, d = directions.shape
    stat = np.zeros(n_trials)
    logdet = np.zeros(n_trials)
    for k in range(n_trials):
        inv = np.eye(d) / lam
        S = np.zeros(d)
        ld = d * np.log(lam)
        phi = np.zeros(d)
        for t in range(T):
            s_norm = 0.0
            for i in range(d):
                s_norm += S[i] * S[i]
            s_norm = np.sqrt(s_norm)
            nrm = 0.0
            for i in range(d):
                phi[i] = directions[k, t, i]
                if s_norm > 0.0:
                    phi[i] += S[i] / s_norm
                nrm += phi[i] * phi[i]
            nrm = np.sqrt(nrm)
            if nrm > 0.0:
                for i in range(d):
                    phi[i] /= nrm
            quad = sherman_morrison_nb(inv, phi)
            ld += np.log1p(quad)
            for i in range(d):
                S[i] += noise[k, t] * phi[i]
        acc = 0.0
        for i in range(d):
            for j in range(d):
                acc += S[i] * inv[i, j] * S[j]
        stat[k] = acc
        logdet[k] = ld
    return stat, logdet


def self_normalized_trials_np(directions, noise, lam):
    n_trials, T, d = directions.shape
    inv = np.broadcast_to(np.eye(d) / lam, (n_trials, d, d)).copy()
    S = np.zeros((n_trials, d))
    logdet = np.full(n_trials, d * np.log(lam))
    for t in range(T):
        s_norm = np.linalg.norm(S, axis=1, keepdims=True)
        lean = np.divide(S, s_norm, out=np.zeros_like(S), where=s_norm > 0.0)
        phi = directions[:, t, :] + lean
        nrm = np.linalg.norm(phi, axis=1, keepdims=True)
        phi = np.divide(phi, nrm, out=phi.copy(), where=nrm > 0.0)
        v = np.einsum("nij,nj->ni", inv, phi)
        quad = np.einsum("ni,ni->n", phi, v)
        inv -= v[:, :, None] * v[:, None, :] / (1.0 + quad)[:, None, None]
        logdet += np.log1p(quad)
        S += noise[:, t, None] * phi
    stat = np.einsum("ni,nij,nj->n", S, inv, S)
    return stat, logdet


if USE_NUMBA:
    sherman_morrison = sherman_morrison_nb
    backward_induction = backward_induction_nb
    evaluate_policy = evaluate_policy_nb
    determinant_lemma_lhs = determinant_lemma_lhs_nb
    self_normalized_trials = self_normalized_trials_nb
else:
    sherman_morrison = sherman_morrison_np
    backward_induction = backward_induction_np
    evaluate_policy = evaluate_policy_np
    determinant_lemma_lhs = determinant_lemma_lhs_np
    self_normalized_trials = self_normalized_trials_np
