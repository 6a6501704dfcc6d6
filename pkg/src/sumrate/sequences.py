"""Signature sequences that attain the multi-code CDMA sum capacity.

Every active stream is treated as a single-code "virtual" user.  Streams
holding a full ``1/(2N)`` share get mutually orthogonal sequences; the rest
share the orthogonal complement through a generalized WBE set, i.e. unit
vectors whose power-weighted outer products sum to a multiple of identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from . import fdma
from .cdma import CdmaInstance, CdmaSolution, solve_cdma
from .fdma import Label
from .model import InvalidInstanceError, SystemConstants, UserProfile

GRAM_TOL = 1e-8
FULL_RTOL = 1e-9


class InfeasibleComplementError(ArithmeticError):
    """A complement stream carries more than the common average power."""


class VirtualUser(NamedTuple):
    user: int
    stream: int
    column: int
    power: float
    bandwidth: float
    label: Label
    orthogonal: bool


@dataclass(frozen=True, eq=False)
class VirtualUserSet:
    entries: tuple
    processing_gain: int
    num_columns: int

    @property
    def orthogonal_entries(self) -> List[VirtualUser]:
        return [e for e in self.entries if e.orthogonal]

    @property
    def complement_entries(self) -> List[VirtualUser]:
        return [e for e in self.entries if not e.orthogonal]

    @property
    def complement_dim(self) -> int:
        return self.processing_gain - len(self.orthogonal_entries)

    def column_powers(self) -> np.ndarray:
        p = np.zeros(self.num_columns)
        for e in self.entries:
            p[e.column] = e.power
        return p


@dataclass(frozen=True, eq=False)
class SequenceMatrix:
    S: np.ndarray
    powers: np.ndarray
    orthogonal_columns: tuple
    complement_columns: tuple


def build_virtual_users(solution: CdmaSolution, noise_variance: float = 1.0) -> VirtualUserSet:
    """One virtual user per active stream, labelled on the equal-cap FDMA system.

    A stream is orthogonal (non-undersized) when its share is the full
    ``1/(2N)``; the labels from classifying all active streams with cap
    ``1/(2N)`` in a band of 1/2 must agree.
    """
    N = solution.processing_gain
    full = 1.0 / (2.0 * N)
    raw = []
    column = 0
    for k, (w, p) in enumerate(zip(solution.w_kl_star, solution.p_kl_star)):
        if abs(w.sum() - solution.w_k_star[k]) > FULL_RTOL * max(full, solution.w_k_star[k]):
            raise InvalidInstanceError(f"stream split of user {k} does not add up")
        for l in range(w.size):
            if p[l] > 0:
                raw.append((k, l, column + l, float(p[l]), float(w[l])))
        column += w.size
    powers = np.array([r[3] for r in raw])
    profile = UserProfile(powers, np.full(powers.size, full))
    order = fdma.order_users(profile)
    consts = SystemConstants(processing_gain=N, noise_variance=noise_variance,
                             total_bandwidth=0.5, noise_psd=2.0 * noise_variance)
    cls = fdma.classify(profile.permuted(order.permutation), consts)
    labels = [None] * len(raw)
    for pos, idx in enumerate(order.permutation):
        labels[idx] = cls.labels[pos]
    entries = []
    for (k, l, col, p, w), label in zip(raw, labels):
        orth = abs(w - full) <= FULL_RTOL * full
        entries.append(VirtualUser(k, l, col, p, w, label, orth))
    return VirtualUserSet(tuple(entries), N, column)


def _rotate_to(X, i, j, target):
    """Givens-rotate columns ``i, j`` of ``X`` so column ``i`` has squared norm ``target``.

    Needs ``|x_i|^2 >= target >= |x_j|^2``; ``X X^T`` is unchanged.
    """
    a = X[:, i] @ X[:, i]
    b = X[:, j] @ X[:, j]
    g = X[:, i] @ X[:, j]
    # (a - t) + 2 g tau + (b - t) tau^2 = 0
    A, B, C = b - target, 2.0 * g, a - target
    if A == 0.0:
        tau = -C / B if B != 0.0 else 0.0
    else:
        disc = max(B * B - 4.0 * A * C, 0.0)
        q = -0.5 * (B + np.copysign(np.sqrt(disc), B))
        roots = [r for r in ((q / A) if q != 0.0 else None,
                             (C / q) if q != 0.0 else None) if r is not None]
        if not roots:
            roots = [np.sqrt(-C / A)]
        tau = min(roots, key=abs)
    c = 1.0 / np.sqrt(1.0 + tau * tau)
    s = tau * c
    xi, xj = X[:, i].copy(), X[:, j].copy()
    X[:, i] = c * xi + s * xj
    X[:, j] = -s * xi + c * xj


def weighted_tight_frame(weights, dim: int) -> np.ndarray:
    """Return ``X`` (``dim x m``) with ``X X^T = (sum w / dim) I`` and ``|x_i|^2 = w_i``.

    Starts from ``[sqrt(c) I, 0]`` and repeatedly rotates an adjacent pair
    (in current-norm order) bracketing the smallest unmet weight so that one
    column hits it exactly.  Requires ``max w <= sum w / dim``.
    """
    w = np.asarray(weights, dtype=float)
    m = w.size
    if dim < 1 or m < dim:
        raise InfeasibleComplementError(f"cannot fit {m} columns into a tight frame of dim {dim}")
    c = w.sum() / dim
    if np.max(w) > c * (1.0 + 1e-9):
        raise InfeasibleComplementError(
            f"weight {np.max(w)!r} exceeds the frame bound {c!r}")
    X = np.zeros((dim, m))
    X[:, :dim] = np.sqrt(c) * np.eye(dim)
    free = list(range(m))
    targets = sorted(range(m), key=lambda t: w[t])
    placed = np.empty(m, dtype=int)
    for t in targets[:-1]:
        norms = {i: X[:, i] @ X[:, i] for i in free}
        ranked = sorted(free, key=lambda i: -norms[i])
        goal = w[t]
        hit = next((i for i in ranked if abs(norms[i] - goal) <= 1e-15 * c), None)
        if hit is None:
            for hi, lo in zip(ranked, ranked[1:]):
                if norms[hi] >= goal >= norms[lo]:
                    break
            else:
                raise ArithmeticError("weights are not majorized by the frame spectrum")
            _rotate_to(X, hi, lo, goal)
            hit = hi
        placed[t] = hit
        free.remove(hit)
    placed[targets[-1]] = free[0]
    return X[:, placed]


def construct_sequences(vset: VirtualUserSet, seed: int = 0) -> SequenceMatrix:
    """Orthogonal sequences for full-share streams, GWBE for the rest.

    All active columns have squared norm ``N``; idle columns are zero.  The
    orthonormal basis is the Q factor of a seeded Gaussian matrix, so the
    output is a deterministic function of ``seed``.
    """
    N = vset.processing_gain
    orth = vset.orthogonal_entries
    comp = vset.complement_entries
    if len(orth) > N:
        raise InfeasibleComplementError(f"{len(orth)} orthogonal streams in {N} dimensions")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((N, N)))
    Q = Q * np.sign(np.diag(R))
    S = np.zeros((N, vset.num_columns))
    for i, e in enumerate(orth):
        S[:, e.column] = np.sqrt(N) * Q[:, i]
    if comp:
        dim = N - len(orth)
        weights = np.array([e.power for e in comp])
        X = weighted_tight_frame(weights, dim)
        unit = X / np.sqrt(weights)
        E = Q[:, len(orth):]
        S[:, [e.column for e in comp]] = np.sqrt(N) * (E @ unit)
    return SequenceMatrix(S, vset.column_powers(),
                          tuple(e.column for e in orth), tuple(e.column for e in comp))


def verify_gram(seq: SequenceMatrix, vset: VirtualUserSet) -> dict:
    """Residuals of the optimality structure, each scaled to be dimensionless.

    ``orthogonality``: largest ``|s_i . s_j| / N`` between an orthogonal
    column and any other active column.  ``gram``: largest deviation of the
    complement's weighted Gram from ``c (N I - sum_orth s s^T)``, over
    ``c N``.  ``norms``: largest ``| |s|^2 - N | / N`` over active columns.
    """
    S = seq.S
    N = vset.processing_gain
    active = [e.column for e in vset.entries]
    orth = list(seq.orthogonal_columns)
    comp = list(seq.complement_columns)
    G = S[:, active].T @ S[:, active]
    pos = {col: i for i, col in enumerate(active)}
    ortho_res = 0.0
    for col in orth:
        row = np.abs(G[pos[col]]).copy()
        row[pos[col]] = 0.0
        ortho_res = max(ortho_res, float(np.max(row, initial=0.0)) / N)
    gram_res = 0.0
    if comp:
        p = np.array([seq.powers[c] for c in comp])
        dim = N - len(orth)
        c = p.sum() / dim
        Sc = S[:, comp]
        So = S[:, orth]
        target = c * (N * np.eye(N) - So @ So.T)
        gram_res = float(np.max(np.abs((Sc * p) @ Sc.T - target))) / float(c * N)
    norms = np.sum(S[:, active] ** 2, axis=0)
    norm_res = float(np.max(np.abs(norms - N), initial=0.0)) / N
    return {
        "orthogonality": ortho_res,
        "gram": gram_res,
        "norms": norm_res,
        "passed": max(ortho_res, gram_res, norm_res) <= GRAM_TOL,
    }


def logdet_sum_rate(S, powers, noise_variance: float = 1.0) -> float:
    """``(1/(2N)) log2 det(I + S diag(p) S^T / sigma^2)`` in bits/chip."""
    S = np.asarray(S, dtype=float)
    p = np.asarray(powers, dtype=float)
    if p.ndim == 2:
        if np.max(np.abs(p - np.diag(np.diag(p)))) > 0:
            raise InvalidInstanceError("power matrix must be diagonal")
        p = np.diag(p)
    if np.any(p < 0):
        raise InvalidInstanceError("stream powers must be non-negative")
    N = S.shape[0]
    M = np.eye(N) + (S * p) @ S.T / noise_variance
    L = np.linalg.cholesky(0.5 * (M + M.T))
    return float(np.sum(np.log2(np.diag(L)))) / N


def optimal_system(instance: CdmaInstance, strategy: str = "equal", seed: int = 0):
    """Solve, expand to virtual users and build sequences in one call."""
    sol = solve_cdma(instance, strategy)
    vset = build_virtual_users(sol, instance.noise_variance)
    return sol, vset, construct_sequences(vset, seed)
