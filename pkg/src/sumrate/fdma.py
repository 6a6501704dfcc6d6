"""Sum-rate optimal bandwidth allocation for restricted FDMA and TDMA.

Each user ``k`` has power ``p_k`` and may occupy at most ``wbar_k`` Hz of a
shared band of ``w_tot`` Hz.  The allocation maximizing

    sum_k w_k log2(1 + p_k / (N0 w_k))

gives the strongest users (in minimal-PSD order) their caps and splits the
rest of the band in proportion to power among the remaining users.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from .model import (
    InvalidInstanceError,
    SystemConstants,
    UserOrder,
    UserProfile,
    is_sorted,
    order_users,
)

# relative band within which a due share counts as equal to its cap
CRITICAL_RTOL = 1e-9
KKT_TOL = 1e-9
LN2 = np.log(2.0)


class Label(enum.Enum):
    OVERSIZED = "O"
    CRITICAL = "C"
    UNDERSIZED = "U"


@dataclass(frozen=True, eq=False)
class Classification:
    """Per-user labels in sorted order, with the boundary counts.

    ``k1`` users are oversized and ``k2`` are not undersized; the first
    ``k1`` sorted users are the oversized ones, the next ``k2 - k1`` are
    critically sized.
    """

    labels: tuple
    k1: int
    k2: int
    w_hat: np.ndarray

    @property
    def codes(self) -> str:
        return "".join(label.value for label in self.labels)


@dataclass(frozen=True, eq=False)
class AllocationResult:
    w_star: np.ndarray
    classification: Classification
    order: UserOrder
    sum_rate: float
    psds: np.ndarray
    common_psd: float
    iterations: int = 0
    trace: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "w_star": self.w_star.tolist(),
            "labels": [l.value for l in self.classification.labels],
            "k1": self.classification.k1,
            "k2": self.classification.k2,
            "w_hat": self.classification.w_hat.tolist(),
            "permutation": self.order.permutation.tolist(),
            "sum_rate": self.sum_rate,
            "psds": [None if np.isnan(v) else v for v in self.psds.tolist()],
            "common_psd": self.common_psd,
        }


@dataclass(frozen=True, eq=False)
class KktCertificate:
    mu: np.ndarray
    mu_tilde: np.ndarray
    mu_scalar: float
    s: float
    residuals: dict
    tol: float = KKT_TOL

    @property
    def valid(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())


def _exceeds(share, limit):
    return share > limit * (1.0 + CRITICAL_RTOL)


def _matches(share, limit):
    return abs(share - limit) <= CRITICAL_RTOL * limit


def _require_sorted(profile: UserProfile):
    if not is_sorted(profile):
        raise InvalidInstanceError("users must be in non-increasing minimal-PSD order")


def classify(profile: UserProfile, constants: SystemConstants) -> Classification:
    """Label sorted users oversized / critically sized / undersized.

    The test value for user ``k`` is the proportional share of whatever
    bandwidth the stronger users' caps leave over:

        w_hat_k = (w_tot - sum_{j<k} wbar_j) * p_k / sum_{j>=k} p_j

    Labels do not depend on the noise level.
    """
    _require_sorted(profile)
    p = profile.powers
    wbar = profile.limits
    if np.any(p <= 0):
        raise InvalidInstanceError("classify needs positive powers; strip idle users first")
    w_tot = constants.total_bandwidth
    left = w_tot - np.concatenate(([0.0], np.cumsum(wbar)[:-1]))
    tail = np.cumsum(p[::-1])[::-1]
    w_hat = left * p / tail
    labels = []
    for wh, wb in zip(w_hat, wbar):
        if _exceeds(wh, wb):
            labels.append(Label.OVERSIZED)
        elif _matches(wh, wb):
            labels.append(Label.CRITICAL)
        else:
            labels.append(Label.UNDERSIZED)
    k1 = 0
    while k1 < len(labels) and labels[k1] is Label.OVERSIZED:
        k1 += 1
    k2 = k1
    while k2 < len(labels) and labels[k2] is Label.CRITICAL:
        k2 += 1
    if any(l is not Label.UNDERSIZED for l in labels[k2:]):
        raise ArithmeticError(f"non-monotone classification {labels!r}")
    return Classification(tuple(labels), k1, k2, w_hat)


def fdma_sum_rate(profile: UserProfile, constants: SystemConstants, w) -> float:
    """Sum rate in bits/s; a user with ``w_k = 0`` contributes nothing."""
    w = np.asarray(w, dtype=float)
    p = profile.powers
    n0 = constants.noise_psd
    active = w > 0
    return float(np.sum(w[active] * np.log2(1.0 + p[active] / (n0 * w[active]))))


def mac_sum_capacity(powers, constants: SystemConstants) -> float:
    """Unrestricted MAC sum capacity ``w_tot log2(1 + sum p / (N0 w_tot))``."""
    p = np.asarray(getattr(powers, "powers", powers), dtype=float)
    w_tot = constants.total_bandwidth
    return float(w_tot * np.log2(1.0 + p.sum() / (constants.noise_psd * w_tot)))


def rate_k1_form(p, wbar, w_tot, n0, k1) -> float:
    """Maximum sum rate written with the oversized count."""
    head = np.sum(wbar[:k1] * np.log2(1.0 + p[:k1] / (n0 * wbar[:k1])))
    rest = w_tot - wbar[:k1].sum()
    tail = p[k1:].sum()
    if tail == 0 or rest <= 0:
        return float(head)
    return float(head + rest * np.log2(1.0 + tail / (n0 * rest)))


def rate_k2_form(p, wbar, w_tot, n0, k2) -> float:
    """Maximum sum rate written with the non-undersized count."""
    return rate_k1_form(p, wbar, w_tot, n0, k2)


def _finish(profile, constants, order, cls, w_sorted, iterations=0, trace=None):
    p = profile.powers[order.permutation]
    wbar = profile.limits[order.permutation]
    k1 = cls.k1
    rest = constants.total_bandwidth - wbar[:k1].sum()
    s = p[k1:].sum() / rest if k1 < p.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        psd_sorted = np.where(w_sorted > 0, p / w_sorted, np.nan)
    w_star = order.to_original(w_sorted)
    psds = order.to_original(psd_sorted)
    rate = fdma_sum_rate(profile, constants, w_star)
    return AllocationResult(w_star, cls, order, rate, psds, float(s),
                            iterations, list(trace or []))


def _sorted_view(profile):
    order = order_users(profile)
    return order, profile.permuted(order.permutation)


def allocate_closed_form(profile: UserProfile, constants: SystemConstants) -> AllocationResult:
    """Optimal allocation in one pass from the classification.

    Oversized users get their caps; everyone else shares the remaining band
    in proportion to power.  Critically-sized users are snapped to their
    caps, which they equal up to rounding.
    """
    order, srt = _sorted_view(profile)
    cls = classify(srt, constants)
    p, wbar = srt.powers, srt.limits
    k1 = cls.k1
    w = wbar.copy()
    if k1 < p.size:
        rest = constants.total_bandwidth - wbar[:k1].sum()
        w[k1:] = rest * p[k1:] / p[k1:].sum()
        w[k1:cls.k2] = wbar[k1:cls.k2]
    return _finish(profile, constants, order, cls, w)


def allocate_k2_form(profile: UserProfile, constants: SystemConstants) -> np.ndarray:
    """Same allocation written with the non-undersized count, original order."""
    order, srt = _sorted_view(profile)
    cls = classify(srt, constants)
    return k2_allocation(profile, constants, order, cls.k2)


def k2_allocation(profile: UserProfile, constants: SystemConstants, order, k2: int) -> np.ndarray:
    """Caps for the first ``k2`` sorted users, proportional shares for the rest."""
    p = profile.powers[order.permutation]
    w = profile.limits[order.permutation].copy()
    if k2 < p.size:
        rest = constants.total_bandwidth - w[:k2].sum()
        w[k2:] = rest * p[k2:] / p[k2:].sum()
    return order.to_original(w)


def allocate_iterative(profile: UserProfile, constants: SystemConstants,
                       record: bool = False) -> AllocationResult:
    """Cap-or-finish loop over proportional due shares.

    Each pass renumbers the remaining users by minimal PSD and computes their
    proportional shares of the bandwidth still free.  If the first user's
    share exceeds its cap it receives the cap and leaves the list; otherwise
    everyone left receives their share and the loop ends.  With ``record``
    the due shares of every pass are kept in ``trace`` (original indices,
    ``nan`` for users already removed).
    """
    p_all = profile.powers
    wbar_all = profile.limits
    if np.any(p_all <= 0):
        raise InvalidInstanceError("allocate_iterative needs positive powers")
    K = p_all.size
    w = np.zeros(K)
    remaining = list(range(K))
    band = constants.total_bandwidth
    trace = []
    iterations = 0
    while remaining:
        iterations += 1
        psd = p_all[remaining] / wbar_all[remaining]
        remaining = [remaining[i] for i in np.argsort(-psd, kind="stable")]
        due = band * p_all[remaining] / p_all[remaining].sum()
        if record:
            snap = np.full(K, np.nan)
            snap[remaining] = due
            trace.append(snap)
        first = remaining[0]
        if _exceeds(due[0], wbar_all[first]):
            w[first] = wbar_all[first]
            band -= wbar_all[first]
            remaining = remaining[1:]
        else:
            w[remaining] = due
            for i, k in enumerate(remaining):
                if _matches(due[i], wbar_all[k]):
                    w[k] = wbar_all[k]
            remaining = []
    order, srt = _sorted_view(profile)
    cls = classify(srt, constants)
    return _finish(profile, constants, order, cls, w[order.permutation],
                   iterations, trace)


def _marginal(p, w, n0):
    """Derivative of ``w ln(1 + p/(n0 w))`` with respect to ``w``."""
    psd = p / w
    return np.log1p(psd / n0) - psd / (n0 + psd)


def verify_kkt(profile: UserProfile, constants: SystemConstants, w_star,
               tol: float = KKT_TOL) -> KktCertificate:
    """Build the dual certificate for ``w_star`` and report KKT residuals.

    Multipliers come from the instance's classification: the bandwidth
    multiplier is the marginal value at the common PSD ``s`` of the
    non-oversized users, each oversized user's cap multiplier is the excess
    of its own marginal value over that, and the non-negativity multipliers
    are zero.  Residuals are scaled to be dimensionless; the certificate is
    valid when all are at most ``tol``.
    """
    order, srt = _sorted_view(profile)
    cls = classify(srt, constants)
    p, wbar = srt.powers, srt.limits
    w = np.asarray(w_star, dtype=float)[order.permutation]
    n0 = constants.noise_psd
    w_tot = constants.total_bandwidth
    k1 = cls.k1
    rest = w_tot - wbar[:k1].sum()
    s = p[k1:].sum() / rest if k1 < p.size else 0.0
    mu_scalar = float(np.log1p(s / n0) - s / (n0 + s))
    mu = np.zeros(p.size)
    mu[:k1] = _marginal(p[:k1], wbar[:k1], n0) - mu_scalar
    mu_tilde = np.zeros(p.size)

    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.where(w > 0, _marginal(p, np.where(w > 0, w, 1.0), n0), np.inf)
    scale_rate = max(1.0, float(np.max(np.abs(grad[np.isfinite(grad)]), initial=0.0)))
    mu_scale = max(1.0, mu_scalar, float(np.max(mu, initial=0.0)))
    stationarity = np.abs(grad - mu + mu_tilde - mu_scalar) / scale_rate
    total = w.sum() - w_tot
    residuals = {
        "stationarity": float(np.max(stationarity)),
        "cap": float(np.max(np.maximum(w - wbar, 0.0)) / w_tot),
        "nonnegative": float(np.max(np.maximum(-w, 0.0)) / w_tot),
        "budget": float(max(total, 0.0) / w_tot),
        "mu_dual": float(np.max(np.maximum(-mu, 0.0)) / mu_scale),
        "mu_tilde_dual": float(np.max(np.maximum(-mu_tilde, 0.0)) / mu_scale),
        "mu_scalar_dual": float(max(-mu_scalar, 0.0) / mu_scale),
        "cap_slackness": float(np.max(np.abs(mu * (w - wbar))) / (w_tot * mu_scale)),
        "nonnegative_slackness": float(np.max(np.abs(mu_tilde * w)) / (w_tot * mu_scale)),
        "budget_slackness": float(abs(mu_scalar * total) / (w_tot * mu_scale)),
    }
    return KktCertificate(order.to_original(mu), order.to_original(mu_tilde),
                          mu_scalar, float(s), residuals, tol)


def solve_tdma(profile: UserProfile, constants: SystemConstants) -> AllocationResult:
    """Duty-cycle allocation via the FDMA instance with caps ``tbar * w_tot``.

    The returned ``w_star`` holds duty cycles ``t_k = w_k / w_tot``; the sum
    rate is that of the substituted FDMA instance.
    """
    w_tot = constants.total_bandwidth
    fdma = UserProfile(profile.powers, profile.limits * w_tot, "bandwidth")
    res = allocate_closed_form(fdma, constants)
    return AllocationResult(res.w_star / w_tot, res.classification, res.order,
                            res.sum_rate, res.psds, res.common_psd)


def extend_zero_power(profile: UserProfile, constants: SystemConstants) -> AllocationResult:
    """Allocate with idle (zero-power) users present.

    Active users are solved on their own; idle users get zero bandwidth and
    are labelled undersized.  Their minimal PSD is zero so they sort last.
    """
    p = profile.powers
    active = np.flatnonzero(p > 0)
    sub = UserProfile(p[active], profile.limits[active], profile.limit_kind)
    res = allocate_closed_form(sub, constants)
    K = p.size
    w = np.zeros(K)
    w[active] = res.w_star
    psds = np.full(K, np.nan)
    psds[active] = res.psds
    order = order_users(profile)
    n_act = active.size
    labels = res.classification.labels + (Label.UNDERSIZED,) * (K - n_act)
    w_hat = np.concatenate((res.classification.w_hat, np.zeros(K - n_act)))
    cls = Classification(labels, res.classification.k1, res.classification.k2, w_hat)
    return AllocationResult(w, cls, order, res.sum_rate, psds, res.common_psd)


class OracleConvergenceError(RuntimeError):
    pass


def _inverse_marginal(mu: float) -> float:
    """SNR ``x`` with ``ln(1+x) - x/(1+x) = mu``."""
    hi = 1.0
    while np.log1p(hi) - hi / (1.0 + hi) < mu:
        hi *= 2.0
    return brentq(lambda x: np.log1p(x) - x / (1.0 + x) - mu, 0.0, hi,
                  xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def oracle_solve(profile: UserProfile, constants: SystemConstants,
                 tol: float = 1e-9, max_iter: int = 400) -> np.ndarray:
    """Independent solution by bisection on the bandwidth multiplier.

    For a multiplier ``mu`` every user's stationary bandwidth is
    ``p_k / (N0 x(mu))``, clamped to ``[0, wbar_k]``; ``mu`` is bisected until
    the clamped bandwidths fill the band.  Does not use the classification.
    """
    p = profile.powers
    wbar = profile.limits
    n0 = constants.noise_psd
    w_tot = constants.total_bandwidth
    if wbar[p > 0].sum() <= w_tot:
        return np.where(p > 0, wbar, 0.0)

    def alloc(mu):
        x = _inverse_marginal(mu)
        return np.minimum(wbar, p / (n0 * x))

    lo, hi = 0.0, 1.0
    while alloc(hi).sum() > w_tot:
        hi *= 2.0
        if hi > 1e300:
            raise OracleConvergenceError("could not bracket the multiplier")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if alloc(mid).sum() > w_tot:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    else:
        raise OracleConvergenceError(f"no convergence in {max_iter} iterations")
    w = alloc(hi)
    free = (w < wbar) & (p > 0)
    if np.any(free):
        spare = w_tot - w[~free].sum()
        w[free] *= spare / w[free].sum()
        w = np.minimum(w, wbar)
    return w
