"""Spectral-efficiency curves and the Rayleigh-fading Monte-Carlo study."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fdma
from .cdma import CdmaInstance, solve_cdma
from .model import SystemConstants, UserProfile

BRACKET_HI = 32.0


def _bisect_fixed_point(rhs, hi=BRACKET_HI, iters=200):
    """Largest root of ``rhs(C) - C`` in ``(0, hi]``, given ``rhs`` concave with ``rhs(0) = 0``."""
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if rhs(mid) > mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return 0.5 * (lo + hi)


def single_user_efficiency(ebn0: float, complex_valued: bool = False) -> float:
    """AWGN single-user efficiency solving ``C = (1/2) log2(1 + 2 C Eb/N0)``.

    Returns 0 at or below the ``Eb/N0 = ln 2`` (-1.59 dB) threshold, where
    zero is the only root.  With ``complex_valued`` the relation is
    ``C = log2(1 + C Eb/N0)`` (bps/Hz), which has the same threshold.
    """
    if not ebn0 > 0:
        raise ValueError("Eb/N0 must be positive")
    if ebn0 <= np.log(2.0):
        return 0.0
    if complex_valued:
        return _bisect_fixed_point(lambda c: np.log2(1.0 + c * ebn0))
    return _bisect_fixed_point(lambda c: 0.5 * np.log2(1.0 + 2.0 * c * ebn0))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def symmetric_efficiency(load: float, ebn0: float) -> float:
    """Efficiency (bits/chip) of the optimal system with symmetric users.

    Grows linearly with the effective load ``nbar K / N`` up to 1 and stays
    at the single-user value beyond.
    """
    if load < 0:
        raise ValueError("load must be non-negative")
    c_su = single_user_efficiency(ebn0)
    return min(load, 1.0) * c_su


def symmetric_sum_rate(K: int, N: int, nbar: int, p_tot: float, noise_variance: float = 1.0) -> float:
    """Closed-form maximum sum rate (bits/chip) for ``K`` equal-power users."""
    load = nbar * K / N
    snr = p_tot / noise_variance
    if load <= 1:
        return 0.5 * load * np.log2(1.0 + snr / load)
    return 0.5 * np.log2(1.0 + snr)


class ConsistencyError(AssertionError):
    pass


def symmetric_sum_rate_check(K: int, N: int, nbar: int, p_tot: float,
                             noise_variance: float = 1.0, tol: float = 1e-12) -> float:
    """Closed form cross-checked against the general solver; returns the rate."""
    closed = symmetric_sum_rate(K, N, nbar, p_tot, noise_variance)
    if p_tot == 0:
        return closed
    inst = CdmaInstance(np.full(K, p_tot / K), np.full(K, nbar), N, noise_variance)
    solved = solve_cdma(inst).sum_rate
    if abs(closed - solved) > tol:
        raise ConsistencyError(f"closed form {closed!r} != solver {solved!r}")
    return closed


@dataclass(frozen=True)
class FadingStudyConfig:
    K: int = 100
    N: int = 100
    nbar: int = 1
    mean_ebn0_db: float = 10.0
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.K < 1 or self.N < 1 or self.nbar < 1:
            raise ValueError("K, N and nbar must be positive")


@dataclass(frozen=True, eq=False)
class FadingSummary:
    config: FadingStudyConfig
    restricted: np.ndarray
    unrestricted: np.ndarray

    @property
    def mean_restricted(self) -> float:
        return float(self.restricted.mean())

    @property
    def mean_unrestricted(self) -> float:
        return float(self.unrestricted.mean())

    def rows(self):
        for i, (r, u) in enumerate(zip(self.restricted, self.unrestricted)):
            yield i, r, u


def fading_gains(K: int, trials: int, seed: int) -> np.ndarray:
    """Unit-mean exponential power gains, one row per trial."""
    return np.random.default_rng(seed).exponential(1.0, size=(trials, K))


def nominal_user_power(K: int, mean_ebn0_db: float) -> float:
    """Per-user power over the complex noise variance at the non-faded operating point.

    Fixed by the symmetric unrestricted system: ``p_tot / N0 = (Eb/N0) C``
    with ``C`` the complex single-user efficiency.
    """
    e = float(db_to_linear(mean_ebn0_db))
    return e * single_user_efficiency(e, complex_valued=True) / K


def _restricted_complex_rate(p, nbar, N):
    # rate in bits per complex chip: twice the real-dimension rate at equal SNR
    profile = UserProfile(p, np.full(p.size, nbar / (2.0 * N)))
    consts = SystemConstants(processing_gain=N, total_bandwidth=0.5, noise_psd=2.0)
    res = fdma.allocate_closed_form(profile, consts)
    if res.classification.k1 == 0:
        # no oversized user: the rate is the MAC capacity, evaluated the same way
        return float(np.log2(1.0 + p.sum()))
    return 2.0 * res.sum_rate


def rayleigh_fading_study(config: FadingStudyConfig,
                          gains: Optional[np.ndarray] = None) -> FadingSummary:
    """Per-trial restricted and unrestricted efficiencies (bps/Hz) under fading.

    Each trial scales the nominal per-user power by ``K`` exponential gains
    drawn up front from ``config.seed`` (or taken from ``gains``), so the
    result is independent of evaluation order.
    """
    if gains is None:
        gains = fading_gains(config.K, config.trials, config.seed)
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (config.trials, config.K):
        raise ValueError(f"gains must have shape {(config.trials, config.K)}")
    p_bar = nominal_user_power(config.K, config.mean_ebn0_db)
    restricted = np.empty(config.trials)
    unrestricted = np.empty(config.trials)
    for t in range(config.trials):
        p = gains[t] * p_bar
        restricted[t] = _restricted_complex_rate(p, config.nbar, config.N)
        unrestricted[t] = np.log2(1.0 + p.sum())
    if np.any(restricted > unrestricted):
        raise ConsistencyError("restricted rate above MAC capacity")
    return FadingSummary(config, restricted, unrestricted)
