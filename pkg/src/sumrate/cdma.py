"""Multi-code CDMA sum-rate optimization through its FDMA equivalent.

A user allowed ``nbar_k`` codes in ``N`` chips behaves, as far as the
maximum sum rate goes, like an FDMA user capped at ``nbar_k / (2N)`` Hz in a
band of 1/2 Hz with one-sided noise PSD ``2 sigma^2``.  Rates here are in
bits per chip (bits per real dimension).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import fdma
from .fdma import Classification, Label
from .model import InvalidInstanceError, SystemConstants, UserOrder, UserProfile

EQUAL_POWER = "equal"
MIN_COUNT = "mincount"
STRATEGIES = (EQUAL_POWER, MIN_COUNT)

# |x - round(x)| below this (relative) counts as an integer stream count
INTEGER_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class CdmaInstance:
    powers: np.ndarray
    limits: np.ndarray
    processing_gain: int
    noise_variance: float = 1.0
    delays: Optional[np.ndarray] = None

    def __post_init__(self):
        limits = np.asarray(self.limits)
        if limits.ndim != 1 or np.any(limits != np.round(limits)) or np.any(limits < 1):
            raise InvalidInstanceError("code limits must be positive integers")
        object.__setattr__(self, "limits", limits.astype(int))
        # validates powers and shapes
        profile = UserProfile(self.powers, self.limits, "codes")
        object.__setattr__(self, "powers", profile.powers)
        SystemConstants(processing_gain=self.processing_gain,
                        noise_variance=self.noise_variance)
        if self.delays is not None:
            delays = np.asarray(self.delays)
            if delays.shape != self.limits.shape:
                raise InvalidInstanceError("need one delay per user")
            if np.any(delays != np.round(delays)):
                raise InvalidInstanceError("delays must be integers (chips)")
            if np.any(delays < 0) or np.any(delays >= self.processing_gain):
                raise InvalidInstanceError(
                    f"delays must lie in 0..{self.processing_gain - 1}")
            object.__setattr__(self, "delays", delays.astype(int))

    @property
    def num_users(self) -> int:
        return self.powers.size

    def fdma_profile(self) -> UserProfile:
        return UserProfile(self.powers, self.limits / (2.0 * self.processing_gain))

    def fdma_constants(self) -> SystemConstants:
        return SystemConstants(processing_gain=self.processing_gain,
                               noise_variance=self.noise_variance,
                               total_bandwidth=0.5,
                               noise_psd=2.0 * self.noise_variance)


@dataclass(frozen=True, eq=False)
class CdmaSolution:
    """Optimal multi-code allocation, per-user arrays in original order.

    ``w_kl_star`` and ``p_kl_star`` are lists of per-stream arrays, one per
    user; ``classification`` is in sorted order (see ``order``).
    """

    w_k_star: np.ndarray
    w_k_star_k2: np.ndarray
    w_kl_star: list
    p_kl_star: list
    n_k_star: np.ndarray
    classification: Classification
    order: UserOrder
    sum_rate: float
    achieves_mac: bool
    strategy: str
    processing_gain: int

    @property
    def t_k_star(self) -> np.ndarray:
        return 2.0 * self.w_k_star

    @property
    def n_orthogonal(self) -> np.ndarray:
        """Streams per user sitting at the full ``1/(2N)`` share."""
        full = 1.0 / (2.0 * self.processing_gain)
        return np.array([int(np.sum(np.abs(w - full) <= INTEGER_RTOL * full))
                         for w in self.w_kl_star], dtype=int)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "w_k_star": self.w_k_star.tolist(),
            "t_k_star": self.t_k_star.tolist(),
            "w_kl_star": [w.tolist() for w in self.w_kl_star],
            "p_kl_star": [p.tolist() for p in self.p_kl_star],
            "n_k_star": self.n_k_star.tolist(),
            "n_orthogonal": self.n_orthogonal.tolist(),
            "labels": [l.value for l in self.classification.labels],
            "k1": self.classification.k1,
            "k2": self.classification.k2,
            "permutation": self.order.permutation.tolist(),
            "sum_rate": self.sum_rate,
            "achieves_mac": self.achieves_mac,
        }


@dataclass(frozen=True, eq=False)
class StreamCounts:
    max_orthogonal: np.ndarray
    min_active: np.ndarray


def _sorted(instance: CdmaInstance):
    order = fdma.order_users(instance.fdma_profile())
    idx = order.permutation
    return order, instance.powers[idx], instance.limits[idx]


def classify_multicode(instance: CdmaInstance) -> Classification:
    """Classification of the equivalent FDMA users, in sorted order.

    Equivalent to testing ``n_hat_k = (N - sum_{j<k} nbar_j) p_k / sum_{j>=k} p_j``
    against ``nbar_k``.
    """
    order, p, nbar = _sorted(instance)
    N = instance.processing_gain
    return fdma.classify(UserProfile(p, nbar / (2.0 * N)), instance.fdma_constants())


def sum_rate_k1_form(instance: CdmaInstance, k1: int) -> float:
    """Maximum sum rate (bits/chip) written with the oversized count."""
    _, p, nbar = _sorted(instance)
    N = instance.processing_gain
    s2 = instance.noise_variance
    head = np.sum(nbar[:k1] / (2 * N) * np.log2(1 + N * p[:k1] / (s2 * nbar[:k1])))
    left = N - nbar[:k1].sum()
    tail = p[k1:].sum()
    if left <= 0 or tail == 0:
        return float(head)
    return float(head + left / (2 * N) * np.log2(1 + N * tail / (s2 * left)))


def sum_rate_k2_form(instance: CdmaInstance, k2: int) -> float:
    """Maximum sum rate (bits/chip) written with the non-undersized count."""
    return sum_rate_k1_form(instance, k2)


def _split_equal(w_k, nbar_k):
    return np.full(nbar_k, w_k / nbar_k)


def _split_mincount(w_k, nbar_k, N, x):
    full = 1.0 / (2.0 * N)
    n_full, has_rem = _floor_ceil_parts(x)
    w = np.zeros(nbar_k)
    w[:n_full] = full
    if has_rem:
        # remainder goes on the last active stream
        w[n_full] = w_k - n_full * full
    return w


def _floor_ceil_parts(x: float):
    """Return ``(floor(x), ceil(x) > floor(x))`` snapping near-integers."""
    r = round(x)
    if abs(x - r) <= INTEGER_RTOL * max(1.0, abs(x)):
        return int(r), False
    return int(math.floor(x)), True


def _undersized_share(p, nbar, N, k2):
    """``(N - sum_{j<=K2} nbar_j) p_k / sum_{j>K2} p_j`` for undersized users."""
    left = N - nbar[:k2].sum()
    return left * p[k2:] / p[k2:].sum()


def choose_stream_split(instance: CdmaInstance, w_k_star, strategy: str = EQUAL_POWER,
                        classification: Optional[Classification] = None,
                        order: Optional[UserOrder] = None):
    """Distribute each user's equivalent bandwidth over its streams.

    ``"equal"`` spreads ``w_k`` evenly over all ``nbar_k`` streams (equal
    power per stream).  ``"mincount"`` fills streams to ``1/(2N)`` one by one
    and puts any remainder on one extra stream, which simultaneously
    maximizes orthogonal streams and minimizes active ones.

    Returns per-user lists ``(w_kl, p_kl)`` and the active counts, all in
    original user order.  A known ``classification`` and ``order`` for the
    instance may be passed to skip recomputing them.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; pick one of {STRATEGIES}")
    N = instance.processing_gain
    w_k_star = np.asarray(w_k_star, dtype=float)
    caps = instance.limits / (2.0 * N)
    if np.any(w_k_star < 0) or np.any(w_k_star > caps * (1 + INTEGER_RTOL)):
        raise InvalidInstanceError("equivalent bandwidths must lie in [0, nbar/(2N)]")
    if classification is None or order is None:
        order, p_sorted, nbar_sorted = _sorted(instance)
        classification = classify_multicode(instance)
    else:
        p_sorted = instance.powers[order.permutation]
        nbar_sorted = instance.limits[order.permutation]
    k2 = classification.k2
    x_sorted = np.empty(p_sorted.size)
    x_sorted[:k2] = nbar_sorted[:k2]
    if k2 < p_sorted.size:
        x_sorted[k2:] = _undersized_share(p_sorted, nbar_sorted, N, k2)
    x = order.to_original(x_sorted)
    non_under = np.zeros(p_sorted.size, dtype=bool)
    non_under[:k2] = True
    non_under = order.to_original(non_under)

    w_kl, p_kl, n_active = [], [], []
    for k in range(instance.num_users):
        nb = int(instance.limits[k])
        pk = instance.powers[k]
        if non_under[k]:
            w = np.full(nb, 1.0 / (2.0 * N))
            pw = np.full(nb, pk / nb)
        else:
            if strategy == EQUAL_POWER:
                w = _split_equal(w_k_star[k], nb)
            else:
                w = _split_mincount(w_k_star[k], nb, N, x[k])
            pw = w / w_k_star[k] * pk
        w_kl.append(w)
        p_kl.append(pw)
        n_active.append(int(np.count_nonzero(pw > 0)))
    return w_kl, p_kl, np.array(n_active, dtype=int)


def solve_cdma(instance: CdmaInstance, strategy: str = EQUAL_POWER) -> CdmaSolution:
    """Optimal equivalent bandwidths, stream powers and maximum sum rate."""
    if np.any(instance.powers <= 0):
        raise InvalidInstanceError("solve_cdma needs positive powers; strip idle users first")
    profile = instance.fdma_profile()
    consts = instance.fdma_constants()
    res = fdma.allocate_closed_form(profile, consts)
    w_k2 = fdma.k2_allocation(profile, consts, res.order, res.classification.k2)
    w_kl, p_kl, n_active = choose_stream_split(instance, res.w_star, strategy,
                                               res.classification, res.order)
    return CdmaSolution(
        w_k_star=res.w_star,
        w_k_star_k2=w_k2,
        w_kl_star=w_kl,
        p_kl_star=p_kl,
        n_k_star=n_active,
        classification=res.classification,
        order=res.order,
        sum_rate=res.sum_rate,
        achieves_mac=res.classification.k1 == 0,
        strategy=strategy,
        processing_gain=instance.processing_gain,
    )


def mac_capacity(instance: CdmaInstance) -> float:
    """MAC sum capacity in bits/chip: ``(1/2) log2(1 + sum p / sigma^2)``."""
    return fdma.mac_sum_capacity(instance.powers, instance.fdma_constants())


def stream_count_extremes(instance: CdmaInstance) -> StreamCounts:
    """Most orthogonal streams and fewest active streams per user.

    Non-undersized users always use all ``nbar_k`` streams orthogonally;
    an undersized user gets the floor / ceiling of its share of the
    dimensions the non-undersized users leave free.
    """
    order, p, nbar = _sorted(instance)
    cls = classify_multicode(instance)
    k2 = cls.k2
    hi = nbar.astype(int).copy()
    lo = nbar.astype(int).copy()
    if k2 < p.size:
        for i, x in enumerate(_undersized_share(p, nbar, instance.processing_gain, k2)):
            fl, frac = _floor_ceil_parts(x)
            hi[k2 + i] = fl
            lo[k2 + i] = fl + int(frac)
    return StreamCounts(order.to_original(hi), order.to_original(lo))


def achieves_mac_capacity(instance: CdmaInstance) -> bool:
    """True iff no user is oversized, i.e. ``N p_1 / sum p <= nbar_1``."""
    return classify_multicode(instance).k1 == 0


def minimal_upper_limit_profile(powers: Sequence[float], processing_gain: int) -> np.ndarray:
    """Smallest code limits reaching MAC capacity: ``ceil(N p_k / sum p)``.

    Computed in exact rational arithmetic on the given floats so integral
    shares are not pushed up by rounding.  Idle users need no codes and get 0.
    """
    fr = [Fraction(float(v)) for v in powers]
    if any(v < 0 for v in fr) or not any(v > 0 for v in fr):
        raise InvalidInstanceError("need non-negative powers with at least one positive")
    total = sum(fr)
    N = int(processing_gain)
    return np.array([math.ceil(N * v / total) for v in fr], dtype=int)


def async_sum_rate(instance: CdmaInstance) -> float:
    """Maximum sum rate with per-user chip delays; equal to the synchronous one."""
    if instance.delays is None:
        raise InvalidInstanceError("asynchronous instance needs delays")
    return solve_cdma(instance).sum_rate


def complex_sum_rate(instance: CdmaInstance) -> float:
    """Rate in bits per complex chip (bps/Hz) for complex-baseband signaling.

    A complex chip pairs two real dimensions at the same SNR, so the rate is
    twice the real-dimension rate with ``noise_variance`` read as the complex
    noise variance.
    """
    return 2.0 * solve_cdma(instance).sum_rate
