"""Seeded instance generators and independent reference computations for tests."""

from __future__ import annotations

from fractions import Fraction
import math

import numpy as np

from sumrate.cdma import CdmaInstance
from sumrate.model import SystemConstants, UserProfile

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE_RESULTS = {}

FIVE_POWERS = [30.0, 15.0, 10.0, 7.0, 3.0]
FIVE_NBAR = [2, 2, 2, 2, 2]
FIVE_N = 8


def five_user_cdma(**kw) -> CdmaInstance:
    return CdmaInstance(FIVE_POWERS, FIVE_NBAR, FIVE_N, **kw)


def five_user_fdma():
    return (UserProfile(FIVE_POWERS, [0.125] * 5),
            SystemConstants(total_bandwidth=0.5, noise_psd=1.0))


def random_fdma(rng, k_max=12):
    """Log-uniform powers, caps spread around the fair share of the band."""
    K = int(rng.integers(1, k_max + 1))
    w_tot = float(10 ** rng.uniform(-1, 1))
    p = 10 ** rng.uniform(-2, 2, K)
    wbar = w_tot / K * 10 ** rng.uniform(-1, 1, K)
    n0 = float(10 ** rng.uniform(-1, 1))
    return UserProfile(p, wbar), SystemConstants(total_bandwidth=w_tot, noise_psd=n0)


def random_cdma(rng, k_max=12, n_max=64, nbar_max=8, sigma=True):
    K = int(rng.integers(1, k_max + 1))
    N = int(rng.integers(1, n_max + 1))
    p = 10 ** rng.uniform(-2, 2, K)
    nbar = rng.integers(1, nbar_max + 1, K)
    s2 = float(10 ** rng.uniform(-1, 1)) if sigma else 1.0
    return CdmaInstance(p, nbar, N, s2)


def sorted_arrays(profile):
    """Sort by minimal PSD with an explicit Python sort (ties keep index order)."""
    idx = sorted(range(profile.num_users),
                 key=lambda k: (-profile.powers[k] / profile.limits[k], k))
    return np.array(idx), profile.powers[idx], profile.limits[idx]


def reference_labels(p, wbar, w_tot, rtol=1e-9):
    """Labels from the due-share test, computed term by term."""
    labels = []
    for k in range(len(p)):
        share = (w_tot - sum(wbar[:k])) * p[k] / sum(p[k:])
        if abs(share - wbar[k]) <= rtol * wbar[k]:
            labels.append("C")
        elif share > wbar[k]:
            labels.append("O")
        else:
            labels.append("U")
    return "".join(labels)


def reference_rate(p, w, n0):
    """sum w log2(1 + p/(n0 w)) with the w = 0 term set to 0."""
    total = 0.0
    for pk, wk in zip(p, w):
        if wk > 0:
            total += wk * math.log2(1 + pk / (n0 * wk))
    return total


def reference_k1_rate(p, wbar, w_tot, n0, k1):
    """Maximum sum rate assembled from the capped head and the shared tail."""
    head = sum(wbar[k] * math.log2(1 + p[k] / (n0 * wbar[k])) for k in range(k1))
    rest = w_tot - sum(wbar[:k1])
    tail = sum(p[k1:])
    if tail == 0 or rest <= 0:
        return head
    return head + rest * math.log2(1 + tail / (n0 * rest))


def exact_floor_ceil(N, nbar_head_sum, p_k, p_tail_sum):
    """Floor and ceiling of ``(N - nbar_head_sum) p_k / p_tail_sum`` in rationals."""
    x = Fraction(N - nbar_head_sum) * Fraction(p_k) / Fraction(p_tail_sum)
    return math.floor(x), math.ceil(x)


def feasible_perturbation(rng, w, wbar, w_tot):
    """A random feasible point near ``w``: mass moved between users or dropped."""
    K = w.size
    w2 = w.copy()
    if K >= 2 and rng.random() < 0.7:
        i, j = rng.choice(K, 2, replace=False)
        room = min(w2[i], wbar[j] - w2[j])
        if room <= 0:
            i, j = j, i
            room = min(w2[i], wbar[j] - w2[j])
        eps = rng.uniform(0.05, 1.0) * room
        w2[i] -= eps
        w2[j] += eps
    else:
        i = int(rng.integers(K))
        w2[i] -= rng.uniform(0.05, 1.0) * w2[i]
    return np.clip(w2, 0.0, wbar)
