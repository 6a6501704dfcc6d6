"""Core value types shared by the solvers.

Users are always handled internally in non-increasing order of their
minimal PSD ``p_k / limit_k``.  :func:`order_users` produces that order and
every solver maps its results back to the caller's order on output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class InvalidInstanceError(ValueError):
    """Raised when an instance violates one of its documented invariants."""


LIMIT_KINDS = ("bandwidth", "duty", "codes")


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InvalidInstanceError(f"{name} must contain at least one user")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstanceError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class SystemConstants:
    """System-wide constants.

    ``processing_gain`` and ``noise_variance`` describe the CDMA system
    (chips per symbol, noise variance per real dimension).  ``total_bandwidth``
    and ``noise_psd`` describe the FDMA/TDMA form (Hz, one-sided W/Hz).
    """

    processing_gain: int = 1
    noise_variance: float = 1.0
    total_bandwidth: float = 1.0
    noise_psd: float = 1.0

    def __post_init__(self):
        if int(self.processing_gain) != self.processing_gain or self.processing_gain < 1:
            raise InvalidInstanceError("processing_gain must be a positive integer")
        for name in ("noise_variance", "total_bandwidth", "noise_psd"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidInstanceError(f"{name} must be positive and finite")


@dataclass(frozen=True, eq=False)
class UserProfile:
    """Per-user powers and per-user upper limits.

    ``limit_kind`` is one of ``"bandwidth"`` (Hz), ``"duty"`` (duty-cycle
    fraction) or ``"codes"`` (integer number of multi-codes).
    """

    powers: np.ndarray
    limits: np.ndarray
    limit_kind: str = "bandwidth"

    def __post_init__(self):
        powers = _as_vector(self.powers, "powers")
        limits = _as_vector(self.limits, "limits")
        if powers.shape != limits.shape:
            raise InvalidInstanceError(
                f"powers and limits differ in length ({powers.size} != {limits.size})")
        if self.limit_kind not in LIMIT_KINDS:
            raise InvalidInstanceError(f"unknown limit kind {self.limit_kind!r}")
        if np.any(powers < 0):
            raise InvalidInstanceError("powers must be non-negative")
        if not np.any(powers > 0):
            raise InvalidInstanceError("at least one user must have positive power")
        if np.any(limits <= 0):
            raise InvalidInstanceError("limits must be strictly positive")
        if self.limit_kind == "codes" and np.any(limits != np.round(limits)):
            raise InvalidInstanceError("multi-code limits must be integers")
        powers.setflags(write=False)
        limits.setflags(write=False)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "limits", limits)

    @property
    def num_users(self) -> int:
        return self.powers.size

    def permuted(self, permutation: Sequence[int]) -> "UserProfile":
        idx = np.asarray(permutation)
        return UserProfile(self.powers[idx], self.limits[idx], self.limit_kind)


@dataclass(frozen=True, eq=False)
class UserOrder:
    """Sorted-to-original index map.

    ``permutation[i]`` is the original index of the user in sorted position
    ``i``; ``minimal_psds`` are the sorted values of ``p_k / limit_k``.
    """

    permutation: np.ndarray
    minimal_psds: np.ndarray

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.permutation.size)
        return inv

    def to_original(self, sorted_values: np.ndarray) -> np.ndarray:
        """Scatter a vector given in sorted order back to original order."""
        out = np.empty_like(np.asarray(sorted_values))
        out[self.permutation] = sorted_values
        return out

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.permutation == np.arange(self.permutation.size)))


def order_users(profile: UserProfile) -> UserOrder:
    """Order users by non-increasing minimal PSD; ties keep input order."""
    psd = profile.powers / profile.limits
    perm = np.argsort(-psd, kind="stable")
    return UserOrder(perm, psd[perm])


def is_sorted(profile: UserProfile) -> bool:
    psd = profile.powers / profile.limits
    return bool(np.all(psd[:-1] >= psd[1:]))


@dataclass(frozen=True, eq=False)
class CorrelationPair:
    """Block-diagonal data correlation ``P`` with its sequence matrix ``S``.

    ``blocks[k]`` is the ``n_k x n_k`` correlation matrix of user ``k`` and
    ``S`` has ``N`` rows and ``sum(n_k)`` columns, grouped by user.
    """

    blocks: tuple
    S: np.ndarray
    powers: Optional[np.ndarray] = field(default=None)

    @property
    def block_sizes(self) -> list:
        return [np.shape(b)[0] for b in self.blocks]

    @property
    def P(self) -> np.ndarray:
        sizes = self.block_sizes
        out = np.zeros((sum(sizes), sum(sizes)))
        start = 0
        for block, n in zip(self.blocks, sizes):
            out[start:start + n, start:start + n] = block
            start += n
        return out

    def user_columns(self, k: int) -> slice:
        sizes = self.block_sizes
        start = sum(sizes[:k])
        return slice(start, start + sizes[k])

    def signal_correlation(self) -> np.ndarray:
        """Return ``S P S^T``."""
        return self.S @ self.P @ self.S.T


# eigenvalues below this fraction of the largest are treated as zero
EIG_CLAMP = 1e-12


def _check_pair(pair: CorrelationPair, atol: float) -> None:
    S = np.asarray(pair.S, dtype=float)
    if S.ndim != 2 or S.shape[1] != sum(pair.block_sizes):
        raise InvalidInstanceError("S must have one column per data stream")
    N = S.shape[0]
    for k, block in enumerate(pair.blocks):
        block = np.asarray(block, dtype=float)
        if block.ndim != 2 or block.shape[0] != block.shape[1]:
            raise InvalidInstanceError(f"block {k} is not square")
        scale = max(1.0, float(np.max(np.abs(block))) if block.size else 1.0)
        if np.max(np.abs(block - block.T), initial=0.0) > atol * scale:
            raise InvalidInstanceError(f"block {k} is not symmetric")
        if block.size and np.linalg.eigvalsh(block)[0] < -atol * scale:
            raise InvalidInstanceError(f"block {k} is not positive semi-definite")
        if pair.powers is not None:
            cols = S[:, pair.user_columns(k)]
            power = np.trace(cols @ block @ cols.T) / N
            if abs(power - pair.powers[k]) > atol * max(1.0, abs(pair.powers[k])):
                raise InvalidInstanceError(
                    f"user {k} has power {power!r}, expected {pair.powers[k]!r}")


def canonicalize(pair: CorrelationPair, atol: float = 1e-9) -> CorrelationPair:
    """Rewrite ``(P, S)`` with diagonal ``P`` and columns of squared norm ``N``.

    Each block is eigen-decomposed as ``P_k = U_k diag(p~) U_k^T``; the
    rotated columns ``S_k U_k`` are rescaled to squared norm ``N`` and the
    powers rescaled inversely, so ``S P S^T`` is unchanged.
    """
    _check_pair(pair, atol)
    S = np.asarray(pair.S, dtype=float)
    N = S.shape[0]
    new_blocks = []
    new_S = np.empty_like(S)
    for k, block in enumerate(pair.blocks):
        block = np.asarray(block, dtype=float)
        cols = pair.user_columns(k)
        if block.size == 0:
            new_blocks.append(block.copy())
            continue
        evals, U = np.linalg.eigh(0.5 * (block + block.T))
        top = max(float(evals[-1]), 0.0)
        evals = np.where(evals <= EIG_CLAMP * top, 0.0, evals)
        rotated = S[:, cols] @ U
        norms_sq = np.sum(rotated ** 2, axis=0)
        p_hat = np.zeros_like(evals)
        s_hat = np.zeros_like(rotated)
        for l in range(rotated.shape[1]):
            if norms_sq[l] > 0:
                s_hat[:, l] = np.sqrt(N / norms_sq[l]) * rotated[:, l]
                p_hat[l] = evals[l] * norms_sq[l] / N
            else:
                # zero column carries no signal: any direction will do
                s_hat[l % N, l] = np.sqrt(N)
        new_blocks.append(np.diag(p_hat))
        new_S[:, cols] = s_hat
    return CorrelationPair(tuple(new_blocks), new_S, pair.powers)
