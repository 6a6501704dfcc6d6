import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sumrate import cdma, sequences
from sumrate.cdma import CdmaInstance
from sumrate.fdma import Label
from sumrate.model import InvalidInstanceError
from sumrate.sequences import SequenceMatrix, VirtualUser, VirtualUserSet

from helpers import five_user_cdma


def _logdet_reference(S, P, s2):
    """Plain slogdet of the full matrix, P possibly non-diagonal."""
    N = S.shape[0]
    sign, val = np.linalg.slogdet(np.eye(N) + S @ P @ S.T / s2)
    assert sign > 0
    return val / (2 * N * math.log(2))


def test_virtual_users_five_user():
    sol = cdma.solve_cdma(five_user_cdma(), cdma.MIN_COUNT)
    vset = sequences.build_virtual_users(sol)
    assert len(vset.orthogonal_entries) == 7
    assert vset.complement_dim == 1
    assert len(vset.complement_entries) == 2
    sol = cdma.solve_cdma(five_user_cdma(), cdma.EQUAL_POWER)
    vset = sequences.build_virtual_users(sol)
    assert len(vset.orthogonal_entries) == 6
    assert {e.user for e in vset.complement_entries} == {3, 4}
    assert all(e.label is Label.UNDERSIZED for e in vset.complement_entries)


def test_virtual_users_all_non_undersized():
    sol = cdma.solve_cdma(CdmaInstance([3.0, 3.0], [2, 2], 6))
    vset = sequences.build_virtual_users(sol)
    assert len(vset.orthogonal_entries) == 4 and vset.complement_dim == 2
    seq = sequences.construct_sequences(vset, seed=3)
    G = seq.S.T @ seq.S
    assert np.allclose(G, 6 * np.eye(4), atol=1e-12)


def test_virtual_users_reject_inconsistent_split():
    sol = cdma.solve_cdma(five_user_cdma())
    broken = list(sol.w_kl_star)
    broken[4] = broken[4] * 2
    bad = cdma.CdmaSolution(sol.w_k_star, sol.w_k_star_k2, broken, sol.p_kl_star,
                            sol.n_k_star, sol.classification, sol.order, sol.sum_rate,
                            sol.achieves_mac, sol.strategy, sol.processing_gain)
    with pytest.raises(InvalidInstanceError):
        sequences.build_virtual_users(bad)


def test_construct_five_user_mincount():
    sol, vset, seq = sequences.optimal_system(five_user_cdma(), cdma.MIN_COUNT, seed=1)
    assert seq.S.shape == (8, 10)
    report = sequences.verify_gram(seq, vset)
    assert report["passed"] and report["gram"] <= 1e-10
    assert len(seq.complement_columns) == 2
    rate = sequences.logdet_sum_rate(seq.S, seq.powers)
    assert rate == pytest.approx(sol.sum_rate, abs=1e-9)
    # inactive column (user 5, second stream) is zero
    assert np.all(seq.S[:, 9] == 0)


def test_one_dimensional_wbe():
    X = sequences.weighted_tight_frame([2.0, 2.0], 1)
    assert X.shape == (1, 2)
    assert np.allclose(X[0] ** 2, [2.0, 2.0])
    unit = X / np.sqrt([2.0, 2.0])
    assert 2.0 * np.sum(unit ** 2) == pytest.approx(4.0)


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=12), st.integers(1, 6))
def test_property_tight_frame(weights, dim):
    w = np.array(weights)
    if w.size < dim:
        return
    c = w.sum() / dim
    if w.max() > c:
        with pytest.raises(sequences.InfeasibleComplementError):
            sequences.weighted_tight_frame(w, dim)
        return
    X = sequences.weighted_tight_frame(w, dim)
    assert np.allclose(np.sum(X ** 2, axis=0), w, rtol=1e-10, atol=1e-12)
    assert np.allclose(X @ X.T, c * np.eye(dim), atol=1e-10 * c)


def test_verify_gram_detects_perturbation():
    _, vset, seq = sequences.optimal_system(five_user_cdma(), cdma.EQUAL_POWER, seed=2)
    rng = np.random.default_rng(0)
    S = seq.S + 1e-4 * rng.standard_normal(seq.S.shape)
    bad = SequenceMatrix(S, seq.powers, seq.orthogonal_columns, seq.complement_columns)
    assert not sequences.verify_gram(bad, vset)["passed"]


def test_verify_gram_exact_orthogonal():
    N = 4
    entries = tuple(VirtualUser(k, 0, k, 1.0, 1 / (2 * N), Label.CRITICAL, True)
                    for k in range(3))
    vset = VirtualUserSet(entries, N, 3)
    seq = SequenceMatrix(np.sqrt(N) * np.eye(N)[:, :3], np.ones(3), (0, 1, 2), ())
    report = sequences.verify_gram(seq, vset)
    assert report["orthogonality"] == report["gram"] == report["norms"] == 0.0


def test_logdet_examples():
    N, p, s2 = 4, 0.7, 1.3
    S = np.sqrt(N) * np.eye(N)
    assert sequences.logdet_sum_rate(S, np.full(N, p), s2) == pytest.approx(
        0.5 * math.log2(1 + N * p / s2), rel=1e-14)
    assert sequences.logdet_sum_rate(S, np.zeros(N)) == 0.0
    assert sequences.logdet_sum_rate(S, np.diag(np.full(N, p)), s2) > 0
    with pytest.raises(InvalidInstanceError):
        sequences.logdet_sum_rate(S, -np.ones(N))


def test_deterministic_given_seed():
    a = sequences.optimal_system(five_user_cdma(), cdma.MIN_COUNT, seed=5)[2].S
    b = sequences.optimal_system(five_user_cdma(), cdma.MIN_COUNT, seed=5)[2].S
    c = sequences.optimal_system(five_user_cdma(), cdma.MIN_COUNT, seed=6)[2].S
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def _random_small(rng):
    K = int(rng.integers(1, 7))
    N = int(rng.integers(1, 17))
    return CdmaInstance(10 ** rng.uniform(-2, 2, K), rng.integers(1, 5, K), N,
                        float(10 ** rng.uniform(-1, 1)))


def test_random_end_to_end_and_structure():
    rng = np.random.default_rng(9)
    for i in range(150):
        inst = _random_small(rng)
        for strategy in cdma.STRATEGIES:
            sol, vset, seq = sequences.optimal_system(inst, strategy, seed=i)
            report = sequences.verify_gram(seq, vset)
            assert report["passed"], report
            rate = sequences.logdet_sum_rate(seq.S, seq.powers, inst.noise_variance)
            assert rate == pytest.approx(sol.sum_rate, abs=1e-9)
            # orthogonal columns per user equal the split's orthogonal count
            per_user = np.zeros(inst.num_users, dtype=int)
            for e in vset.orthogonal_entries:
                per_user[e.user] += 1
            assert np.array_equal(per_user, sol.n_orthogonal)
            # critically-sized virtual users are orthogonal to everything else
            crit = [e.column for e in vset.entries if e.label is Label.CRITICAL]
            active = [e.column for e in vset.entries]
            for col in crit:
                others = [c for c in active if c != col]
                assert np.max(np.abs(seq.S[:, col] @ seq.S[:, others]), initial=0) <= 1e-8 * inst.processing_gain


def test_rotation_invariance():
    rng = np.random.default_rng(10)
    for _ in range(50):
        inst = _random_small(rng)
        sol, vset, seq = sequences.optimal_system(inst, cdma.EQUAL_POWER, seed=0)
        base = sequences.logdet_sum_rate(seq.S, seq.powers, inst.noise_variance)
        S = seq.S.copy()
        P = np.diag(seq.powers)
        start = 0
        for k in range(inst.num_users):
            n = int(inst.limits[k])
            V, _ = np.linalg.qr(rng.standard_normal((n, n)))
            blk = slice(start, start + n)
            S[:, blk] = S[:, blk] @ V.T
            P[blk, blk] = V @ P[blk, blk] @ V.T
            start += n
        assert _logdet_reference(S, P, inst.noise_variance) == pytest.approx(base, abs=1e-10)
