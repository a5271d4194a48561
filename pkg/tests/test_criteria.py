import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssnd.core import ActivityMatrix, FrameGrid, PosteriorMatrix
from ssnd.criteria import (
    EPS,
    AttractorSet,
    CriteriaError,
    LabelPermutation,
    attractor_probs,
    bce,
    brute_force_assignment,
    eda_loss,
    eend_loss_lbt,
    eend_loss_pit,
    hungarian,
    lbt_order,
    pairwise_bce,
    total_diar_loss,
)

LN2 = math.log(2.0)


def _PY(P, Y, azimuths=None):
    T, C = np.shape(Y)
    g = FrameGrid(10, None, T)
    names = tuple(f"s{c}" for c in range(C))
    return PosteriorMatrix(g, P, names), ActivityMatrix(g, Y, names, azimuths)


def _random_instance(rng, T=None, C=None):
    T = T or int(rng.integers(1, 21))
    C = C or int(rng.integers(1, 7))
    Y = rng.integers(0, 2, (T, C))
    P = rng.uniform(0, 1, (T, C))
    az = rng.permutation(360)[:C].astype(float)
    return _PY(P, Y, az)


# --- LBT ordering ---------------------------------------------------------------


def test_lbt_order_examples():
    assert lbt_order([10, 90, 170]).order == (0, 1, 2)
    assert lbt_order([170, 10, 90]).order == (1, 2, 0)


def test_lbt_order_ties_keep_index():
    assert lbt_order([30, 10, 30, 10]).order == (1, 3, 0, 2)


def test_lbt_order_sorts_random(rng):
    for _ in range(1000):
        az = rng.uniform(0, 360, int(rng.integers(1, 12)))
        perm = lbt_order(az)
        assert np.all(np.diff(az[list(perm.order)]) >= 0)


def test_label_permutation_validates():
    with pytest.raises(CriteriaError):
        LabelPermutation((0, 0))
    p = LabelPermutation((2, 0, 1))
    np.testing.assert_array_equal(p.apply(np.array([[10, 20, 30]])), [[30, 10, 20]])


# --- BCE --------------------------------------------------------------------------


def test_bce_examples():
    assert bce([1, 0], [1, 0]) <= 1e-6
    assert abs(bce([1], [0.5]) - LN2) < 1e-12


def test_bce_random_against_summation(rng):
    for _ in range(50):
        C = int(rng.integers(1, 8))
        y = rng.integers(0, 2, C)
        p = rng.uniform(0, 1, C)
        expected = 0.0
        for yc, pc in zip(y, p):
            pc = min(max(pc, EPS), 1 - EPS)
            expected -= math.log(pc) if yc else math.log(1 - pc)
        assert abs(bce(y, p) - expected) < 1e-9


# --- LBT loss ------------------------------------------------------------------------


def test_lbt_loss_zero_for_matching_posteriors():
    Y = np.array([[1, 0, 0], [0, 1, 1], [1, 1, 0]])
    az = (200.0, 15.0, 90.0)
    P = lbt_order(az).apply(Y).astype(float)
    loss = eend_loss_lbt(*_PY(P, Y, az))
    assert 0 <= loss < 1e-6


def test_lbt_loss_uniform_is_ln2(rng):
    for _ in range(5):
        _, Y = _random_instance(rng)
        P = PosteriorMatrix(Y.grid, np.full(Y.values.shape, 0.5))
        assert abs(eend_loss_lbt(P, Y) - LN2) <= 1e-9


def test_lbt_loss_two_by_two_hand_case():
    Y = [[1, 0], [0, 1]]
    P = [[0.8, 0.3], [0.4, 0.6]]
    # azimuths (90, 10): output 0 carries label column 1, output 1 carries column 0
    # permuted labels [[0, 1], [1, 0]]
    expected = -(math.log(1 - 0.8) + math.log(0.3) + math.log(0.4) + math.log(1 - 0.6)) / 4
    assert abs(eend_loss_lbt(*_PY(P, Y, (90.0, 10.0))) - expected) < 1e-12


def test_lbt_needs_azimuths_and_shapes():
    P, Y = _PY(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(CriteriaError):
        eend_loss_lbt(P, Y)
    P3, _ = _PY(np.zeros((3, 2)), np.zeros((3, 2)))
    _, Ya = _PY(np.zeros((2, 2)), np.zeros((2, 2)), (1.0, 2.0))
    with pytest.raises(CriteriaError):
        eend_loss_lbt(P3, Ya)


# --- PIT ------------------------------------------------------------------------------


def test_pit_finds_hidden_permutation(rng):
    Y = rng.integers(0, 2, (15, 4))
    perm = (2, 0, 3, 1)
    P = Y[:, perm].astype(float)
    for method in ("brute", "hungarian"):
        loss, found = eend_loss_pit(*_PY(P, Y), method=method)
        assert loss < 1e-6
        np.testing.assert_array_equal(found.apply(Y), P)


def test_pit_single_speaker_identity(rng):
    P, Y = _random_instance(rng, C=1)
    loss, perm = eend_loss_pit(P, Y)
    assert perm.order == (0,)
    assert abs(loss - bce(Y.values, P.values) / Y.values.size) < 1e-12


def test_pit_methods_agree_and_bound_lbt(rng):
    for _ in range(200):
        P, Y = _random_instance(rng)
        lb, pb = eend_loss_pit(P, Y, "brute")
        lh, ph = eend_loss_pit(P, Y, "hungarian")
        assert abs(lb - lh) <= 1e-9
        # the Hungarian permutation is itself a minimiser
        T, C = Y.values.shape
        direct = bce(ph.apply(Y.values), P.values) / (T * C)
        assert abs(direct - lb) <= 1e-9
        assert lh <= eend_loss_lbt(P, Y) + 1e-12


def test_pit_invariant_to_joint_label_permutation(rng):
    for _ in range(50):
        P, Y = _random_instance(rng)
        C = Y.values.shape[1]
        perm = list(rng.permutation(C))
        Yp = ActivityMatrix(Y.grid, Y.values[:, perm], Y.speakers)
        assert abs(eend_loss_pit(P, Y)[0] - eend_loss_pit(P, Yp)[0]) <= 1e-12


def test_pit_rejects_unknown_method_and_large_brute(rng):
    P, Y = _random_instance(rng, T=3, C=2)
    with pytest.raises(CriteriaError):
        eend_loss_pit(P, Y, "greedy")
    P, Y = _random_instance(rng, T=2, C=11)
    with pytest.raises(CriteriaError):
        eend_loss_pit(P, Y, "brute")


def test_pairwise_bce_entries(rng):
    P, Y = _random_instance(rng, T=6, C=3)
    cost = pairwise_bce(P.values, Y.values)
    for i in range(3):
        for j in range(3):
            assert abs(cost[i, j] - bce(Y.values[:, j], P.values[:, i])) < 1e-9


# --- Hungarian ------------------------------------------------------------------------


def test_hungarian_examples():
    a, total = hungarian(np.array([[0, 5, 5], [5, 0, 5], [5, 5, 0]]))
    assert a == (0, 1, 2) and total == 0
    a, total = hungarian([[1, 2], [3, 0]])
    assert a == (0, 1) and total == 1


def test_hungarian_matches_enumeration(rng):
    for _ in range(300):
        n = int(rng.integers(1, 8))
        cost = rng.uniform(-10, 10, (n, n))
        if rng.random() < 0.3:
            cost = np.round(cost)  # ties
        a, total = hungarian(cost)
        _, best = brute_force_assignment(cost)
        assert sorted(a) == list(range(n))
        assert abs(total - best) <= 1e-9
        assert abs(total - cost[np.arange(n), list(a)].sum()) <= 1e-9


def test_hungarian_rectangular(rng):
    cost = rng.uniform(0, 1, (3, 5))
    a, total = hungarian(cost)
    best = min(sum(cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(5), 3))
    assert len(set(a)) == 3 and abs(total - best) < 1e-12
    a_t, total_t = hungarian(cost.T)
    assert abs(total_t - best) < 1e-12


def test_hungarian_edge_cases():
    assert hungarian(np.zeros((0, 0))) == ((), 0.0)
    with pytest.raises(CriteriaError):
        hungarian([[1.0, np.inf], [0.0, 1.0]])
    with pytest.raises(CriteriaError):
        hungarian([1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.lists(st.lists(st.integers(-20, 20), min_size=n, max_size=n), min_size=n, max_size=n)))
def test_hungarian_integer_property(rows):
    cost = np.array(rows, dtype=float)
    assert hungarian(cost)[1] == brute_force_assignment(cost)[1]


# --- attractors and EDA ---------------------------------------------------------------------


def test_attractor_probs_saturates_one_hot():
    E = np.eye(3, 5)
    A = AttractorSet(np.vstack([50 * np.eye(3, 5), np.zeros((1, 5))]))
    P = attractor_probs(np.vstack([E, E]), A)
    expected = np.vstack([np.eye(3), np.eye(3)])
    np.testing.assert_allclose(P.values, np.where(expected == 1, 1.0, 0.5), atol=1e-12)
    # with a negative bias for absent speakers the pattern becomes the identity
    A2 = AttractorSet(np.vstack([50 * (2 * np.eye(3, 5) - np.ones((3, 5))), np.zeros((1, 5))]))
    np.testing.assert_allclose(attractor_probs(E, A2).values, np.eye(3), atol=1e-12)


def test_attractor_probs_zero_embeddings(rng):
    A = AttractorSet(rng.standard_normal((4, 8)))
    P = attractor_probs(np.zeros((6, 8)), A)
    assert P.values.shape == (6, 3)
    np.testing.assert_array_equal(P.values, 0.5)


def test_attractor_probs_scalar_oracle(rng):
    e = rng.standard_normal((7, 4))
    a = rng.standard_normal((3, 4))
    P = attractor_probs(e, AttractorSet(a)).values
    for t in range(7):
        for c in range(2):
            dot = sum(e[t, k] * a[c, k] for k in range(4))
            assert abs(P[t, c] - 1 / (1 + math.exp(-dot))) < 1e-12
    with pytest.raises(CriteriaError):
        attractor_probs(np.zeros((2, 3)), AttractorSet(a))


def test_eda_loss_examples():
    assert eda_loss([1, 1, 1, 0]) < 1e-6
    assert abs(eda_loss([0.5] * 5) - LN2) < 1e-12
    expected = -(math.log(0.9) + math.log(0.8) + math.log(1 - 0.3)) / 3
    assert abs(eda_loss([0.9, 0.8, 0.3]) - expected) < 1e-12
    with pytest.raises(CriteriaError):
        eda_loss([])


def test_total_loss(rng):
    assert total_diar_loss(0, 0) == 0
    assert abs(total_diar_loss(0.3, 0.2) - 0.5) < 1e-15
    P, Y = _random_instance(rng)
    q = rng.uniform(0, 1, Y.values.shape[1] + 1)
    eend = eend_loss_lbt(P, Y)
    total = total_diar_loss(eend, eda_loss(q))
    labels = np.r_[np.ones(q.size - 1), 0.0]
    assert abs(total - (eend + bce(labels, q) / q.size)) < 1e-12
