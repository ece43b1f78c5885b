import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quitlab.losses import (
    Margins,
    QuintupletTuple,
    hinge,
    msml_loss,
    quadruplet_loss,
    quit_loss,
    quit_quad_loss,
    quit_trihard_loss,
    trihard_loss,
    triplet_loss,
)
from quitlab.mining import MiningBatch, NoPositivePair

from conftest import brute_dist, central_diff

M = Margins(0.3, 0.2)
TOL = 1e-12


def batch1d(values, places, anchor=0):
    return MiningBatch(np.asarray(values, float).reshape(-1, 1), places, anchor)


# -- hand values ---------------------------------------------------------------


@pytest.mark.parametrize("x, expected", [(0.5, 0.5), (-1.7, 0.0), (0.0, 0.0)])
def test_hinge(x, expected):
    assert hinge(x) == expected


@pytest.mark.parametrize("a, p, n, expected", [(0, 1, 3, 0.0), (0, 1, 1.1, 0.09)])
def test_triplet_hand_values(a, p, n, expected):
    assert abs(triplet_loss([a], [p], [n], M).value - expected) <= TOL


def test_triplet_coincident():
    r = triplet_loss([0.4], [0.4], [0.4], M)
    assert abs(r.value - 0.3) <= TOL
    assert np.all(r.grads["anchor"] == 0)


@pytest.mark.parametrize(
    "pts, expected",
    [((0.7, 0.7, 0.7, 0.7), 0.5), ((0, 1, 3, 0), 0.0), ((0, 2, 1, 1.5), 7.25)],
)
def test_quadruplet_hand_values(pts, expected):
    assert abs(quadruplet_loss(*[[x] for x in pts], margins=M).value - expected) <= TOL


def test_quadruplet_term_values():
    r = quadruplet_loss([0], [2], [1], [1.5], M)
    np.testing.assert_allclose(r.hinge_args, (3.3, 3.95), rtol=0, atol=TOL)
    assert r.active_terms == 2


@pytest.mark.parametrize(
    "positives, neg, expected",
    [([0.5, 1.0], 1.44, 0.0), ([1.0, 1.1], 1.0, 0.81)],
)
def test_quit_loss_hand_values(positives, neg, expected):
    tup = QuintupletTuple([0.0], np.array(positives).reshape(-1, 1))
    assert abs(quit_loss(tup, neg, M).value - expected) <= TOL


def test_quit_loss_k1_equals_triplet(rng):
    for _ in range(200):
        a, p, n = rng.standard_normal((3, 4))
        tup = QuintupletTuple(a, p[None])
        nd = float(np.sum((a - n) ** 2))
        q = quit_loss(tup, nd, M)
        t = triplet_loss(a, p, n, M)
        assert q.value == t.value


@pytest.mark.parametrize(
    "values, expected_neg",
    [([0, 1, 2, 5], 2), ([0, 1, 1.2, 9], 2)],
)
def test_trihard_examples(values, expected_neg):
    r = trihard_loss(batch1d(values, "AABB"), M)
    assert r.indices["negative"] == expected_neg
    assert r.value == 0.0


def test_trihard_zero_positive_distance():
    r = trihard_loss(batch1d([0, 0, 0.6, -0.8], "AABB"), M)
    assert r.value == 0.0


def test_quit_trihard_example():
    r = quit_trihard_loss(batch1d([0, 0.5, 1.0, 1.2, 3.0], "AAABB"), 2, M)
    assert r.indices["negative"] == 3
    assert (r.indices["positive_1"], r.indices["positive_2"]) == (1, 2)
    assert abs(r.value) <= TOL


def test_quit_quad_coincident():
    r = quit_quad_loss(batch1d([1.5] * 5, "AAABB"), 2, M)
    assert abs(r.value - 1.0) <= TOL


def test_msml_hand_value():
    # positive pairs: (0,2)=4, (3,4)=1 ; closest negative pair (2,3)=1
    r = msml_loss(batch1d([0, 2, 3, 4], "AABB"), M)
    assert abs(r.value - 3.3) <= TOL
    assert {r.indices["positive_a"], r.indices["positive_b"]} == {0, 1}
    assert {r.indices["negative_a"], r.indices["negative_b"]} == {1, 2}


def test_msml_inactive_and_error():
    assert msml_loss(batch1d([0, 0.1, 5, 5.1], "AABB"), M).value == 0.0
    with pytest.raises(NoPositivePair):
        msml_loss(batch1d([0, 1], "AB"), M)


def test_margin_validation():
    with pytest.raises(ValueError):
        Margins(alpha=-0.1)
    with pytest.raises(ValueError):
        Margins(beta=float("nan"))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        triplet_loss([0, 1], [1], [2])


# -- independent oracles -------------------------------------------------------


def expand_quit_quad(E, places, anchor, k, m, metric):
    """Term-by-term expansion with brute-force mining."""
    d = lambda i, j: brute_dist(E[i], E[j], metric)
    pos = sorted((d(anchor, j), j) for j in range(len(E)) if j != anchor and places[j] == places[anchor])[:k]
    neg = sorted((d(anchor, j), j) for j in range(len(E)) if places[j] != places[anchor])
    n1, n2 = neg[0][1], neg[1][1]
    total = 0.0
    for dp, _ in pos:
        total += max(dp - d(anchor, n1) + m.alpha, 0.0)
        total += max(dp - d(n1, n2) + m.beta, 0.0)
    return total


@pytest.mark.parametrize("metric", ["squared_l2", "l2"])
def test_quit_quad_matches_term_expansion(rng, metric):
    for _ in range(100):
        E = rng.standard_normal((9, 3))
        places = list("AAAABBCCC")
        b = MiningBatch(E, places, int(rng.integers(4)))
        got = quit_quad_loss(b, 2, M, metric).value
        assert abs(got - expand_quit_quad(E, places, b.anchor_index, 2, M, metric)) <= 1e-12


def test_quit_trihard_gradients_closed_form(rng):
    # squared-L2: d/da = sum 2(n - p_i), d/dp_i = 2(p_i - a), d/dn = sum 2(a - n)
    for _ in range(50):
        E = rng.standard_normal((8, 2)) * 0.3
        b = MiningBatch(E, list("AAAABBBB"), 0)
        r = quit_trihard_loss(b, 2, Margins(5.0, 0.2))  # large margin: all terms active
        a, n = E[0], E[r.indices["negative"]]
        ps = [E[r.indices[f"positive_{i}"]] for i in (1, 2)]
        np.testing.assert_allclose(r.grads["anchor"], sum(2 * (n - p) for p in ps), atol=1e-12)
        for i, p in enumerate(ps, 1):
            np.testing.assert_allclose(r.grads[f"positive_{i}"], 2 * (p - a), atol=1e-12)
        np.testing.assert_allclose(r.grads["negative"], 2 * 2 * (a - n), atol=1e-12)


def _far_from_kinks(args, margin=1e-3):
    return all(abs(x) > margin for x in args)


@pytest.mark.parametrize("metric", ["squared_l2", "l2"])
def test_tuple_losses_match_finite_differences(rng, metric):
    checked = 0
    while checked < 30:
        X = rng.standard_normal((4, 3))
        r = quadruplet_loss(*X, margins=M, metric=metric)
        if not _far_from_kinks(r.hinge_args):
            continue
        g = np.stack([r.grads[k] for k in ("anchor", "positive", "negative_1", "negative_2")])
        num = central_diff(lambda Y: quadruplet_loss(*Y, margins=M, metric=metric).value, X)
        assert np.linalg.norm(g - num) <= 1e-5 * max(np.linalg.norm(g), np.linalg.norm(num), 1e-8)
        t = triplet_loss(*X[:3], margins=M, metric=metric)
        if _far_from_kinks(t.hinge_args):
            gt = np.stack([t.grads[k] for k in ("anchor", "positive", "negative")])
            numt = central_diff(lambda Y: triplet_loss(*Y, margins=M, metric=metric).value, X[:3])
            assert np.linalg.norm(gt - numt) <= 1e-5 * max(np.linalg.norm(gt), np.linalg.norm(numt), 1e-8)
        checked += 1


# -- reductions ----------------------------------------------------------------


def test_k1_reductions_bit_exact(rng):
    for _ in range(300):
        n = int(rng.integers(4, 12))
        E = rng.standard_normal((n, 3))
        places = rng.integers(0, 3, n)
        a = int(rng.integers(n))
        b = MiningBatch(E, places, a)
        if (places == places[a]).sum() < 2 or (places != places[a]).sum() < 2:
            continue
        for metric in ("squared_l2", "l2"):
            th, qt = trihard_loss(b, M, metric), quit_trihard_loss(b, 1, M, metric)
            assert th.value == qt.value
            assert np.array_equal(th.batch_gradient(n), qt.batch_gradient(n))
            qq = quit_quad_loss(b, 1, M, metric)
            i = qq.indices
            qd = quadruplet_loss(E[a], E[i["positive_1"]], E[i["negative_1"]], E[i["negative_2"]], M, metric)
            assert qq.value == qd.value
            assert np.array_equal(qq.grads["anchor"], qd.grads["anchor"])
            assert np.array_equal(qq.grads["positive_1"], qd.grads["positive"])


def test_triplet_single_negative_equals_trihard(rng):
    for _ in range(100):
        E = rng.standard_normal((3, 2))
        b = MiningBatch(E, "AAB", 0)
        assert triplet_loss(E[0], E[1], E[2], M).value == trihard_loss(b, M).value


# -- properties ----------------------------------------------------------------

pts = arrays(float, (5, 2), elements=st.floats(-5, 5, allow_nan=False))
shift = arrays(float, 2, elements=st.floats(-5, 5, allow_nan=False))
metrics = st.sampled_from(["squared_l2", "l2"])


def all_losses(E, metric, m=M):
    b = MiningBatch(E, "AAABB", 0)
    return [
        triplet_loss(E[0], E[1], E[3], m, metric).value,
        quadruplet_loss(E[0], E[1], E[3], E[4], m, metric).value,
        trihard_loss(b, m, metric).value,
        quit_trihard_loss(b, 2, m, metric).value,
        quit_quad_loss(b, 2, m, metric).value,
        msml_loss(b, m, metric).value,
    ]


@given(pts, metrics)
@settings(max_examples=150, deadline=None)
def test_nonnegative(E, metric):
    assert all(v >= 0 for v in all_losses(E, metric))


@given(pts, shift, metrics)
@settings(max_examples=150, deadline=None)
def test_translation_invariance(E, c, metric):
    base, moved = all_losses(E, metric), all_losses(E + c, metric)
    np.testing.assert_allclose(moved, base, rtol=1e-9, atol=1e-9)


@given(pts, st.floats(0, 2), metrics)
@settings(max_examples=150, deadline=None)
def test_alpha_monotone(E, delta, metric):
    lo = all_losses(E, metric, Margins(0.3, 0.2))
    hi = all_losses(E, metric, Margins(0.3 + delta, 0.2))
    assert all(h >= l - 1e-12 for h, l in zip(hi, lo))


@given(pts, st.floats(0.01, 3))
@settings(max_examples=150, deadline=None)
def test_farther_negative_never_increases_quit_trihard(E, step):
    b = MiningBatch(E, "AAABB", 0)
    r = quit_trihard_loss(b, 2, M)
    n = r.indices["negative"]
    direction = E[n] - E[0]
    assume(np.linalg.norm(direction) > 1e-6)
    F = E.copy()
    F[n] = E[n] + step * direction / np.linalg.norm(direction)
    assert quit_trihard_loss(b.with_embeddings(F), 2, M).value <= r.value + 1e-12


@given(pts, metrics)
@settings(max_examples=150, deadline=None)
def test_zero_value_means_zero_gradient(E, metric):
    b = MiningBatch(E, "AAABB", 0)
    for r in (quit_trihard_loss(b, 2, M, metric), quit_quad_loss(b, 2, M, metric), msml_loss(b, M, metric)):
        if r.value == 0 and all(x != 0 for x in r.hinge_args):
            assert all(np.all(g == 0) for g in r.grads.values())
