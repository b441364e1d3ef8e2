import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lexsparse.sparsevec import (
    SparseVector,
    apply_gate,
    dot,
    elu1p,
    elu1p_grad,
    gate_union,
    l2_normalize,
    top_k_dims,
)
from oracles import dense_dot


def sv(pairs):
    return SparseVector.from_pairs(pairs)


@pytest.mark.parametrize("x, want", [(0.0, 1.0), (2.5, 3.5), (-1.0, 0.36787944)])
def test_elu1p_values(x, want):
    assert elu1p(x) == pytest.approx(want, abs=1e-8)


@pytest.mark.parametrize("x, want", [(0.0, 1.0), (-1.0, 0.36787944), (5.0, 1.0)])
def test_elu1p_grad_values(x, want):
    assert elu1p_grad(x) == pytest.approx(want, abs=1e-8)


def test_elu1p_array_matches_scalar():
    xs = np.linspace(-5, 5, 101)
    np.testing.assert_array_equal(elu1p(xs), [elu1p(float(x)) for x in xs])
    np.testing.assert_array_equal(elu1p_grad(xs), [elu1p_grad(float(x)) for x in xs])


@given(st.floats(-700, 1e6, allow_nan=False))
def test_elu1p_positive(x):
    assert elu1p(x) > 0


@pytest.mark.parametrize(
    "values, k, want",
    [
        ([0.1, 0.9, 0.9, 0.2], 2, [1, 2]),
        ([0.5, 0.5, 0.5], 2, [0, 1]),
        ([0.3, 0.1], 0, []),
        ([0.3, 0.1], 5, [0, 1]),
    ],
)
def test_top_k_dims(values, k, want):
    assert top_k_dims(np.array(values), k).tolist() == want


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.integers(0, 50))
def test_top_k_size_and_nesting(values, k):
    values = np.array(values)
    g = top_k_dims(values, k)
    assert g.size == min(k, values.size)
    assert set(g.tolist()) <= set(top_k_dims(values, k + 1).tolist())


@pytest.mark.parametrize(
    "a, b, want", [([1, 3], [3, 5], [1, 3, 5]), ([], [2], [2]), ([0, 1], [], [0, 1])]
)
def test_gate_union(a, b, want):
    assert gate_union(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)).tolist() == want


def test_apply_gate():
    assert apply_gate(np.array([0.5, 1.5, 0.2]), np.array([0, 2])).pairs() == [(0, 0.5), (2, 0.2)]
    assert len(apply_gate(np.array([1.0, 1.0]), np.array([], dtype=np.int64))) == 0
    assert apply_gate(np.array([0.0, 2.0]), np.array([0, 1])).pairs() == [(1, 2.0)]


def test_dot_examples():
    assert dot(sv([(1, 2.0), (3, 1.0)]), sv([(3, 4.0), (5, 1.0)])) == 4.0
    assert dot(sv([(1, 2.0)]), sv([(2, 3.0)])) == 0.0


def test_dot_matches_dense_oracle(rng):
    size = 64
    for _ in range(200):
        a = {int(i): float(rng.uniform(0.01, 3)) for i in rng.choice(size, rng.integers(0, 30), replace=False)}
        b = {int(i): float(rng.uniform(0.01, 3)) for i in rng.choice(size, rng.integers(0, 30), replace=False)}
        got = dot(SparseVector.from_pairs(a.items()), SparseVector.from_pairs(b.items()))
        assert abs(got - dense_dot(a, b, size)) <= 1e-9


vectors = st.dictionaries(st.integers(0, 63), st.floats(0.001, 100), max_size=20).map(
    lambda d: SparseVector.from_pairs(d.items())
)


@given(vectors, vectors, st.floats(0.0, 50.0))
def test_dot_symmetric_and_homogeneous(a, b, c):
    assert dot(a, b) == dot(b, a)
    assert math.isclose(dot(a, b.scale(c)), c * dot(a, b), rel_tol=1e-9, abs_tol=1e-9)


@given(vectors, st.integers(-10, 10).map(lambda e: 2.0**e))
def test_ranking_invariant_under_positive_scaling(q, c):
    # power-of-two factors scale exactly, so ties survive bit for bit
    rng = np.random.default_rng(len(q))
    docs = [
        SparseVector.from_pairs({int(i): float(rng.integers(1, 4)) for i in rng.choice(64, 6, replace=False)}.items())
        for _ in range(30)
    ]
    ids = np.arange(len(docs))
    base = np.array([dot(q, d) for d in docs])
    scaled = np.array([dot(q.scale(c), d) for d in docs])
    np.testing.assert_array_equal(np.lexsort((ids, -base)), np.lexsort((ids, -scaled)))


def test_l2_normalize():
    got = l2_normalize(sv([(1, 3.0), (2, 4.0)]))
    assert got.dims.tolist() == [1, 2]
    np.testing.assert_allclose(got.weights, [0.6, 0.8])
    assert l2_normalize(sv([(0, 1.0)])).pairs() == [(0, 1.0)]
    with pytest.raises(ValueError, match="cannot normalize zero vector"):
        l2_normalize(SparseVector.empty())


def test_from_pairs_canonical():
    v = sv([(5, 1.0), (2, 0.0), (1, 2.0)])
    assert v.pairs() == [(1, 2.0), (5, 1.0)]
    with pytest.raises(ValueError):
        sv([(1, 1.0), (1, 2.0)])
    with pytest.raises(ValueError):
        sv([(1, -1.0)])


@given(vectors, st.floats(1e-3, 1e3))
def test_ranking_order_preserved_up_to_roundoff(q, c):
    rng = np.random.default_rng(len(q) + 7)
    docs = [
        SparseVector.from_pairs({int(i): float(rng.uniform(0.1, 3)) for i in rng.choice(64, 6, replace=False)}.items())
        for _ in range(30)
    ]
    base = np.array([dot(q, d) for d in docs])
    order = np.argsort(-np.array([dot(q.scale(c), d) for d in docs]), kind="stable")
    ranked = base[order]
    assert np.all(ranked[:-1] >= ranked[1:] - 1e-9 * max(1.0, float(base.max())))
