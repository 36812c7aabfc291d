import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from adagcn.autodiff import ShapeError, Tape
from adagcn.graph import (AttributedNetwork, ConfigError, DomainPair, GraphDataError,
                          align_attributes, apply_filter, common_attribute_rate,
                          reduce_common_attributes, renormalized_filter, sample_labeled)
from conftest import random_graph


def _net(adj, x=None, vocab=None, labels=None, labeled=(), num_labels=0):
    adj = sp.csr_matrix(np.asarray(adj, dtype=float))
    n = adj.shape[0]
    if x is None:
        x = np.ones((n, 1))
        vocab = ["a"]
    return AttributedNetwork(adj, list(vocab), sp.csr_matrix(x), labels or [], np.asarray(labeled),
                             num_labels)


def _dense_filter(a):
    at = a + np.eye(len(a))
    d = np.diag(1 / np.sqrt(at.sum(1)))
    return d @ at @ d


def test_filter_two_node_path():
    m = renormalized_filter(_net([[0, 1], [1, 0]])).matrix.toarray()
    assert np.allclose(m, 0.5)


def test_filter_isolated_nodes_is_identity():
    m = renormalized_filter(_net(np.zeros((3, 3)))).matrix.toarray()
    assert np.array_equal(m, np.eye(3))


def test_filter_triangle_is_constant_third():
    m = renormalized_filter(_net(np.ones((3, 3)) - np.eye(3))).matrix.toarray()
    assert np.allclose(m, 1 / 3)


def test_filter_star_graph_hand_values():
    a = np.zeros((4, 4))
    a[0, 1:] = a[1:, 0] = 1
    m = renormalized_filter(_net(a)).matrix.toarray()
    assert np.isclose(m[0, 0], 0.25)
    assert np.isclose(m[1, 1], 0.5)
    assert np.isclose(m[0, 1], 1 / np.sqrt(8))
    assert m[1, 2] == 0


def test_filter_rejects_negative_weight():
    net = _net([[0, 1], [1, 0]])
    net.adjacency.data[:] = -1.0
    with pytest.raises(GraphDataError):
        renormalized_filter(net)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.floats(0.0, 1.0), st.booleans(), st.integers(0, 2**31 - 1))
def test_filter_properties(n, p, weighted, seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, n, p, weighted)
    m = renormalized_filter(_net(a.toarray())).matrix
    dense = m.toarray()
    assert np.array_equal(dense, dense.T)
    assert dense.min() >= 0
    assert np.abs(dense - _dense_filter(a.toarray())).max() < 1e-12
    assert np.abs(np.linalg.eigvalsh(dense)).max() <= 1 + 1e-9
    assert m.nnz == a.nnz + n


def test_apply_filter_exponents():
    rng = np.random.default_rng(0)
    a = random_graph(rng, 6, 0.5).toarray()
    f = renormalized_filter(_net(a))
    h = rng.normal(size=(6, 3))
    t = Tape(0)
    assert np.array_equal(apply_filter(t, f.with_exponent(0), t.const(h)).value, h)
    out = apply_filter(t, f.with_exponent(3), t.const(h)).value
    assert np.abs(out - np.linalg.matrix_power(_dense_filter(a), 3) @ h).max() < 1e-10
    with pytest.raises(ShapeError):
        apply_filter(t, f, t.const(np.ones((5, 2))))
    with pytest.raises(ConfigError):
        f.with_exponent(-1)


def test_apply_filter_gradient_uses_transpose():
    rng = np.random.default_rng(1)
    a = random_graph(rng, 5, 0.6).toarray()
    f = renormalized_filter(_net(a)).with_exponent(2)
    h, w = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    t = Tape(0)
    g = t.backward(t.sum(t.mul(apply_filter(t, f, t.param(h, "h")), t.const(w))))["h"]
    m = np.linalg.matrix_power(_dense_filter(a), 2)
    assert np.allclose(g, m.T @ w)


def test_network_validation():
    with pytest.raises(GraphDataError):
        _net([[0, 1], [0, 0]])
    with pytest.raises(GraphDataError):
        _net([[0, 1, 0], [1, 0, 0]])
    with pytest.raises(GraphDataError):
        _net([[0, 1], [1, 0]], x=np.ones((2, 2)), vocab=["a", "a"])
    with pytest.raises(GraphDataError):
        _net([[0, 1], [1, 0]], labels=[frozenset({0}), frozenset()], labeled=[1])


def test_align_attributes_example():
    s = _net([[0, 1], [1, 0]], x=[[1, 2], [0, 3]], vocab=["a", "b"])
    t = _net([[0, 1], [1, 0]], x=[[4, 5], [6, 0]], vocab=["b", "c"])
    pair = align_attributes(s, t)
    assert pair.union_vocab == ["a", "b", "c"]
    assert np.array_equal(pair.source.features.toarray(), [[1, 2, 0], [0, 3, 0]])
    assert np.array_equal(pair.target.features.toarray(), [[0, 4, 5], [0, 6, 0]])
    assert pair.common_attribute_rate() == pytest.approx(1 / 3)


def test_align_identical_and_disjoint():
    s = _net([[0]], x=[[1, 2]], vocab=["a", "b"])
    t = _net([[0]], x=[[3, 4]], vocab=["a", "b"])
    pair = align_attributes(s, t)
    assert pair.c == 2 and pair.common_attribute_rate() == 1.0
    assert np.array_equal(pair.target.features.toarray(), [[3, 4]])
    d = align_attributes(s, _net([[0]], x=[[7]], vocab=["z"]))
    assert d.c == 3 and d.common_attribute_rate() == 0.0
    assert np.array_equal(d.source.features.toarray(), [[1, 2, 0]])
    assert np.array_equal(d.target.features.toarray(), [[0, 0, 7]])


def test_align_rejects_duplicate_vocab():
    s = _net([[0]], x=[[1]], vocab=["a"])
    s.attribute_vocab = ["a", "a"]
    with pytest.raises(GraphDataError):
        align_attributes(s, _net([[0]], x=[[1]], vocab=["a"]))


@settings(max_examples=30, deadline=None)
@given(st.sets(st.sampled_from("abcdefgh"), min_size=1), st.sets(st.sampled_from("abcdefgh"), min_size=1),
       st.integers(0, 2**31 - 1))
def test_align_preserves_values_property(va, vb, seed):
    rng = np.random.default_rng(seed)
    va, vb = sorted(va), sorted(vb)
    xa, xb = rng.normal(size=(3, len(va))), rng.normal(size=(2, len(vb)))
    pair = align_attributes(_net(np.zeros((3, 3)), xa, va), _net(np.zeros((2, 2)), xb, vb))
    assert pair.c == len(set(va) | set(vb))
    col = {name: j for j, name in enumerate(pair.union_vocab)}
    for name, j in zip(va, range(len(va))):
        assert np.array_equal(pair.source.features.toarray()[:, col[name]], xa[:, j])
    for name, j in zip(vb, range(len(vb))):
        assert np.array_equal(pair.target.features.toarray()[:, col[name]], xb[:, j])
    assert pair.source.features.toarray()[:, [col[v] for v in set(vb) - set(va)]].sum() == 0


def _labeled_net(label_sets, num_labels):
    n = len(label_sets)
    return _net(np.zeros((n, n)), labels=[frozenset(s) for s in label_sets], num_labels=num_labels)


def test_sample_labeled_size_and_coverage():
    net = _labeled_net([{i % 5} for i in range(100)], 5)
    idx = sample_labeled(net, 0.1, 0)
    assert len(idx) == 10
    assert np.array_equal(idx, np.sort(idx)) and len(set(idx)) == 10
    assert set().union(*(net.labels[i] for i in idx)) == set(range(5))


def test_sample_labeled_full_rate_and_reproducible():
    net = _labeled_net([{i % 3} for i in range(30)], 3)
    assert np.array_equal(sample_labeled(net, 1.0, 4), np.arange(30))
    assert np.array_equal(sample_labeled(net, 0.2, 9), sample_labeled(net, 0.2, 9))


def test_sample_labeled_rejects_infeasible():
    net = _labeled_net([{i % 5} for i in range(10)], 5)
    with pytest.raises(ConfigError):
        sample_labeled(net, 0.3, 0)
    with pytest.raises(ConfigError):
        sample_labeled(net, 0.0, 0)


def test_sample_labeled_repairs_rare_label():
    # one node carries label 3; most samples of size 5 would miss it
    sets = [{i % 3} for i in range(49)] + [{3}]
    net = _labeled_net(sets, 4)
    for seed in range(20):
        idx = sample_labeled(net, 0.1, seed)
        assert len(idx) == 5 and 49 in idx
        assert set().union(*(net.labels[i] for i in idx)) == set(range(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(20, 80), st.integers(2, 6), st.floats(0.15, 1.0), st.integers(0, 10**6))
def test_sample_labeled_property(n, num_labels, rate, seed):
    rng = np.random.default_rng(seed)
    sets = [{int(rng.integers(num_labels))} for _ in range(n)]
    for k in range(num_labels):
        sets[k] = {k}
    net = _labeled_net(sets, num_labels)
    k = int(np.floor(rate * n + 0.5))
    if k < num_labels:
        with pytest.raises(ConfigError):
            sample_labeled(net, rate, seed)
        return
    idx = sample_labeled(net, rate, seed)
    assert len(idx) == k and len(set(idx)) == k
    assert set().union(*(net.labels[i] for i in idx)) == set(range(num_labels))


def _pair_with_vocab(shared, only_s, only_t):
    vs = [f"c{i}" for i in range(shared)] + [f"s{i}" for i in range(only_s)]
    vt = [f"c{i}" for i in range(shared)] + [f"t{i}" for i in range(only_t)]
    s = _net(np.zeros((2, 2)), np.ones((2, len(vs))), vs)
    t = _net(np.zeros((2, 2)), np.ones((2, len(vt))), vt)
    return align_attributes(s, t)


def test_common_attribute_rate_values():
    assert common_attribute_rate({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert common_attribute_rate(set(), set()) == 0.0
    assert _pair_with_vocab(10, 5, 5).common_attribute_rate() == 0.5


def test_reduce_common_attributes_closed_form():
    # 10 shared + 5 + 5 exclusive: deleting k shared attributes from both
    # networks leaves (10-k)/(20-k); the first k with rate <= 0.25 is 7.
    pair = _pair_with_vocab(10, 5, 5)
    out = reduce_common_attributes(pair, 0.25, 0)
    assert len(out.source_attributes & out.target_attributes) == 3
    assert out.c == 13
    assert out.common_attribute_rate() == pytest.approx(3 / 13)
    assert out.source.features.shape == (2, 13)


def test_reduce_common_attributes_edges():
    pair = _pair_with_vocab(4, 2, 2)
    assert reduce_common_attributes(pair, pair.common_attribute_rate(), 0) is pair
    with pytest.raises(ConfigError):
        reduce_common_attributes(pair, 0.9, 0)
    out = reduce_common_attributes(pair, 0.0, 1)
    assert out.common_attribute_rate() == 0.0 and out.c == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 6), st.integers(0, 6), st.floats(0, 1), st.integers(0, 99))
def test_reduce_common_attributes_property(shared, a, b, frac, seed):
    pair = _pair_with_vocab(shared, a, b)
    target = frac * pair.common_attribute_rate()
    out = reduce_common_attributes(pair, target, seed)
    assert out.common_attribute_rate() <= target + 1e-12
    # minimal deletions: putting back one attribute would exceed the target
    k = shared - len(out.source_attributes & out.target_attributes)
    if k:
        s_back = shared - k + 1
        assert s_back / (s_back + a + b) > target
    # only shared attributes are removed, values on surviving columns unchanged
    assert out.source_attributes <= pair.source_attributes
    assert pair.source_attributes - out.source_attributes <= pair.target_attributes
    assert isinstance(out, DomainPair)


def test_filter_single_node_and_two_node_square():
    assert np.array_equal(renormalized_filter(_net([[0]])).matrix.toarray(), [[1.0]])
    f = renormalized_filter(_net([[0, 1], [1, 0]]))
    assert f.exponent == 1
    t = Tape(0)
    out = apply_filter(t, f.with_exponent(2), t.const(np.eye(2))).value
    assert np.allclose(out, 0.5, atol=1e-15)
    one = apply_filter(t, f, t.const(np.eye(2))).value
    assert np.array_equal(one, t.spmm(f.matrix, t.const(np.eye(2))).value)


def test_filter_fifty_nodes_power_iteration():
    rng = np.random.default_rng(50)
    a = random_graph(rng, 50, 0.1, weighted=True).toarray()
    m = renormalized_filter(_net(a)).matrix
    assert np.abs(m.toarray() - _dense_filter(a)).max() < 1e-12
    v = rng.random(50)
    for _ in range(500):
        v = m @ v
        v /= np.linalg.norm(v)
    assert v @ (m @ v) <= 1 + 1e-9


def test_align_disjoint_preserves_nonzero_counts():
    s = _net(np.zeros((3, 3)), x=[[1, 0], [2, 3], [0, 0]], vocab=["p", "q"])
    t = _net(np.zeros((2, 2)), x=[[1, 1, 0], [0, 4, 5]], vocab=["x", "y", "z"])
    pair = align_attributes(s, t)
    assert pair.c == 5
    assert pair.source.features.nnz == 3 and pair.target.features.nnz == 4


def test_sample_labeled_thousand_nodes():
    rng = np.random.default_rng(3)
    net = _labeled_net([{int(k)} for k in rng.integers(0, 5, 1000)], 5)
    idx = sample_labeled(net, 0.1, 11)
    assert len(idx) == 100
    assert {k for i in idx for k in net.labels[i]} == set(range(5))


def test_reduce_common_attributes_deterministic():
    pair = _pair_with_vocab(10, 5, 5)
    a = reduce_common_attributes(pair, 0.25, 3)
    b = reduce_common_attributes(pair, 0.25, 3)
    assert a.union_vocab == b.union_vocab
    assert a.source_attributes == b.source_attributes
