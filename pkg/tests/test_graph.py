import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikegraph.errors import ContractError, DataError
from spikegraph.graph import (SkeletonGraph, boost_diagonal, init_pa, load_graph, normalize_adjacency,
                              parse_graph, selection_matrix, topk_neighbors, topology_score)


def path_adjacency(v):
    a = np.zeros((v, v))
    for i in range(v - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return a


def test_normalize_examples():
    assert normalize_adjacency(np.zeros((1, 1))).tolist() == [[1.0]]
    np.testing.assert_allclose(normalize_adjacency(path_adjacency(2)), [[0.5, 0.5], [0.5, 0.5]])
    got = normalize_adjacency(path_adjacency(3))
    np.testing.assert_allclose(np.diag(got), [1 / 2, 1 / 3, 1 / 2], atol=1e-15)
    np.testing.assert_allclose([got[0, 1], got[1, 2]], 1 / math.sqrt(6), atol=1e-15)
    assert got[0, 2] == 0.0


def test_normalize_rejects_asymmetric():
    a = np.zeros((2, 2))
    a[0, 1] = 1
    with pytest.raises(ContractError):
        normalize_adjacency(a)


@st.composite
def random_graph(draw):
    v = draw(st.integers(1, 8))
    bits = draw(st.lists(st.booleans(), min_size=v * v, max_size=v * v))
    a = np.triu(np.array(bits, dtype=float).reshape(v, v), 1)
    return a + a.T


@given(random_graph())
def test_normalize_symmetric_and_contractive(a):
    n = normalize_adjacency(a)
    assert np.array_equal(n, n.T)
    assert np.all((n >= 0) & (n <= 1))
    x = np.ones(n.shape[0])
    for _ in range(200):
        y = n @ x
        x = y / np.linalg.norm(y)
    assert np.linalg.norm(n @ x) <= 1 + 1e-9


def test_init_pa_examples():
    a2 = normalize_adjacency(path_adjacency(2))
    pa = init_pa(a2, 3, np.float64)
    assert np.array_equal(pa.value[0], np.eye(2))
    np.testing.assert_allclose(pa.value[2], a2, atol=1e-15)
    assert init_pa(a2, 1).value.shape == (1, 2, 2)
    assert pa.trainable


def test_topology_score_examples():
    assert not topology_score(np.zeros((3, 4, 4))).any()
    a2 = normalize_adjacency(path_adjacency(2))
    np.testing.assert_allclose(topology_score(np.stack([np.eye(2), a2])), [[1.5, 0.5], [0.5, 1.5]])


@given(st.integers(0, 2 ** 16))
def test_topology_score_sign_invariant(seed):
    pa = np.random.default_rng(seed).normal(size=(3, 5, 5))
    flips = np.random.default_rng(seed + 1).choice([-1.0, 1.0], size=pa.shape)
    assert np.array_equal(topology_score(pa), topology_score(pa * flips))


def test_topk_examples():
    scores = np.random.default_rng(0).uniform(size=(5, 5))
    assert topk_neighbors(scores, 1).ravel().tolist() == list(range(5))
    col = np.array([[0.2, 0.0, 0.0], [0.9, 0.0, 0.0], [0.1, 0.0, 0.0]])
    assert topk_neighbors(col, 2, self_boost=False)[0].tolist() == [1, 0]
    tie = np.array([[0.5, 0.0], [0.5, 0.0]])
    assert topk_neighbors(tie, 1, self_boost=False)[0].tolist() == [0]
    with pytest.raises(ContractError):
        topk_neighbors(scores, 6)


def test_boost_diagonal_rule():
    s = np.array([[0.1, 0.7], [0.4, 0.2]])
    b = boost_diagonal(s)
    assert b[0, 0] == 0.4 + 1.0 and b[1, 1] == 0.7 + 1.0


@given(st.integers(1, 8), st.integers(0, 2 ** 16), st.floats(0.1, 10.0))
def test_topk_invariants(v, seed, c):
    scores = np.abs(np.random.default_rng(seed).normal(size=(v, v)))
    k = 1 + seed % v
    nb = topk_neighbors(scores, k)
    boosted = boost_diagonal(scores)
    for j in range(v):
        lst = nb[j].tolist()
        assert len(lst) == k == len(set(lst))
        assert j in lst
        vals = [boosted[u, j] for u in lst]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert np.array_equal(topk_neighbors(scores * c, k), nb)


def test_selection_matrix_counts():
    nb = np.array([[0, 1], [1, 1], [2, 0]])
    m = selection_matrix(nb, 3)
    assert m.tolist() == [[1, 0, 1], [1, 2, 0], [0, 0, 1]]


def test_builtin_graphs():
    ntu = load_graph("ntu")
    ucla = load_graph("ucla")
    assert ntu.V == 25 and ucla.V == 20
    assert ntu.is_connected() and ucla.is_connected()
    assert len(ntu.edges) == 24 and len(ucla.edges) == 19
    for g in (ntu, ucla):
        roots = [v for v, p in enumerate(g.parent) if p == v]
        assert len(roots) == 1


def test_parse_graph_and_errors(tmp_path):
    g = parse_graph("# toy\n3\n0 1\n1 2\nparent:\n0 0\n1 0\n2 1\n")
    assert g.V == 3 and g.edges == ((0, 1), (1, 2)) and g.parent == (0, 0, 1)
    with pytest.raises(DataError, match="line 3"):
        parse_graph("3\n0 1\n0 9\n")
    with pytest.raises(DataError):
        load_graph(tmp_path / "missing.txt")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        SkeletonGraph(3, ((0, 1),))
    assert any("not connected" in str(w.message) for w in caught)


def test_permuted_graph_relabels_edges():
    g = parse_graph("3\n0 1\n1 2\nparent:\n0 0\n1 0\n2 1\n")
    perm = [2, 0, 1]
    p = g.permuted(perm)
    a, b = g.adjacency(), p.adjacency()
    assert np.array_equal(b, a[np.ix_(perm, perm)])
