import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etgsim.graph import CommGraph, has_spanning_tree, in_degree, is_balanced, laplacian, out_degree


def test_in_degree_two_node_link():
    g = CommGraph.from_edges(2, [(0, 1)])
    assert in_degree(g, 0) == 1.0


def test_in_degree_isolated_node():
    g = CommGraph(np.zeros((3, 3)))
    assert in_degree(g, 2) == 0.0


def test_in_degree_three_ring():
    a = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    g = CommGraph(a)
    assert [in_degree(g, i) for i in range(3)] == [2.0, 2.0, 2.0]


def test_degree_index_out_of_range():
    g = CommGraph.ring(4)
    with pytest.raises(IndexError):
        in_degree(g, 4)
    with pytest.raises(IndexError):
        out_degree(g, -1)


@pytest.mark.parametrize(
    "bad",
    [
        np.zeros((2, 3)),
        np.array([[0.0, -1.0], [1.0, 0.0]]),
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, np.nan], [1.0, 0.0]]),
    ],
)
def test_invalid_adjacency_rejected(bad):
    with pytest.raises(ValueError):
        CommGraph(bad)


def test_laplacian_two_nodes():
    m = laplacian(CommGraph(np.array([[0.0, 1.0], [1.0, 0.0]])))
    np.testing.assert_array_equal(m.laplacian, [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(m.averaging, [[0.5, 0.5], [0.5, 0.5]])


def test_laplacian_single_node():
    m = laplacian(CommGraph(np.zeros((1, 1))))
    np.testing.assert_array_equal(m.laplacian, [[0.0]])
    np.testing.assert_array_equal(m.averaging, [[1.0]])


def test_balance_examples():
    assert is_balanced(CommGraph.ring(6))
    assert not is_balanced(CommGraph.from_edges(2, [(1, 0)], bidirectional=False))
    cycle = CommGraph.from_edges(3, [(1, 0), (2, 1), (0, 2)], bidirectional=False)
    assert is_balanced(cycle)


def test_spanning_tree_examples():
    assert has_spanning_tree(CommGraph.ring(10))
    assert not has_spanning_tree(CommGraph.from_edges(4, [(0, 1), (2, 3)]))
    star = CommGraph.from_edges(5, [(0, k) for k in range(1, 5)])
    assert has_spanning_tree(star)


def test_directed_chain_has_spanning_tree_only_from_its_head():
    # 0 -> 1 -> 2: node 0 reaches everyone.
    g = CommGraph.from_edges(3, [(1, 0), (2, 1)], bidirectional=False)
    assert has_spanning_tree(g)
    # 1 <- 0 and 1 <- 2: nobody reaches both 0 and 2.
    g2 = CommGraph.from_edges(3, [(1, 0), (1, 2)], bidirectional=False)
    assert not has_spanning_tree(g2)


def test_ring_neighbors():
    g = CommGraph.ring(10)
    assert g.neighbors(0) == [1, 9]
    assert g.neighbors(5) == [4, 6]


weights = st.floats(min_value=0.0, max_value=5.0, allow_nan=False)


@st.composite
def adjacency(draw, symmetric=False):
    n = draw(st.integers(min_value=1, max_value=7))
    a = np.array(draw(st.lists(weights, min_size=n * n, max_size=n * n))).reshape(n, n)
    np.fill_diagonal(a, 0.0)
    if symmetric:
        a = np.triu(a) + np.triu(a).T
    return a


@settings(max_examples=100, deadline=None)
@given(adjacency())
def test_laplacian_rows_sum_to_zero(a):
    m = laplacian(CommGraph(a))
    np.testing.assert_allclose(m.laplacian.sum(axis=1), 0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(adjacency(symmetric=True))
def test_symmetric_graphs_are_balanced_and_averaging_annihilates_laplacian(a):
    g = CommGraph(a)
    assert is_balanced(g)
    m = laplacian(g)
    np.testing.assert_allclose(m.laplacian.sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(m.averaging @ m.laplacian, 0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(adjacency(symmetric=True))
def test_spanning_tree_matches_connectivity_for_symmetric_graphs(a):
    import scipy.sparse.csgraph as csg

    n_comp, _ = csg.connected_components(a > 0, directed=False)
    assert has_spanning_tree(CommGraph(a)) == (n_comp == 1)
