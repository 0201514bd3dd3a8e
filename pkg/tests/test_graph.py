import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_graph
from fedgl.errors import ValidationError
from fedgl.graph import (
    GlobalRegistry,
    Graph,
    induced_subgraph,
    merge_graphs,
    normalize_adjacency,
    project_rows,
    project_submatrix,
    scatter_rows,
)


def path3():
    return sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))


class TestNormalize:
    def test_single_node(self):
        assert normalize_adjacency(sp.csr_matrix((1, 1))).toarray().tolist() == [[1.0]]

    def test_two_nodes(self):
        out = normalize_adjacency(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])).toarray()
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_path_hand_values(self):
        a = normalize_adjacency(path3()).toarray()
        assert a[0, 0] == pytest.approx(1 / 2)
        assert a[0, 1] == pytest.approx(1 / math.sqrt(6))
        assert a[1, 1] == pytest.approx(1 / 3)
        assert a[1, 2] == pytest.approx(1 / math.sqrt(6))
        assert a[2, 2] == pytest.approx(1 / 2)
        assert a[0, 2] == 0.0

    def test_matches_dense_oracle(self, rng):
        for _ in range(10):
            g = random_graph(7, 2, 2, rng)
            np.testing.assert_allclose(normalize_adjacency(g.adjacency).toarray(),
                                       oracles.normalize(g.adjacency), atol=1e-12)

    def test_sorted_indices_and_symmetry(self, rng):
        a = normalize_adjacency(random_graph(9, 2, 2, rng).adjacency)
        assert a.has_sorted_indices
        assert abs(a - a.T).max() == 0
        assert np.all(a.diagonal() > 0)
        assert a.data.min() >= 0 and a.data.max() <= 1

    @pytest.mark.parametrize("bad", [
        [[0.0, 1.0], [0.0, 0.0]],
        [[0.0, -1.0], [-1.0, 0.0]],
    ])
    def test_rejects_asymmetric_or_negative(self, bad):
        with pytest.raises(ValidationError):
            normalize_adjacency(sp.csr_matrix(bad))

    @pytest.mark.parametrize("n", [3, 5, 8])
    def test_cycle_rows_sum_to_one(self, n):
        rows = np.arange(n)
        adj = sp.csr_matrix((np.ones(n), (rows, (rows + 1) % n)), shape=(n, n))
        adj = adj + adj.T
        sums = np.asarray(normalize_adjacency(adj).sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(0, 2**31 - 1))
    def test_permutation_equivariant(self, n, seed):
        rng = np.random.default_rng(seed)
        adj = random_graph(n, 1, 1, rng).adjacency
        perm = rng.permutation(n)
        lhs = normalize_adjacency(adj[perm][:, perm]).toarray()
        rhs = normalize_adjacency(adj).toarray()[perm][:, perm]
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)


class TestProjection:
    def test_project_rows_example(self):
        g = np.array([[1, 0], [0, 1], [1, 1]], dtype=float)
        assert project_rows(g, [2, 0]).tolist() == [[1, 1], [1, 0]]

    def test_project_all_is_copy(self):
        g = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(project_rows(g, [0, 1, 2]), g)

    def test_project_empty(self):
        assert project_rows(np.ones((3, 2)), []).shape == (0, 2)

    def test_project_unknown_id(self):
        with pytest.raises(ValidationError):
            project_rows(np.ones((3, 2)), [3])
        with pytest.raises(ValidationError):
            project_rows(np.ones((3, 2)), [4], union_ids=[1, 2, 5])

    def test_scatter_example(self):
        assert scatter_rows([[1, 2]], [1], 3).tolist() == [[0, 0], [1, 2], [0, 0]]

    def test_scatter_duplicates(self):
        with pytest.raises(ValidationError):
            scatter_rows([[1.0], [2.0]], [1, 1], 3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_round_trip(self, union, width, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(0, union + 1))
        ids = rng.choice(union, size=k, replace=False)
        x = rng.normal(size=(k, width))
        assert np.array_equal(project_rows(scatter_rows(x, ids, union), ids), x)

    def test_round_trip_with_union_ids(self):
        union_ids = np.array([3, 8, 10, 42])
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = scatter_rows(x, [42, 8], 4, union_ids)
        assert out.tolist() == [[0, 0], [3, 4], [0, 0], [1, 2]]
        assert np.array_equal(project_rows(out, [42, 8], union_ids), x)

    def test_submatrix_drops_absent_nodes(self):
        m = sp.csr_matrix(np.arange(16.0).reshape(4, 4))
        sub = project_submatrix(m, [3, 1]).toarray()
        assert sub.tolist() == [[15, 13], [7, 5]]


class TestRegistry:
    def test_counts(self, rng):
        a = random_graph(4, 2, 2, rng, ids=np.array([0, 1, 2, 3]))
        b = random_graph(3, 2, 2, rng, ids=np.array([2, 3, 9]))
        reg = GlobalRegistry.from_graphs([a, b])
        assert reg.union_ids.tolist() == [0, 1, 2, 3, 9]
        assert reg.total_multiplicity == 7
        assert reg.union_size <= reg.total_multiplicity
        assert reg.positions([9, 0]).tolist() == [4, 0]
        with pytest.raises(ValidationError):
            reg.positions([5])


def _master(rng, n=10):
    return random_graph(n, 3, 2, rng)


def _edge_set(g):
    coo = sp.triu(g.adjacency).tocoo()
    return {(int(g.global_ids[i]), int(g.global_ids[j])) for i, j in zip(coo.row, coo.col)}


class TestGraphValidation:
    def test_asymmetric(self):
        with pytest.raises(ValidationError):
            Graph(sp.csr_matrix([[0.0, 1.0], [0.0, 0.0]]), np.ones((2, 1)), np.zeros((2, 1)),
                  np.zeros(2, bool), np.zeros(2, bool), np.zeros(2, bool))

    def test_overlapping_masks(self):
        m = np.array([True, False])
        with pytest.raises(ValidationError):
            Graph(sp.csr_matrix((2, 2)), np.ones((2, 1)), np.eye(2), m, m, np.zeros(2, bool))

    def test_duplicate_ids(self):
        z = np.zeros(2, bool)
        with pytest.raises(ValidationError):
            Graph(sp.csr_matrix((2, 2)), np.ones((2, 1)), np.eye(2), z, z, z, np.array([4, 4]))

    def test_bad_label_row(self):
        z = np.zeros(2, bool)
        with pytest.raises(ValidationError):
            Graph(sp.csr_matrix((2, 2)), np.ones((2, 1)), np.array([[1.0, 1.0], [0, 0]]), z, z, z)


class TestMerge:
    def test_single(self, rng):
        g = _master(rng)
        m = merge_graphs([g])
        assert _edge_set(m) == _edge_set(g)
        assert np.array_equal(m.features, g.features)

    def test_disjoint_block_diagonal(self):
        z = np.zeros(2, bool)
        one = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
        a = Graph(one, np.ones((2, 1)), np.zeros((2, 1)), z, z, z, np.array([0, 1]))
        b = Graph(one, 2 * np.ones((2, 1)), np.zeros((2, 1)), z, z, z, np.array([2, 3]))
        m = merge_graphs([a, b])
        expected = np.zeros((4, 4))
        expected[:2, :2] = one.toarray()
        expected[2:, 2:] = one.toarray()
        assert np.array_equal(m.adjacency.toarray(), expected)

    def test_shared_node_edge_once(self, rng):
        master = _master(rng)
        adj = master.adjacency.tolil()
        adj[5, 7] = adj[7, 5] = 1.0
        master = Graph(adj.tocsr(), master.features, master.labels, master.train_mask,
                       master.val_mask, master.test_mask)
        a = induced_subgraph(master, [5, 7, 1])
        b = induced_subgraph(master, [5, 2])
        m = merge_graphs([a, b])
        assert (5, 7) in _edge_set(m)
        assert m.adjacency.max() == 1.0

    def test_brute_force_union(self, rng):
        master = _master(rng, 12)
        for _ in range(10):
            parts = [np.sort(rng.choice(12, size=int(rng.integers(1, 9)), replace=False)) for _ in range(3)]
            subs = [induced_subgraph(master, p) for p in parts]
            m = merge_graphs(subs)
            nodes = sorted(set().union(*map(set, parts)))
            edges = set().union(*(_edge_set(s) for s in subs))
            assert m.global_ids.tolist() == nodes
            assert _edge_set(m) == edges
            assert np.array_equal(m.features, master.features[nodes])
            assert m.num_nodes <= sum(s.num_nodes for s in subs)

    def test_commutative_idempotent(self, rng):
        master = _master(rng)
        a = induced_subgraph(master, [0, 2, 4, 6])
        b = induced_subgraph(master, [1, 2, 3, 6, 9])
        ab, ba, aa = merge_graphs([a, b]), merge_graphs([b, a]), merge_graphs([a, a])
        assert _edge_set(ab) == _edge_set(ba)
        assert ab.global_ids.tolist() == ba.global_ids.tolist()
        assert _edge_set(aa) == _edge_set(a)

    def test_conflicting_features(self, rng):
        master = _master(rng)
        a = induced_subgraph(master, [0, 1])
        b = induced_subgraph(master, [1, 2])
        b = Graph(b.adjacency, b.features + 1, b.labels, b.train_mask, b.val_mask, b.test_mask, b.global_ids)
        with pytest.raises(ValidationError):
            merge_graphs([a, b])
