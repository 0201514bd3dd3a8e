import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_graph
from fedgl.client import ClientState, complement_adjacency, local_train, prepare_ssl_targets
from fedgl.errors import NumericError, ValidationError
from fedgl.gcn import AdamState, ModelWeights, glorot_init, loss, forward, train_epoch
from fedgl.graph import Graph, normalize_adjacency


def _state(g, w, seed=0):
    return ClientState(g, w, AdamState.zeros_like(w), np.random.default_rng(seed))


def _labelled(rng, n=20, d=6, c=3):
    g = random_graph(n, d, c, rng, p=0.2)
    train = np.zeros(n, bool)
    train[:6] = True
    return g.with_masks(train, np.zeros(n, bool), np.zeros(n, bool))


class TestComplement:
    def test_beta_zero(self, rng):
        base = normalize_adjacency(random_graph(4, 1, 1, rng).adjacency)
        out = complement_adjacency(base, sp.csr_matrix(np.ones((4, 4))), 0.0)
        assert (out != base).nnz == 0

    def test_zero_slice(self, rng):
        base = normalize_adjacency(random_graph(4, 1, 1, rng).adjacency)
        assert (complement_adjacency(base, sp.csr_matrix((4, 4)), 3.0) != base).nnz == 0

    def test_unit_degree_example(self):
        base = sp.csr_matrix(np.eye(2))
        out = complement_adjacency(base, sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]), 1.0)
        assert out.toarray().tolist() == [[1, 1], [1, 1]]

    def test_zero_degree_row(self):
        base = sp.csr_matrix(np.eye(3))
        slice_ = sp.csr_matrix([[0, 0.5, 0.5], [0, 0, 0], [1.0, 0, 0]])
        out = complement_adjacency(base, slice_, 1.0).toarray()
        d = np.array([1.0, 0.0, 1.0])
        inv = np.where(d > 0, 1 / np.sqrt(np.where(d > 0, d, 1)), 0)
        np.testing.assert_allclose(out, np.eye(3) + inv[:, None] * slice_.toarray() * inv[None, :])

    def test_linear_in_beta_and_base_untouched(self, rng):
        base = normalize_adjacency(random_graph(5, 1, 1, rng).adjacency)
        before = base.copy()
        slice_ = sp.csr_matrix(rng.random((5, 5)) * (rng.random((5, 5)) < 0.5))
        one = complement_adjacency(base, slice_, 1.0) - base
        two = complement_adjacency(base, slice_, 2.5) - base
        np.testing.assert_allclose(two.toarray(), 2.5 * one.toarray(), atol=1e-14)
        assert (base != before).nnz == 0

    def test_negative_beta(self):
        with pytest.raises(ValidationError):
            complement_adjacency(sp.csr_matrix(np.eye(2)), None, -1.0)


class TestSSLTargets:
    def test_all_zero(self):
        _, mask = prepare_ssl_targets(np.zeros((3, 2)), np.zeros(3, bool))
        assert not mask.any()

    def test_train_removed_and_count(self):
        pl = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], float)
        targets, mask = prepare_ssl_targets(pl, np.array([True, False, False, False]))
        assert mask.tolist() == [False, True, True, True]
        assert not targets[0].any()
        assert mask.sum() == 3


class TestLocalTrain:
    def test_loss_decreases(self, rng):
        g = _labelled(rng)
        w = glorot_init(6, 8, 3, np.random.default_rng(0))
        state = _state(g, w)
        before = loss(forward(state.base_adj, g.features, w), g.labels, g.train_mask)
        up = local_train(state, w, epochs=50)
        after = loss(forward(state.base_adj, g.features, up.weights), g.labels, g.train_mask)
        assert after < before
        assert up.node_count == 20 and np.array_equal(up.ids, g.global_ids)
        np.testing.assert_allclose(up.predictions.sum(axis=1), 1.0, atol=1e-9)
        assert up.embeddings.shape == (20, 3)

    def test_zero_artifacts_equal_supervised(self, rng):
        g = _labelled(rng)
        w = glorot_init(6, 8, 3, np.random.default_rng(0))
        up = local_train(_state(g, w, 4), w, np.zeros((20, 3)), sp.csr_matrix((20, 20)),
                         epochs=5, alpha=0.7, beta=1.0, dropout=0.5)
        ref_w, opt, r = w, AdamState.zeros_like(w), np.random.default_rng(4)
        adj = normalize_adjacency(g.adjacency)
        for _ in range(5):
            ref_w, opt, _ = train_epoch(adj, g.features, ref_w, opt, g.labels, g.train_mask, dropout_rate=0.5, rng=r)
        assert up.weights.equals(ref_w)

    def test_upload_deterministic(self, rng):
        g = _labelled(rng)
        w = glorot_init(6, 8, 3, np.random.default_rng(0))
        pl = np.zeros((20, 3))
        pl[10:14, 1] = 1
        pg = sp.csr_matrix(np.random.default_rng(1).random((20, 20)))
        a = local_train(_state(g, w, 2), w, pl, pg, epochs=3, alpha=0.2, beta=1.0, dropout=0.5)
        b = local_train(_state(g, w, 2), w, pl, pg, epochs=3, alpha=0.2, beta=1.0, dropout=0.5)
        assert a.weights.equals(b.weights)
        assert np.array_equal(a.embeddings, b.embeddings)

    def test_hidden_embedding_source(self, rng):
        g = _labelled(rng)
        w = glorot_init(6, 8, 3, np.random.default_rng(0))
        up = local_train(_state(g, w), w, epochs=1, embedding_source="hidden")
        assert up.embeddings.shape == (20, 8)

    def test_numeric_error_context(self, rng):
        g = _labelled(rng)
        w = ModelWeights(np.full((6, 8), 1e300), np.full((8, 3), 1e300))
        state = _state(g, w)
        state.client_id = 4
        with pytest.raises(NumericError, match="client 4, round 7, epoch 0"):
            local_train(state, w, epochs=1, round_index=7)

    def test_complement_recomputed_from_base(self, rng):
        g = _labelled(rng)
        w = glorot_init(6, 8, 3, np.random.default_rng(0))
        state = _state(g, w)
        pg = sp.csr_matrix(np.random.default_rng(1).random((20, 20)))
        local_train(state, w, None, pg, epochs=1, beta=1.0)
        first = state.current_adj.copy()
        local_train(state, w, None, pg, epochs=1, beta=1.0)
        assert abs(state.current_adj - first).max() == 0
