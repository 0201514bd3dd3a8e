"""Two-layer GCN with hand-written backpropagation and an Adam optimizer.

The model is ``H = A_hat @ relu(A_hat @ X @ W0) @ W1`` with a row softmax on
top. Losses are summed cross-entropies (not means) over the labelled rows and,
weighted by ``alpha``, over the rows carrying pseudo labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ValidationError

__all__ = [
    "ModelWeights",
    "ForwardOutput",
    "AdamState",
    "glorot_init",
    "forward",
    "loss",
    "gradients",
    "adam_step",
    "accuracy",
    "train_epoch",
    "mask_indices",
]


@dataclass(frozen=True, eq=False)
class ModelWeights:
    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        w0 = np.array(self.w0, dtype=np.float64)
        w1 = np.array(self.w1, dtype=np.float64)
        if w0.ndim != 2 or w1.ndim != 2 or w0.shape[1] != w1.shape[0]:
            raise ValidationError(f"incompatible weight shapes {w0.shape} and {w1.shape}")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "w1", w1)

    @property
    def shapes(self):
        return self.w0.shape, self.w1.shape

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.w0.copy(), self.w1.copy())

    def equals(self, other: "ModelWeights") -> bool:
        """Bitwise equality of both matrices."""
        return (
            self.shapes == other.shapes
            and np.array_equal(self.w0.view(np.uint64), other.w0.view(np.uint64))
            and np.array_equal(self.w1.view(np.uint64), other.w1.view(np.uint64))
        )


@dataclass(frozen=True, eq=False)
class ForwardOutput:
    """Result of :func:`forward`.

    ``hidden`` is the post-ReLU first layer and ``embeddings`` the pre-softmax
    output. The remaining fields cache what the backward pass needs.
    """

    hidden: np.ndarray
    embeddings: np.ndarray
    probabilities: np.ndarray
    log_probabilities: np.ndarray
    inputs: Optional[np.ndarray] = None
    pre_activation: Optional[np.ndarray] = None
    hidden_dropped: Optional[np.ndarray] = None
    hidden_keep: Optional[np.ndarray] = None
    dropout_rate: float = 0.0


@dataclass(frozen=True, eq=False)
class AdamState:
    m0: np.ndarray
    v0: np.ndarray
    m1: np.ndarray
    v1: np.ndarray
    step: int = 0
    lr: float = 0.01
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, weights: ModelWeights, lr=0.01, weight_decay=5e-4) -> "AdamState":
        return cls(
            m0=np.zeros_like(weights.w0),
            v0=np.zeros_like(weights.w0),
            m1=np.zeros_like(weights.w1),
            v1=np.zeros_like(weights.w1),
            lr=lr,
            weight_decay=weight_decay,
        )


def glorot_init(in_dim: int, hidden: int, num_classes: int, rng: np.random.Generator) -> ModelWeights:
    """Uniform Glorot initialization of both layers."""
    r0 = np.sqrt(6.0 / (in_dim + hidden))
    r1 = np.sqrt(6.0 / (hidden + num_classes))
    w0 = rng.uniform(-r0, r0, size=(in_dim, hidden))
    w1 = rng.uniform(-r1, r1, size=(hidden, num_classes))
    return ModelWeights(w0, w1)


def mask_indices(mask, n: int) -> np.ndarray:
    """Row indices selected by a boolean mask or an integer index array.

    Index arrays may repeat rows; a repeated row counts once per occurrence.
    """
    if mask is None:
        return np.zeros(0, dtype=np.int64)
    arr = np.asarray(mask)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValidationError(f"mask must have shape ({n},), got {arr.shape}")
        return np.flatnonzero(arr)
    idx = arr.astype(np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError("mask index out of range")
    return idx


def _dropout(x: np.ndarray, rate: float, rng: np.random.Generator):
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate), keep


def _dropout_input(x, rate: float, rng: np.random.Generator):
    if not sp.issparse(x):
        return _dropout(x, rate, rng)[0]
    # only stored entries can be dropped; zeros stay zero either way
    keep = rng.random(x.nnz) >= rate
    return sp.csr_matrix((x.data * keep / (1.0 - rate), x.indices, x.indptr), shape=x.shape)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(norm_adj, features, weights: ModelWeights, dropout_rate: float = 0.0,
            training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardOutput:
    """Run the two-layer GCN.

    Inverted dropout is applied to the input features and to the hidden
    activations only when ``training`` is true and ``dropout_rate > 0``; in
    that case ``rng`` supplies the masks (input mask drawn first). Sparse
    features stay sparse, and their input mask covers stored entries only.
    """
    x = sp.csr_matrix(features, dtype=np.float64) if sp.issparse(features) else np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if norm_adj.shape != (n, n) or x.shape[1] != weights.w0.shape[0]:
        raise ValidationError(
            f"shape mismatch: adjacency {norm_adj.shape}, features {x.shape}, w0 {weights.w0.shape}"
        )
    if not 0.0 <= dropout_rate < 1.0:
        raise ValidationError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    drop = training and dropout_rate > 0.0
    if drop and rng is None:
        raise ValidationError("training with dropout needs an rng")
    x_in = _dropout_input(x, dropout_rate, rng) if drop else x
    # overflow surfaces as the NumericError below
    with np.errstate(over="ignore", invalid="ignore"):
        pre = norm_adj @ (x_in @ weights.w0)
        hidden = np.maximum(pre, 0.0)
        if drop:
            hidden_dropped, keep = _dropout(hidden, dropout_rate, rng)
        else:
            hidden_dropped, keep = hidden, None
        emb = norm_adj @ (hidden_dropped @ weights.w1)
    if not np.all(np.isfinite(emb)):
        raise NumericError("non-finite GCN output")
    logp = _log_softmax(emb)
    prob = np.exp(logp)
    return ForwardOutput(
        hidden=hidden,
        embeddings=emb,
        probabilities=prob,
        log_probabilities=logp,
        inputs=x_in,
        pre_activation=pre,
        hidden_dropped=hidden_dropped,
        hidden_keep=keep,
        dropout_rate=dropout_rate if drop else 0.0,
    )


def _loss_rows(output: ForwardOutput, labels, train_mask, pseudo_labels, ssl_mask):
    n = output.probabilities.shape[0]
    train_idx = mask_indices(train_mask, n)
    ssl_idx = mask_indices(ssl_mask, n)
    if np.intersect1d(train_idx, ssl_idx).size:
        raise ValidationError("pseudo-label rows must not overlap the training rows")
    if ssl_idx.size and pseudo_labels is None:
        raise ValidationError("ssl_mask given without pseudo_labels")
    return train_idx, ssl_idx


def loss(output: ForwardOutput, labels, train_mask, pseudo_labels=None, ssl_mask=None,
         alpha: float = 0.0) -> float:
    """Summed cross-entropy on labelled rows plus ``alpha`` times the same on pseudo-labelled rows."""
    train_idx, ssl_idx = _loss_rows(output, labels, train_mask, pseudo_labels, ssl_mask)
    logp = output.log_probabilities
    total = _cross_entropy(np.asarray(labels, dtype=np.float64)[train_idx], logp[train_idx])
    if ssl_idx.size:
        total += alpha * _cross_entropy(np.asarray(pseudo_labels, dtype=np.float64)[ssl_idx], logp[ssl_idx])
    return float(total)


def _cross_entropy(targets: np.ndarray, logp: np.ndarray) -> float:
    # zero targets contribute nothing even where log p = -inf
    with np.errstate(invalid="ignore"):
        terms = np.where(targets > 0, targets * logp, 0.0)
    return -float(np.sum(terms))


def output_gradient(output: ForwardOutput, labels, train_mask, pseudo_labels=None, ssl_mask=None,
                    alpha: float = 0.0) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the pre-softmax embeddings."""
    train_idx, ssl_idx = _loss_rows(output, labels, train_mask, pseudo_labels, ssl_mask)
    p = output.probabilities
    grad = np.zeros_like(p)
    y = np.asarray(labels, dtype=np.float64)
    # softmax + cross-entropy: d/dz = p * sum(y) - y, rows counted per occurrence
    np.add.at(grad, train_idx, p[train_idx] * y[train_idx].sum(axis=1, keepdims=True) - y[train_idx])
    if ssl_idx.size and alpha != 0.0:
        yb = np.asarray(pseudo_labels, dtype=np.float64)
        np.add.at(grad, ssl_idx, alpha * (p[ssl_idx] * yb[ssl_idx].sum(axis=1, keepdims=True) - yb[ssl_idx]))
    return grad


def gradients(norm_adj, output: ForwardOutput, weights: ModelWeights, labels, train_mask,
              pseudo_labels=None, ssl_mask=None, alpha: float = 0.0):
    """Exact gradients of :func:`loss` w.r.t. ``(w0, w1)``.

    Uses the dropout masks stored in ``output``; weight decay is not included.
    ``norm_adj`` need not be symmetric.
    """
    if output.inputs is None:
        raise ValidationError("forward output lacks the cached activations needed for backprop")
    if output.embeddings.shape[1] != weights.w1.shape[1]:
        raise ValidationError("weights do not match the forward output")
    d_emb = output_gradient(output, labels, train_mask, pseudo_labels, ssl_mask, alpha)
    adj_t = norm_adj.T
    back = adj_t @ d_emb
    d_w1 = output.hidden_dropped.T @ back
    d_hidden = back @ weights.w1.T
    if output.hidden_keep is not None:
        d_hidden = d_hidden * output.hidden_keep / (1.0 - output.dropout_rate)
    d_pre = d_hidden * (output.pre_activation > 0)
    d_w0 = output.inputs.T @ (adj_t @ d_pre)
    return d_w0, d_w1


def adam_step(weights: ModelWeights, state: AdamState, grads):
    """One bias-corrected Adam update; L2 decay is added to the W0 gradient only.

    Returns the new ``(weights, state)``; inputs are left untouched.
    """
    g0, g1 = grads
    if g0.shape != weights.w0.shape or g1.shape != weights.w1.shape or state.m0.shape != weights.w0.shape:
        raise ValidationError("gradient/state shapes do not match the weights")
    g0 = g0 + state.weight_decay * weights.w0
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m0 = b1 * state.m0 + (1.0 - b1) * g0
    v0 = b2 * state.v0 + (1.0 - b2) * g0 * g0
    m1 = b1 * state.m1 + (1.0 - b1) * g1
    v1 = b2 * state.v1 + (1.0 - b2) * g1 * g1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    w0 = weights.w0 - state.lr * (m0 / c1) / (np.sqrt(v0 / c2) + state.eps)
    w1 = weights.w1 - state.lr * (m1 / c1) / (np.sqrt(v1 / c2) + state.eps)
    new_state = AdamState(m0, v0, m1, v1, t, state.lr, state.weight_decay, b1, b2, state.eps)
    return ModelWeights(w0, w1), new_state


def accuracy(probabilities, labels, mask) -> float:
    """Fraction of masked rows whose argmax matches the label (ties go to the lowest class)."""
    p = np.asarray(probabilities)
    idx = mask_indices(mask, p.shape[0])
    if idx.size == 0:
        raise ValidationError("accuracy needs a non-empty mask")
    pred = p[idx].argmax(axis=1)
    truth = np.asarray(labels)[idx].argmax(axis=1)
    return float(np.mean(pred == truth))


def train_epoch(norm_adj, features, weights: ModelWeights, state: AdamState, labels, train_mask,
                pseudo_labels=None, ssl_mask=None, alpha: float = 0.0, dropout_rate: float = 0.0,
                rng: Optional[np.random.Generator] = None):
    """One full-batch training step. Returns ``(weights, state, loss_value)``."""
    out = forward(norm_adj, features, weights, dropout_rate, training=True, rng=rng)
    value = loss(out, labels, train_mask, pseudo_labels, ssl_mask, alpha)
    if not np.isfinite(value):
        raise NumericError(f"non-finite training loss {value}")
    grads = gradients(norm_adj, out, weights, labels, train_mask, pseudo_labels, ssl_mask, alpha)
    new_weights, new_state = adam_step(weights, state, grads)
    return new_weights, new_state, value
