"""Small deterministic differentiable models.

A dense ReLU/dropout network (the model being trained), an LSTM cell and a
class-embedding table (building blocks of the loss approximator), the two
supported losses, per-sample gradients and plain SGD / Adam steps.

Everything is float64.  Dense-network parameters live in one flat vector so
optimizers and finite-difference checks can treat them uniformly.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import LOSS_MSE, LOSS_NLL, dense_kernels
from .errors import NumericError, ShapeError

ACTIVATIONS = ("relu", "identity")
LOSSES = {"nll": LOSS_NLL, "mse": LOSS_MSE}


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# Dense network
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Dense network parameters stored as one flat vector.

    ``sizes`` lists layer widths ``(in, hidden..., out)``.  ``activations`` and
    ``dropout`` have one entry per weight layer; dropout acts on the layer
    output after the activation.
    """

    sizes: tuple
    theta: np.ndarray
    activations: tuple
    dropout: tuple

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        n_layers = len(self.sizes) - 1
        if n_layers < 1 or min(self.sizes) < 1:
            raise ShapeError(f"invalid layer sizes {self.sizes}")
        self.activations = tuple(self.activations)
        self.dropout = tuple(float(p) for p in self.dropout)
        if len(self.activations) != n_layers or len(self.dropout) != n_layers:
            raise ShapeError("need one activation and one dropout rate per layer")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation {bad[0]!r}")
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise NumericError("non-finite parameter entries")
        self._sizes_arr = np.asarray(self.sizes, dtype=np.int64)
        self._relu = np.asarray([a == "relu" for a in self.activations], dtype=np.uint8)

    @property
    def n_params(self):
        s = self.sizes
        return sum(o * i + o for i, o in zip(s[:-1], s[1:]))

    @property
    def layers(self):
        """``[(W, b), ...]`` as views into ``theta``."""
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            W = self.theta[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            out.append((W, self.theta[pos:pos + fan_out]))
            pos += fan_out
        return out

    @classmethod
    def from_layers(cls, layers, activations=None, dropout=None):
        sizes = [np.shape(layers[0][0])[1]]
        for W, b in layers:
            W = np.asarray(W)
            if W.shape[1] != sizes[-1] or np.shape(b) != (W.shape[0],):
                raise ShapeError("adjacent layer dimensions do not chain")
            sizes.append(W.shape[0])
        theta = np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])
        n = len(layers)
        return cls(
            sizes=tuple(sizes),
            theta=theta,
            activations=activations or ("relu",) * (n - 1) + ("identity",),
            dropout=dropout or (0.0,) * n,
        )

    def to_vector(self):
        return self.theta

    def replace_vector(self, vector):
        return replace(self, theta=vector)


def init_mlp(sizes, rng, dropout=0.0, hidden_activation="relu"):
    """Glorot-uniform weights, zero biases; identity output layer."""
    n = len(sizes) - 1
    layers = [(glorot_uniform(rng, o, i), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])]
    rates = (float(dropout),) * (n - 1) + (0.0,)
    acts = (hidden_activation,) * (n - 1) + ("identity",)
    return MlpParams.from_layers(layers, acts, rates)


def dropout_mask(params, n, rng):
    """Inverted-dropout multipliers for a batch of ``n``, or None if no layer drops."""
    if rng is None or not any(params.dropout):
        return None
    blocks = []
    for width, p in zip(params.sizes[1:], params.dropout):
        if p > 0.0:
            keep = rng.random((n, width)) >= p
            blocks.append(keep / (1.0 - p))
        else:
            blocks.append(np.ones((n, width)))
    return np.ascontiguousarray(np.concatenate(blocks, axis=1))


def _as_batch(params, x):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if X.ndim != 2 or X.shape[1] != params.sizes[0]:
        raise ShapeError(f"input width {X.shape[-1]} does not match layer input {params.sizes[0]}")
    return X


def mlp_forward(params, x, dropout_rng=None):
    """Network output for one input vector or a batch (rows).

    Without ``dropout_rng`` the pass runs in evaluation mode; inverted dropout
    keeps expected activations equal between the two modes.
    """
    X = _as_batch(params, x)
    mask = dropout_mask(params, X.shape[0], dropout_rng)
    out = dense_kernels(params.n_params).dense_forward(params.theta, params._sizes_arr, params._relu, X, mask)
    return out[0] if np.ndim(x) == 1 else out


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=-1, keepdims=True)
    # infinite logits give NaN here; callers check finiteness and raise
    with np.errstate(invalid="ignore"):
        shifted = logits - m
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def loss_nll(logits, label):
    """Negative log-likelihood of ``label`` under softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"class {label} out of range for {logits.shape[-1]} logits")
    return float(-log_softmax(logits)[label])


def loss_mse(pred, target):
    """Squared Euclidean distance, without a 1/2 factor."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    d = pred - target
    return float(np.dot(d.ravel(), d.ravel()))


def losses_from_outputs(out, y, loss):
    """Per-row loss for a batch of network outputs."""
    if loss == "nll":
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= out.shape[1]):
            raise IndexError("class label out of range")
        return -log_softmax(out)[np.arange(out.shape[0]), y]
    d = out - np.asarray(y, dtype=np.float64).reshape(out.shape)
    return np.einsum("ij,ij->i", d, d)


def per_sample_losses(params, X, y, loss="nll"):
    """Evaluation-mode losses for every row of ``X``."""
    return losses_from_outputs(mlp_forward(params, _as_batch(params, X)), y, loss)


# Output-layer gradients used by the ordering diagnostics.


def nll_prob_grad(psi, label):
    """Gradient of ``-log(psi[label])`` with respect to the probability vector."""
    g = np.zeros_like(np.asarray(psi, dtype=np.float64))
    g[label] = -1.0 / psi[label]
    return g


def mse_output_grad(pred, target):
    return -2.0 * (np.asarray(target, dtype=np.float64) - np.asarray(pred, dtype=np.float64))


@dataclass
class GradBundle:
    per_sample_losses: np.ndarray
    gradient: np.ndarray
    weights: np.ndarray
    per_sample_sq_norms: np.ndarray = field(repr=False)


def _targets(params, y, loss, n):
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if loss == "nll":
        labels = np.ascontiguousarray(np.asarray(y, dtype=np.int64).reshape(n))
        if n and (labels.min() < 0 or labels.max() >= params.sizes[-1]):
            raise IndexError("class label out of range")
        return labels, np.empty((0, 0))
    targets = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(n, params.sizes[-1]))
    return np.empty(0, dtype=np.int64), targets


def backward(params, X, y, weights=None, loss="nll", dropout_rng=None):
    """Weighted mean gradient ``(1/n) sum_i w_i grad L_i`` over a batch.

    The same dropout mask is used for the reported losses and the gradient.
    Raises :class:`NumericError` with the sample position on a non-finite loss.
    """
    X = _as_batch(params, X)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"{w.shape[0]} weights for a batch of {n}")
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")
    labels, targets = _targets(params, y, loss, n)
    mask = dropout_mask(params, n, dropout_rng)
    losses, grad, sq = dense_kernels(params.n_params).dense_grad(
        params.theta, params._sizes_arr, params._relu, X, LOSSES[loss], labels, targets, w, mask
    )
    return GradBundle(losses, grad, w, sq)


def per_sample_grad_norms(params, X, y, loss="nll"):
    """Norm of each sample's full parameter gradient, dropout off."""
    X = _as_batch(params, X)
    return np.sqrt(backward(params, X, y, loss=loss).per_sample_sq_norms)


def per_sample_grad_norm(params, x, y, loss="nll"):
    return float(per_sample_grad_norms(params, x, np.atleast_1d(y) if loss == "nll" else y, loss)[0])


def per_sample_grads(params, X, y, loss="nll"):
    """Matrix of flattened per-sample gradients (one row per sample), dropout off.

    Built with explicit outer products rather than the fused kernel, so it
    doubles as an independent check of ``backward``.
    """
    X = _as_batch(params, X)
    n = X.shape[0]
    acts = [X]
    pres = []
    a = X
    for (W, b), act in zip(params.layers, params.activations):
        z = a @ W.T + b
        pres.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
        acts.append(a)
    out = acts[-1]
    if loss == "nll":
        labels = np.asarray(y, dtype=np.int64).reshape(n)
        delta = np.exp(log_softmax(out))
        delta[np.arange(n), labels] -= 1.0
    else:
        delta = 2.0 * (out - np.asarray(y, dtype=np.float64).reshape(out.shape))
    blocks = []
    for l in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[l]
        if params.activations[l] == "relu":
            delta = delta * (pres[l] > 0.0)
        gW = np.einsum("no,ni->noi", delta, acts[l]).reshape(n, -1)
        blocks.append(np.concatenate([gW, delta], axis=1))
        delta = delta @ W
    return np.concatenate(blocks[::-1], axis=1)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    """Single-layer LSTM.

    ``W`` is ``4H x (input_size + H)`` acting on ``[x, h]``; gate blocks are
    stacked in the order input, forget, output, candidate.
    """

    input_size: int
    hidden_size: int
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H, I = self.hidden_size, self.input_size
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.shape != (4 * H, I + H) or self.b.shape != (4 * H,):
            raise ShapeError(f"gate shapes {self.W.shape}/{self.b.shape} inconsistent with ({I}, {H})")


def init_lstm(input_size, hidden_size, rng, forget_bias=1.0):
    H = hidden_size
    W = glorot_uniform(rng, 4 * H, input_size + H)
    b = np.zeros(4 * H)
    b[H:2 * H] = forget_bias
    return LstmParams(input_size, hidden_size, W, b)


def pad_sequences(sequences, input_size=1):
    """Left-pad variable-length sequences into ``(n, T, input_size)`` plus lengths."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    T = int(lengths.max()) if lengths.size else 0
    out = np.zeros((len(sequences), T, input_size))
    for i, s in enumerate(sequences):
        if len(s):
            out[i, T - len(s):] = np.asarray(s, dtype=np.float64).reshape(len(s), input_size)
    return out, lengths


def lstm_run(params, seqs, lengths):
    """Batched LSTM over left-padded sequences; returns final ``h`` and a cache.

    Rows stay at the zero state until their sequence starts, so every row
    equals an unpadded run from zero ``(h, c)``.
    """
    n, T, I = seqs.shape
    if I != params.input_size:
        raise ShapeError(f"sequence element width {I} != input_size {params.input_size}")
    H = params.hidden_size
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    starts = T - np.asarray(lengths)
    steps = []
    for t in range(T):
        active = (t >= starts)[:, None]
        xh = np.concatenate([seqs[:, t, :], h], axis=1)
        z = xh @ params.W.T + params.b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        o = sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((active, xh, c, i, f, o, g, tc))
        c = np.where(active, c_new, c)
        h = np.where(active, h_new, h)
    return h, steps


def lstm_backward(params, steps, dh):
    """Gradients of ``sum(dh * h_final)`` with respect to ``W`` and ``b``."""
    dW = np.zeros_like(params.W)
    db = np.zeros_like(params.b)
    dh = np.array(dh, dtype=np.float64)
    dc = np.zeros_like(dh)
    for active, xh, c_prev, i, f, o, g, tc in reversed(steps):
        dh_a = np.where(active, dh, 0.0)
        dc_a = np.where(active, dc, 0.0)
        dct = dc_a + dh_a * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dct * g * i * (1.0 - i),
                dct * c_prev * f * (1.0 - f),
                dh_a * tc * o * (1.0 - o),
                dct * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dW += dz.T @ xh
        db += dz.sum(axis=0)
        dxh = dz @ params.W
        dh = np.where(active, dxh[:, params.input_size:], dh)
        dc = np.where(active, dct * f, dc)
    return dW, db


def lstm_forward(params, sequence):
    """Final hidden state after running over ``sequence`` from a zero state."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.size == 0:
        return np.zeros(params.hidden_size)
    seq = seq.reshape(len(seq), -1)
    h, _ = lstm_run(params, seq[None], np.array([len(seq)]))
    return h[0]


# ---------------------------------------------------------------------------
# Class embedding
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingParams:
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2:
            raise ShapeError("embedding table must be 2-D")

    @property
    def num_classes(self):
        return self.table.shape[0]


def embed(params, label):
    labels = np.asarray(label)
    if np.any(labels < 0) or np.any(labels >= params.num_classes):
        raise IndexError(f"class {label} out of range for {params.num_classes} classes")
    return params.table[labels].copy()


def embed_backward(params, labels, d_out):
    """Accumulate row gradients; rows of unseen classes stay zero."""
    d = np.zeros_like(params.table)
    np.add.at(d, np.asarray(labels, dtype=np.int64), np.atleast_2d(d_out))
    return d


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.kind == "adam" and not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("adam requires beta1, beta2 in (0, 1) and eps > 0")


def _unpack(params):
    if isinstance(params, np.ndarray):
        return params, lambda v: v
    return params.to_vector(), params.replace_vector


def sgd_step(params, grad, state):
    if state.kind != "sgd":
        raise ValueError(f"sgd_step called with a {state.kind} state")
    theta, rebuild = _unpack(params)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
    return rebuild(theta - state.learning_rate * grad)


def adam_step(params, grad, state):
    """One bias-corrected Adam update; returns ``(params, state)``."""
    if state.kind != "adam":
        raise ValueError(f"adam_step called with a {state.kind} state")
    theta, rebuild = _unpack(params)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
    m = np.zeros_like(theta) if state.m is None else state.m
    v = np.zeros_like(theta) if state.v is None else state.v
    if m.shape != theta.shape:
        raise ShapeError("moment accumulators do not match parameter shape")
    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_theta = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return rebuild(new_theta), replace(state, step=t, m=m, v=v)


def optimizer_step(params, grad, state):
    if state.kind == "sgd":
        return sgd_step(params, grad, state), replace(state, step=state.step + 1)
    return adam_step(params, grad, state)
