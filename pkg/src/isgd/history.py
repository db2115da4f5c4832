"""Per-sample loss history and the loss approximator trained next to the model.

The approximator runs an LSTM over a sample's most recent losses, concatenates
the final hidden state with a learned embedding of the sample's class and
predicts the next loss with a linear head.
"""
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError, ShapeError, TruncatedFileError
from .nn import (
    EmbeddingParams,
    LstmParams,
    embed,
    embed_backward,
    glorot_uniform,
    init_lstm,
    lstm_backward,
    lstm_forward,
    lstm_run,
    optimizer_step,
    pad_sequences,
)

HISTORY_WINDOW = 10


class HistoryStore:
    """Bounded ring of ``(iteration, loss)`` observations per sample."""

    def __init__(self, window=HISTORY_WINDOW):
        if window < 1:
            raise ValueError("history window must be at least 1")
        self.window = int(window)
        self.observations = 0
        self._rings = {}

    def __len__(self):
        return len(self._rings)

    def entries(self, sample):
        return list(self._rings.get(int(sample), ()))

    def losses(self, sample):
        return [loss for _, loss in self._rings.get(int(sample), ())]

    def padded(self, samples):
        """Left-padded loss sequences ``(n, T, 1)`` and their lengths."""
        return pad_sequences([self.losses(s) for s in samples], input_size=1)


def record_loss(store, sample, iteration, loss):
    loss = float(loss)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss!r} for sample {sample}")
    ring = store._rings.get(int(sample))
    if ring is None:
        ring = store._rings[int(sample)] = deque(maxlen=store.window)
    ring.append((int(iteration), loss))
    store.observations += 1
    return store


def loss_history(store, sample):
    """Recorded losses for ``sample``, oldest first."""
    return store.losses(sample)


@dataclass
class ApproxParams:
    lstm: LstmParams
    embedding: EmbeddingParams
    head_w: np.ndarray
    head_b: float

    def __post_init__(self):
        self.head_w = np.asarray(self.head_w, dtype=np.float64)
        self.head_b = float(self.head_b)
        width = self.lstm.hidden_size + self.embedding.table.shape[1]
        if self.head_w.shape != (width,):
            raise ShapeError(f"head expects {width} features, got {self.head_w.shape}")

    @property
    def num_classes(self):
        return self.embedding.num_classes

    def to_vector(self):
        return np.concatenate(
            [self.lstm.W.ravel(), self.lstm.b, self.embedding.table.ravel(), self.head_w, [self.head_b]]
        )

    def replace_vector(self, v):
        v = np.asarray(v, dtype=np.float64)
        parts = []
        pos = 0
        for shape in (self.lstm.W.shape, self.lstm.b.shape, self.embedding.table.shape, self.head_w.shape):
            size = int(np.prod(shape))
            parts.append(v[pos:pos + size].reshape(shape))
            pos += size
        if v.shape != (pos + 1,):
            raise ShapeError(f"expected {pos + 1} approximator parameters, got {v.shape}")
        return ApproxParams(
            LstmParams(self.lstm.input_size, self.lstm.hidden_size, parts[0], parts[1]),
            EmbeddingParams(parts[2]),
            parts[3],
            v[pos],
        )


def init_approx(num_classes, rng, hidden_size=32, embed_dim=32):
    lstm = init_lstm(1, hidden_size, rng)
    table = rng.uniform(-0.05, 0.05, size=(num_classes, embed_dim))
    head = glorot_uniform(rng, 1, hidden_size + embed_dim)[0]
    return ApproxParams(lstm, EmbeddingParams(table), head, 0.0)


def approx_forward(params, seqs, lengths, classes):
    """Unclamped predictions for a batch plus the cache for backprop."""
    h, steps = lstm_run(params.lstm, seqs, lengths)
    e = embed(params.embedding, classes)
    feats = np.concatenate([h, e], axis=1)
    return feats @ params.head_w + params.head_b, (steps, feats, classes)


def approx_backward(params, cache, d_pred):
    """Flat gradient (``to_vector`` order) of ``sum(d_pred * pred)``."""
    steps, feats, classes = cache
    H = params.lstm.hidden_size
    d_head_w = feats.T @ d_pred
    d_head_b = float(np.sum(d_pred))
    d_feats = np.outer(d_pred, params.head_w)
    dW, db = lstm_backward(params.lstm, steps, d_feats[:, :H])
    d_table = embed_backward(params.embedding, classes, d_feats[:, H:])
    return np.concatenate([dW.ravel(), db, d_table.ravel(), d_head_w, [d_head_b]])


def predict_raw(params, store, samples, classes):
    seqs, lengths = store.padded(samples)
    if seqs.shape[1] == 0:
        seqs = np.zeros((len(samples), 0, 1))
    return approx_forward(params, seqs, lengths, np.asarray(classes, dtype=np.int64))[0]


def predict_importances(params, store, samples, classes, ema_mean_loss):
    """Scores for a pool: clamped predictions, EMA mean loss for unseen samples."""
    samples = np.asarray(samples)
    pred = np.maximum(predict_raw(params, store, samples, classes), 0.0)
    seen = np.array([bool(store.losses(s)) for s in samples], dtype=bool)
    return np.where(seen, pred, float(ema_mean_loss))


def predict_importance(params, sample, label, store, ema_mean_loss):
    history = store.losses(sample)
    if not history:
        return float(ema_mean_loss)
    h = lstm_forward(params.lstm, np.asarray(history).reshape(-1, 1))
    feats = np.concatenate([h, embed(params.embedding, label)])
    return max(0.0, float(feats @ params.head_w + params.head_b))


def approx_loss_and_grad(params, store, samples, classes, true_losses):
    """Mean squared regression error of unclamped predictions and its gradient."""
    seqs, lengths = store.padded(samples)
    if seqs.shape[1] == 0:
        seqs = np.zeros((len(samples), 0, 1))
    pred, cache = approx_forward(params, seqs, lengths, np.asarray(classes, dtype=np.int64))
    resid = pred - np.asarray(true_losses, dtype=np.float64)
    n = resid.shape[0]
    return float(np.mean(resid * resid)), approx_backward(params, cache, 2.0 * resid / n), pred


def approx_train_step(params, observations, store, state):
    """One optimizer step on ``(sample, class, true_loss)`` observations.

    ``store`` must not yet contain this iteration's losses.  Returns the new
    parameters, optimizer state and the pre-step predictions.
    """
    samples, classes, losses = (np.asarray(col) for col in zip(*observations))
    _, grad, pred = approx_loss_and_grad(params, store, samples, classes, losses)
    new_params, new_state = optimizer_step(params, grad, state)
    return new_params, new_state, pred


# ---------------------------------------------------------------------------
# Binary checkpoint: little-endian header then float64 params in to_vector order.
# ---------------------------------------------------------------------------

_MAGIC = b"ISAP"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def save_approx(params, path):
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        params.lstm.input_size,
        params.lstm.hidden_size,
        params.embedding.table.shape[0],
        params.embedding.table.shape[1],
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(params.to_vector().astype("<f8").tobytes())


def load_approx(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is shorter than the header")
    magic, version, inp, hid, classes, dim = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    count = 4 * hid * (inp + hid) + 4 * hid + classes * dim + hid + dim + 1
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise TruncatedFileError(f"{path}: expected {8 * count} parameter bytes, got {len(body)}")
    template = ApproxParams(
        LstmParams(inp, hid, np.zeros((4 * hid, inp + hid)), np.zeros(4 * hid)),
        EmbeddingParams(np.zeros((classes, dim))),
        np.zeros(hid + dim),
        0.0,
    )
    return template.replace_vector(np.frombuffer(body, dtype="<f8").astype(np.float64))
