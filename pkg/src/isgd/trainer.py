"""Mini-batch training loop with uniform, loss, gradient-norm or approximate
importance sampling, plus the per-iteration diagnostics.

Per iteration: draw a uniform pool, score it, resample a batch from the
smoothed scores, weight the batch with ``1 / (n p^k)``, step the model, step
the loss approximator (``approx`` only) and append the batch losses to the
history.
"""
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .analysis import tracking_coefficients
from .errors import NumericError, TrainingDiverged, UndefinedVarianceError
from .history import (
    HISTORY_WINDOW,
    HistoryStore,
    approx_train_step,
    init_approx,
    predict_importances,
    record_loss,
)
from .nn import (
    OptimizerState,
    backward,
    init_mlp,
    losses_from_outputs,
    mlp_forward,
    optimizer_step,
    per_sample_grad_norms,
    per_sample_losses,
)
from .sampling import (
    adaptive_smoothing_constant,
    biased_weights,
    build_distribution,
    check_bias_exponent,
    presample_pool,
    sample_batch,
)

STRATEGIES = ("uniform", "loss", "gnorm", "approx")


@dataclass
class TrainConfig:
    strategy: str = "uniform"
    k: float = 0.5
    batch_size: int = 32
    pool_factor: float = 2.0
    smoothing: object = "adaptive"  # "adaptive" or a constant >= 0
    ema_decay: float = 0.99
    iterations: int = 1000
    max_loss_sweep_interval: int = 300
    seed: int = 0
    hidden: tuple = (32,)
    dropout: float = 0.0
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    approx_lr: float = None  # defaults to lr
    approx_hidden: int = 32
    approx_embed: int = 32
    history_window: int = HISTORY_WINDOW
    weight_normalizer: str = "pool"  # or "dataset"
    lr_decay_at: int = None
    lr_decay_factor: float = 0.1
    record_time: bool = True

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        check_bias_exponent(self.k)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pool_factor < 1.0:
            raise ValueError("pool_factor must be >= 1 so the pool holds a full batch")
        if self.smoothing != "adaptive":
            if isinstance(self.smoothing, str) or not float(self.smoothing) >= 0:
                raise ValueError("smoothing must be 'adaptive' or a constant >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.iterations < 0 or self.max_loss_sweep_interval < 1:
            raise ValueError("iterations must be >= 0 and the sweep interval >= 1")
        if self.weight_normalizer not in ("pool", "dataset"):
            raise ValueError("weight_normalizer must be 'pool' or 'dataset'")
        return self

    @property
    def pool_size(self):
        return max(self.batch_size, int(round(self.pool_factor * self.batch_size)))

    def optimizer_state(self, lr=None):
        return OptimizerState(self.optimizer, lr or self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class MetricsRecord:
    iteration: int
    epoch: float
    wall_ms: float
    batch_loss: float
    ema_loss: float
    var_trace: float
    max_loss: float = None
    tracking_a: float = None
    tracking_b: float = None
    smoothing_c: float = 0.0


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRecord))


@dataclass
class EmaTracker:
    decay: float = 0.99
    value: float = None


def ema_update(tracker, observation):
    if tracker.value is None:
        tracker.value = float(observation)
    else:
        tracker.value = tracker.decay * tracker.value + (1.0 - tracker.decay) * float(observation)
    return tracker


def grad_variance_trace(vectors):
    """Trace of the empirical covariance: mean squared distance to the mean."""
    G = np.asarray(vectors, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] < 2:
        raise UndefinedVarianceError("need at least two gradient vectors")
    D = G - G.mean(axis=0)
    return float(np.mean(np.einsum("ij,ij->i", D, D)))


def max_loss_sweep(params, dataset, chunk=4096):
    """Largest per-sample loss over the whole dataset, evaluation mode."""
    worst = -np.inf
    for start in range(0, len(dataset), chunk):
        sl = slice(start, start + chunk)
        out = mlp_forward(params, dataset.features[sl])
        worst = max(worst, float(np.max(losses_from_outputs(out, dataset.labels[sl], dataset.loss))))
    return worst


def mean_loss(params, dataset, chunk=4096):
    total = 0.0
    for start in range(0, len(dataset), chunk):
        sl = slice(start, start + chunk)
        total += float(np.sum(per_sample_losses(params, dataset.features[sl], dataset.labels[sl], dataset.loss)))
    return total / len(dataset)


def pool_scores(strategy, params, X, y, loss):
    """Exact importance scores of a pool for the model-based strategies."""
    if strategy == "uniform":
        return np.ones(X.shape[0])
    if strategy == "loss":
        scores = per_sample_losses(params, X, y, loss)
    elif strategy == "gnorm":
        scores = per_sample_grad_norms(params, X, y, loss)
    else:
        raise ValueError(f"no exact scores for strategy {strategy!r}")
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        raise NumericError(f"non-finite importance score for pool position {bad[0]}", index=int(bad[0]))
    return scores


def estimator_moments(probs, alpha, grads):
    """Exact mean and variance trace of the weighted one-sample estimator.

    Enumerates ``G_i = alpha_i g_i`` drawn with probability ``p_i``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    G = np.asarray(alpha, dtype=np.float64)[:, None] * np.asarray(grads, dtype=np.float64)
    mean = probs @ G
    second = float(probs @ np.einsum("ij,ij->i", G, G))
    return mean, max(0.0, second - float(mean @ mean))


@dataclass
class TrainResult:
    records: list
    params: object
    approx_params: object = None
    history: HistoryStore = None
    extras: dict = field(default_factory=dict)


def seed_streams(rng):
    """Split one generator into (model init, approximator init, loop) streams."""
    init_rng, approx_rng, loop_rng = rng.spawn(3)
    return init_rng, approx_rng, loop_rng


def train(config, dataset, rng=None, params=None, sink=None, callback=None):
    """Run ``config.iterations`` updates and return a :class:`TrainResult`.

    ``sink(record)`` is called as each metrics record is produced, so a writer
    can flush partial logs if training diverges; ``callback(record, params)``
    is a hook for extra evaluation.  Divergence raises
    :class:`TrainingDiverged` carrying the iteration and records so far.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    init_rng, approx_rng, loop_rng = seed_streams(rng)
    if params is None:
        sizes = (dataset.features.shape[1], *config.hidden, dataset.output_size)
        params = init_mlp(sizes, init_rng, dropout=config.dropout)
    X, Y, classes, loss = dataset.features, dataset.labels, dataset.classes, dataset.loss
    N = len(dataset)
    B = config.batch_size
    opt = config.optimizer_state()
    store = HistoryStore(config.history_window)
    approx = approx_opt = None
    if config.strategy == "approx":
        approx = init_approx(dataset.num_classes, approx_rng, config.approx_hidden, config.approx_embed)
        approx_opt = config.optimizer_state(config.approx_lr)
    ema = EmaTracker(config.ema_decay)
    normalizer = N if config.weight_normalizer == "dataset" else None
    dropout_rng = loop_rng if any(params.dropout) else None
    records = []

    for t in range(config.iterations):
        start = time.perf_counter()
        if config.lr_decay_at is not None and t == config.lr_decay_at:
            opt.learning_rate *= config.lr_decay_factor
        try:
            pool = presample_pool(N, config.pool_size, loop_rng)
            if config.strategy == "approx":
                cold = ema.value if ema.value is not None else 1.0
                scores = predict_importances(approx, store, pool, classes[pool], cold)
            else:
                scores = pool_scores(config.strategy, params, X[pool], Y[pool], loss)
            if config.strategy == "uniform":
                c = 0.0  # keeps uniform weights exactly 1 at k = 1
            elif config.smoothing == "adaptive":
                c = adaptive_smoothing_constant(ema.value) if ema.value is not None else 0.0
            else:
                c = float(config.smoothing)
            dist = build_distribution(pool, scores, c)
            pos = sample_batch(dist, B, loop_rng)
            alpha = biased_weights(dist, pos, config.k, normalizer)
            idx = pool[pos]
            bundle = backward(params, X[idx], Y[idx], alpha, loss, dropout_rng)
            params, opt = optimizer_step(params, bundle.gradient, opt)
            if approx is not None:
                obs = list(zip(idx, classes[idx], bundle.per_sample_losses))
                approx, approx_opt, _ = approx_train_step(approx, obs, store, approx_opt)
        except NumericError as exc:
            raise TrainingDiverged(t, records, exc) from exc
        for s, value in zip(idx, bundle.per_sample_losses):
            record_loss(store, s, t, value)

        batch_loss = float(np.mean(bundle.per_sample_losses))
        ema_update(ema, batch_loss)
        g = bundle.gradient
        var_trace = None
        if B >= 2:
            second = float(np.mean(alpha * alpha * bundle.per_sample_sq_norms))
            var_trace = max(0.0, second - float(g @ g))
        max_loss = None
        if (t + 1) % config.max_loss_sweep_interval == 0:
            max_loss = max_loss_sweep(params, dataset)
        tracking = None
        if config.strategy in ("loss", "approx") and B >= 2:
            tracking = tracking_coefficients(scores[pos], bundle.per_sample_losses)
        wall = (time.perf_counter() - start) * 1e3 if config.record_time else None
        record = MetricsRecord(
            iteration=t,
            epoch=(t + 1) * B / N,
            wall_ms=wall,
            batch_loss=batch_loss,
            ema_loss=ema.value,
            var_trace=var_trace,
            max_loss=max_loss,
            tracking_a=tracking.a if tracking else None,
            tracking_b=tracking.b if tracking else None,
            smoothing_c=c,
        )
        records.append(record)
        if sink is not None:
            sink(record)
        if callback is not None:
            callback(record, params)

    return TrainResult(records, params, approx, store)
