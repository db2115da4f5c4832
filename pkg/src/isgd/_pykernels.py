"""Pure numpy kernels for the dense network pass and inverse-CDF draws.

Same call signatures as the compiled ``_ckernels`` module; used when the
extension is not built or ``ISGD_PURE_PYTHON`` is set.

Parameters travel as one flat float64 vector laid out layer by layer:
``W0`` (row-major, out x in), ``b0``, ``W1``, ``b1``, ...  ``sizes`` holds the
layer widths ``(in, h1, ..., out)``.  ``mask`` is either ``None`` or an
``n x sum(sizes[1:])`` matrix of dropout multipliers, one column block per
layer output.
"""
import numpy as np

from .errors import NumericError

LOSS_NLL = 0
LOSS_MSE = 1


def _layer_views(theta, sizes):
    views = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = theta[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = theta[pos:pos + fan_out]
        pos += fan_out
        views.append((W, b))
    return views


def _forward(theta, sizes, relu, X, mask):
    acts = [X]
    pre = []
    col = 0
    a = X
    for l, (W, b) in enumerate(_layer_views(theta, sizes)):
        z = a @ W.T + b
        pre.append(z)
        a = np.where(z > 0.0, z, 0.0) if relu[l] else z
        if mask is not None:
            a = a * mask[:, col:col + W.shape[0]]
        col += W.shape[0]
        acts.append(a)
    return acts, pre


def dense_forward(theta, sizes, relu, X, mask=None):
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(theta, sizes, relu, X, mask)[0][-1]


def _raise_nonfinite(losses):
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        i = int(bad[0])
        raise NumericError(f"non-finite loss {losses[i]!r} for sample {i}", index=i)


def dense_grad(theta, sizes, relu, X, loss_kind, labels, targets, alpha, mask=None):
    """Losses, weighted mean gradient and per-sample squared gradient norms.

    The gradient is ``(1/n) sum_i alpha_i dL_i/dtheta``; the squared norms are
    of the *unweighted* per-sample gradients.
    """
    n = X.shape[0]
    rows = np.arange(n)
    with np.errstate(over="ignore", invalid="ignore"):
        acts, pre = _forward(theta, sizes, relu, X, mask)
        out = acts[-1]
        if loss_kind == LOSS_NLL:
            m = out.max(axis=1, keepdims=True)
            e = np.exp(out - m)
            s = e.sum(axis=1)
            losses = np.log(s) + m[:, 0] - out[rows, labels]
            dout = e / s[:, None]
            dout[rows, labels] -= 1.0
        else:
            diff = out - targets
            losses = (diff * diff).sum(axis=1)
            dout = 2.0 * diff
    _raise_nonfinite(losses)

    grad = np.zeros_like(theta)
    sqnorm = np.zeros(n)
    scale = alpha / n
    views = _layer_views(theta, sizes)
    offsets = np.cumsum([0] + [W.size + b.size for W, b in views])
    col_end = int(np.sum(sizes[1:]))
    delta = dout
    for l in range(len(views) - 1, -1, -1):
        W, _ = views[l]
        width = W.shape[0]
        if mask is not None:
            delta = delta * mask[:, col_end - width:col_end]
        col_end -= width
        if relu[l]:
            delta = np.where(pre[l] > 0.0, delta, 0.0)
        a_prev = acts[l]
        sqnorm += (delta * delta).sum(axis=1) * ((a_prev * a_prev).sum(axis=1) + 1.0)
        weighted = delta * scale[:, None]
        start = offsets[l]
        grad[start:start + W.size] = (weighted.T @ a_prev).ravel()
        grad[start + W.size:offsets[l + 1]] = weighted.sum(axis=0)
        if l > 0:
            delta = delta @ W
    return losses, grad, sqnorm


def inverse_cdf(cdf, targets):
    """Index of the first cdf entry strictly greater than each target."""
    pos = np.searchsorted(cdf, targets, side="right")
    return np.minimum(pos, cdf.shape[0] - 1).astype(np.int64)
