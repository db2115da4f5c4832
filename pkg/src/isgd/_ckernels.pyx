# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_pykernels``.

Loops sample by sample so small networks avoid per-call numpy overhead.
Results agree with the numpy kernels to rounding, not bitwise.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, isfinite

from .errors import NumericError

cnp.import_array()

LOSS_NLL = 0
LOSS_MSE = 1


cdef void _layer_offsets(const cnp.int64_t[::1] sizes, Py_ssize_t[::1] w_off,
                         Py_ssize_t[::1] a_off) noexcept nogil:
    cdef Py_ssize_t l, L = sizes.shape[0] - 1, pos = 0, apos = 0
    for l in range(L):
        w_off[l] = pos
        pos += sizes[l + 1] * sizes[l] + sizes[l + 1]
        a_off[l] = apos
        apos += sizes[l]
    a_off[L] = apos


cdef void _forward_one(const double[::1] theta, const cnp.int64_t[::1] sizes,
                       const unsigned char[::1] relu, const double[:, ::1] X,
                       const double[:, ::1] mask, bint use_mask, Py_ssize_t i,
                       const Py_ssize_t[::1] w_off, const Py_ssize_t[::1] a_off,
                       double[::1] act, double[::1] pre) noexcept nogil:
    # act holds every layer's activations back to back (input first);
    # pre holds pre-activations for layers 1..L at the same offsets.
    cdef Py_ssize_t L = sizes.shape[0] - 1, l, o, j, fan_in, fan_out, wp, ap, op, col = 0
    cdef double z
    for j in range(sizes[0]):
        act[j] = X[i, j]
    for l in range(L):
        fan_in = sizes[l]
        fan_out = sizes[l + 1]
        wp = w_off[l]
        ap = a_off[l]
        op = a_off[l + 1]
        for o in range(fan_out):
            z = theta[wp + fan_in * fan_out + o]
            for j in range(fan_in):
                z = z + theta[wp + o * fan_in + j] * act[ap + j]
            pre[op + o] = z
            if relu[l] and not (z > 0.0):
                z = 0.0
            if use_mask:
                z = z * mask[i, col + o]
            act[op + o] = z
        col += fan_out


def dense_forward(const double[::1] theta, const cnp.int64_t[::1] sizes,
                  const unsigned char[::1] relu, const double[:, ::1] X, mask=None):
    cdef Py_ssize_t n = X.shape[0], L = sizes.shape[0] - 1, i, o
    cdef Py_ssize_t[::1] w_off = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] a_off = np.empty(L + 1, dtype=np.intp)
    _layer_offsets(sizes, w_off, a_off)
    cdef Py_ssize_t total = a_off[L] + sizes[L]
    cdef double[::1] act = np.empty(total)
    cdef double[::1] pre = np.empty(total)
    cdef double[:, ::1] m = mask if mask is not None else np.empty((1, 1))
    cdef bint use_mask = mask is not None
    out = np.empty((n, sizes[L]))
    cdef double[:, ::1] out_v = out
    with nogil:
        for i in range(n):
            _forward_one(theta, sizes, relu, X, m, use_mask, i, w_off, a_off, act, pre)
            for o in range(sizes[L]):
                out_v[i, o] = act[a_off[L] + o]
    return out


def dense_grad(const double[::1] theta, const cnp.int64_t[::1] sizes,
               const unsigned char[::1] relu, const double[:, ::1] X, int loss_kind,
               const cnp.int64_t[::1] labels, const double[:, ::1] targets,
               const double[::1] alpha, mask=None):
    cdef Py_ssize_t n = X.shape[0], L = sizes.shape[0] - 1
    cdef Py_ssize_t i, l, o, j, fan_in, fan_out, wp, ap, op, col, width_max = 0
    cdef Py_ssize_t[::1] w_off = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] a_off = np.empty(L + 1, dtype=np.intp)
    _layer_offsets(sizes, w_off, a_off)
    for l in range(L + 1):
        if sizes[l] > width_max:
            width_max = sizes[l]
    cdef Py_ssize_t total = a_off[L] + sizes[L]
    cdef Py_ssize_t col_total = total - sizes[0]
    cdef double[::1] act = np.empty(total)
    cdef double[::1] pre = np.empty(total)
    cdef double[::1] delta = np.empty(width_max)
    cdef double[::1] delta_prev = np.empty(width_max)
    cdef double[:, ::1] m = mask if mask is not None else np.empty((1, 1))
    cdef bint use_mask = mask is not None
    losses = np.empty(n)
    grad = np.zeros(theta.shape[0])
    sqnorm = np.zeros(n)
    cdef double[::1] losses_v = losses, grad_v = grad, sq_v = sqnorm
    cdef double mx, s, d, scale, nd, na, z
    cdef Py_ssize_t n_out = sizes[L], y, bad = -1

    with nogil:
        for i in range(n):
            _forward_one(theta, sizes, relu, X, m, use_mask, i, w_off, a_off, act, pre)
            op = a_off[L]
            if loss_kind == 0:
                y = labels[i]
                mx = act[op]
                for o in range(1, n_out):
                    if act[op + o] > mx:
                        mx = act[op + o]
                s = 0.0
                for o in range(n_out):
                    delta[o] = exp(act[op + o] - mx)
                    s = s + delta[o]
                losses_v[i] = log(s) + mx - act[op + y]
                for o in range(n_out):
                    delta[o] = delta[o] / s
                delta[y] = delta[y] - 1.0
            else:
                s = 0.0
                for o in range(n_out):
                    d = act[op + o] - targets[i, o]
                    s = s + d * d
                    delta[o] = 2.0 * d
                losses_v[i] = s
            if not isfinite(losses_v[i]):
                bad = i
                break

            scale = alpha[i] / n
            col = col_total
            for l in range(L - 1, -1, -1):
                fan_in = sizes[l]
                fan_out = sizes[l + 1]
                wp = w_off[l]
                ap = a_off[l]
                op = a_off[l + 1]
                col = col - fan_out
                nd = 0.0
                for o in range(fan_out):
                    d = delta[o]
                    if use_mask:
                        d = d * m[i, col + o]
                    if relu[l] and not (pre[op + o] > 0.0):
                        d = 0.0
                    delta[o] = d
                    nd = nd + d * d
                na = 0.0
                for j in range(fan_in):
                    na = na + act[ap + j] * act[ap + j]
                sq_v[i] += nd * (na + 1.0)
                for o in range(fan_out):
                    d = scale * delta[o]
                    for j in range(fan_in):
                        grad_v[wp + o * fan_in + j] += d * act[ap + j]
                    grad_v[wp + fan_in * fan_out + o] += d
                if l > 0:
                    for j in range(fan_in):
                        z = 0.0
                        for o in range(fan_out):
                            z = z + theta[wp + o * fan_in + j] * delta[o]
                        delta_prev[j] = z
                    for j in range(fan_in):
                        delta[j] = delta_prev[j]
    if bad >= 0:
        raise NumericError(f"non-finite loss {losses[bad]!r} for sample {bad}", index=int(bad))
    return losses, grad, sqnorm


def inverse_cdf(const double[::1] cdf, const double[::1] targets):
    """Index of the first cdf entry strictly greater than each target."""
    cdef Py_ssize_t n = cdf.shape[0], k, lo, hi, mid
    out = np.empty(targets.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] out_v = out
    cdef double t
    with nogil:
        for k in range(targets.shape[0]):
            t = targets[k]
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[mid] > t:
                    hi = mid
                else:
                    lo = mid + 1
            if lo > n - 1:
                lo = n - 1
            out_v[k] = lo
    return out
