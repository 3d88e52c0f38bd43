"""Hot inner loops: the tanh recurrence and segment mean pooling.

Each kernel has a numpy implementation and a numba one with identical
semantics. The module-level names dispatch on ``_accel.USE_NUMBA``; the
suffixed variants are always importable so the two can be benchmarked and
cross-checked in one process. The recurrence's forward pass is mostly tanh,
so it only takes the numba path when numba has vectorised math
(``_accel.NUMBA_VECTOR_MATH``); see benchmarks/bench_kernels.py.

Layouts are time-major for the recurrence: ``pre`` is ``[T, B, H]``.
"""
import numpy as np

from ._accel import NUMBA_VECTOR_MATH, USE_NUMBA, optional_njit


# --------------------------------------------------------------------------
# tanh recurrence: h_t = tanh(pre_t + h_{t-1} @ U^T), h_{-1} = 0

def rnn_scan_forward_numpy(pre, U):
    T, B, H = pre.shape
    out = np.empty_like(pre)
    h = np.zeros((B, H))
    Ut = U.T
    for t in range(T):
        h = np.tanh(pre[t] + h @ Ut)
        out[t] = h
    return out


def rnn_scan_backward_numpy(dout, hs, U):
    T, B, H = hs.shape
    dpre = np.empty_like(hs)
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        da = (dout[t] + dh) * (1.0 - hs[t] * hs[t])
        dpre[t] = da
        if t > 0:
            dU += da.T @ hs[t - 1]
        dh = da @ U
    return dpre, dU


@optional_njit(cache=True)
def _rnn_scan_forward_jit(pre, Ut):
    T, B, H = pre.shape
    out = np.empty_like(pre)
    h = np.zeros((B, H))
    for t in range(T):
        z = np.dot(h, Ut)
        for b in range(B):
            for j in range(H):
                h[b, j] = np.tanh(pre[t, b, j] + z[b, j])
        out[t] = h
    return out


@optional_njit(cache=True)
def _rnn_scan_backward_jit(dout, hs, U):
    T, B, H = hs.shape
    dpre = np.empty_like(hs)
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    da = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                v = hs[t, b, j]
                da[b, j] = (dout[t, b, j] + dh[b, j]) * (1.0 - v * v)
        dpre[t] = da
        if t > 0:
            dU += np.dot(da.T, hs[t - 1])
        dh = np.dot(da, U)
    return dpre, dU


def rnn_scan_forward_numba(pre, U):
    return _rnn_scan_forward_jit(np.ascontiguousarray(pre), np.ascontiguousarray(U.T))


def rnn_scan_backward_numba(dout, hs, U):
    return _rnn_scan_backward_jit(
        np.ascontiguousarray(dout), np.ascontiguousarray(hs), np.ascontiguousarray(U)
    )


# --------------------------------------------------------------------------
# segment mean: out[k] = mean(X[starts[k]:ends[k]]), zero row when empty

def segment_mean_forward_numpy(X, starts, ends):
    out = np.zeros((len(starts), X.shape[1]))
    for k in range(len(starts)):
        s, e = starts[k], ends[k]
        if e > s:
            out[k] = X[s:e].sum(axis=0) / (e - s)
    return out


def segment_mean_backward_numpy(dout, starts, ends, n_rows):
    dX = np.zeros((n_rows, dout.shape[1]))
    for k in range(len(starts)):
        s, e = starts[k], ends[k]
        if e > s:
            dX[s:e] += dout[k] / (e - s)
    return dX


@optional_njit(cache=True)
def _segment_mean_forward_jit(X, starts, ends):
    K = starts.shape[0]
    d = X.shape[1]
    out = np.zeros((K, d))
    for k in range(K):
        s = starts[k]
        e = ends[k]
        if e > s:
            for i in range(s, e):
                for j in range(d):
                    out[k, j] += X[i, j]
            for j in range(d):
                out[k, j] /= e - s
    return out


@optional_njit(cache=True)
def _segment_mean_backward_jit(dout, starts, ends, n_rows):
    K = starts.shape[0]
    d = dout.shape[1]
    dX = np.zeros((n_rows, d))
    for k in range(K):
        s = starts[k]
        e = ends[k]
        if e > s:
            for i in range(s, e):
                for j in range(d):
                    dX[i, j] += dout[k, j] / (e - s)
    return dX


def segment_mean_forward_numba(X, starts, ends):
    return _segment_mean_forward_jit(
        np.ascontiguousarray(X), np.asarray(starts, np.int64), np.asarray(ends, np.int64)
    )


def segment_mean_backward_numba(dout, starts, ends, n_rows):
    return _segment_mean_backward_jit(
        np.ascontiguousarray(dout), np.asarray(starts, np.int64), np.asarray(ends, np.int64), n_rows
    )


if USE_NUMBA:
    rnn_scan_forward = rnn_scan_forward_numba if NUMBA_VECTOR_MATH else rnn_scan_forward_numpy
    rnn_scan_backward = rnn_scan_backward_numba
    segment_mean_forward = segment_mean_forward_numba
    segment_mean_backward = segment_mean_backward_numba
else:
    rnn_scan_forward = rnn_scan_forward_numpy
    rnn_scan_backward = rnn_scan_backward_numpy
    segment_mean_forward = segment_mean_forward_numpy
    segment_mean_backward = segment_mean_backward_numpy
