"""Numba @njit kernel implementations (default backend).

Same contracts as numpy_impl. Loops are written so each output element is
produced by exactly one fixed sequential accumulation, which keeps results
bit-deterministic run to run. Kernels compile lazily per dtype (float32
for training, float64 for gradient checks) and cache to disk.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d_forward(x, w, y, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho, Wo = y.shape[2], y.shape[3]
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    s = y[b, o, i, j]
                    for c in range(C):
                        for ki in range(k):
                            ii = i + ki - pad
                            if ii < 0 or ii >= H:
                                continue
                            for kj in range(k):
                                jj = j + kj - pad
                                if jj < 0 or jj >= W:
                                    continue
                                s += x[b, c, ii, jj] * w[o, c, ki, kj]
                    y[b, o, i, j] = s


def conv2d_forward(x, w, b, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho = H + 2 * pad - k + 1
    Wo = W + 2 * pad - k + 1
    y = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    _conv2d_forward(x, w, y, pad)
    if b is not None:
        y += b[None, :, None, None]
    return y


@njit(cache=True)
def _conv2d_backward_x(w, gy, gx, pad):
    B, C, H, W = gx.shape
    O, _, k, _ = w.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    for b in range(B):
        for c in range(C):
            for ii in range(H):
                for jj in range(W):
                    s = gx[b, c, ii, jj]
                    for o in range(O):
                        for ki in range(k):
                            i = ii - ki + pad
                            if i < 0 or i >= Ho:
                                continue
                            for kj in range(k):
                                j = jj - kj + pad
                                if j < 0 or j >= Wo:
                                    continue
                                s += gy[b, o, i, j] * w[o, c, ki, kj]
                    gx[b, c, ii, jj] = s


@njit(cache=True)
def _conv2d_backward_w(x, gy, gw, pad):
    B, C, H, W = x.shape
    O, _, k, _ = gw.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    for o in range(O):
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    s = gw[o, c, ki, kj]
                    for b in range(B):
                        for i in range(Ho):
                            ii = i + ki - pad
                            if ii < 0 or ii >= H:
                                continue
                            for j in range(Wo):
                                jj = j + kj - pad
                                if jj < 0 or jj >= W:
                                    continue
                                s += x[b, c, ii, jj] * gy[b, o, i, j]
                    gw[o, c, ki, kj] = s


def conv2d_backward(x, w, gy, pad, with_bias):
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    _conv2d_backward_x(w, gy, gx, pad)
    _conv2d_backward_w(x, gy, gw, pad)
    gb = gy.sum(axis=(0, 2, 3)) if with_bias else None
    return gx, gw, gb


@njit(cache=True)
def _maxpool2_forward(x, y, idx):
    B, C, Ho, Wo = y.shape
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = x[b, c, 2 * i, 2 * j]
                    arg = 0
                    p = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[b, c, 2 * i + di, 2 * j + dj]
                            if v > best:  # strict: first max wins
                                best = v
                                arg = p
                            p += 1
                    y[b, c, i, j] = best
                    idx[b, c, i, j] = arg


def maxpool2_forward(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    y = np.empty((B, C, Ho, Wo), dtype=x.dtype)
    idx = np.empty((B, C, Ho, Wo), dtype=np.int64)
    _maxpool2_forward(x, y, idx)
    return y, idx


@njit(cache=True)
def _maxpool2_backward(gy, idx, gx):
    B, C, Ho, Wo = gy.shape
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    p = idx[b, c, i, j]
                    gx[b, c, 2 * i + p // 2, 2 * j + p % 2] = gy[b, c, i, j]


def maxpool2_backward(gy, idx):
    B, C, Ho, Wo = gy.shape
    gx = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=gy.dtype)
    _maxpool2_backward(gy, idx, gx)
    return gx


@njit(cache=True)
def _upconv2_forward(x, w, y):
    B, C, H, W = x.shape
    O = w.shape[1]
    for b in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    for di in range(2):
                        for dj in range(2):
                            s = y[b, o, 2 * i + di, 2 * j + dj]
                            for c in range(C):
                                s += x[b, c, i, j] * w[c, o, di, dj]
                            y[b, o, 2 * i + di, 2 * j + dj] = s


def upconv2_forward(x, w, b):
    B, C, H, W = x.shape
    O = w.shape[1]
    y = np.zeros((B, O, 2 * H, 2 * W), dtype=x.dtype)
    _upconv2_forward(x, w, y)
    if b is not None:
        y += b[None, :, None, None]
    return y


@njit(cache=True)
def _upconv2_backward(x, w, gy, gx, gw):
    B, C, H, W = x.shape
    O = w.shape[1]
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    s = gx[b, c, i, j]
                    for o in range(O):
                        for di in range(2):
                            for dj in range(2):
                                s += gy[b, o, 2 * i + di, 2 * j + dj] * w[c, o, di, dj]
                    gx[b, c, i, j] = s
    for c in range(C):
        for o in range(O):
            for di in range(2):
                for dj in range(2):
                    s = gw[c, o, di, dj]
                    for b in range(B):
                        for i in range(H):
                            for j in range(W):
                                s += x[b, c, i, j] * gy[b, o, 2 * i + di, 2 * j + dj]
                    gw[c, o, di, dj] = s


def upconv2_backward(x, w, gy, with_bias):
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    _upconv2_backward(x, w, gy, gx, gw)
    gb = gy.sum(axis=(0, 2, 3)) if with_bias else None
    return gx, gw, gb
