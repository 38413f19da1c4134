"""Pure-numpy kernel implementations (fallback backend).

All arrays are rank-4 (batch, channel, height, width). Convolution is
cross-correlation with zero padding. Max-pool ties resolve to the first
cell in row-major order within the 2x2 block.
"""

import numpy as np


def conv2d_forward(x, w, b, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho = H + 2 * pad - k + 1
    Wo = W + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            y += np.einsum(
                "bchw,oc->bohw",
                xp[:, :, ki:ki + Ho, kj:kj + Wo],
                w[:, :, ki, kj],
                optimize=True,
            )
    if b is not None:
        y += b[None, :, None, None]
    return y


def conv2d_backward(x, w, gy, pad, with_bias):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + Ho, kj:kj + Wo]
            gw[:, :, ki, kj] = np.einsum("bchw,bohw->oc", patch, gy, optimize=True)
            gxp[:, :, ki:ki + Ho, kj:kj + Wo] += np.einsum(
                "bohw,oc->bchw", gy, w[:, :, ki, kj], optimize=True
            )
    gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
    gb = gy.sum(axis=(0, 2, 3)) if with_bias else None
    return np.ascontiguousarray(gx), gw, gb


def maxpool2_forward(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    blocks = (
        x.reshape(B, C, Ho, 2, Wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho, Wo, 4)
    )
    idx = blocks.argmax(axis=-1).astype(np.int64)  # first max wins, row-major
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(gy, idx):
    B, C, Ho, Wo = gy.shape
    gblocks = np.zeros((B, C, Ho, Wo, 4), dtype=gy.dtype)
    np.put_along_axis(gblocks, idx[..., None], gy[..., None], axis=-1)
    gx = (
        gblocks.reshape(B, C, Ho, Wo, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho * 2, Wo * 2)
    )
    return np.ascontiguousarray(gx)


def upconv2_forward(x, w, b):
    B, C, H, W = x.shape
    O = w.shape[1]
    t = np.tensordot(x, w, axes=([1], [0]))  # (B, H, W, O, 2, 2)
    y = t.transpose(0, 3, 1, 4, 2, 5).reshape(B, O, 2 * H, 2 * W)
    if b is not None:
        y = y + b[None, :, None, None]
    return np.ascontiguousarray(y)


def upconv2_backward(x, w, gy, with_bias):
    B, C, H, W = x.shape
    O = w.shape[1]
    gv = gy.reshape(B, O, H, 2, W, 2).transpose(0, 1, 2, 4, 3, 5)  # (B,O,H,W,2,2)
    gx = np.einsum("bohwde,code->bchw", gv, w, optimize=True)
    gw = np.einsum("bchw,bohwde->code", x, gv, optimize=True)
    gb = gy.sum(axis=(0, 2, 3)) if with_bias else None
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw), gb
