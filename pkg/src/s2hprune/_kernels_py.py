"""Pure-numpy im2col/col2im, used when the compiled extension is unavailable."""

import numpy as np


def im2col(xp, kh, kw, stride):
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    out = np.empty((B, C, kh, kw, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i, j] = xp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                                 j:j + stride * (Wo - 1) + 1:stride]
    return out.reshape(B, C * kh * kw, Ho * Wo)


def col2im(cols, padded_shape, kh, kw, stride):
    B, C, Hp, Wp = padded_shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    cols = cols.reshape(B, C, kh, kw, Ho, Wo)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (Ho - 1) + 1:stride,
                j:j + stride * (Wo - 1) + 1:stride] += cols[:, :, i, j]
    return out
