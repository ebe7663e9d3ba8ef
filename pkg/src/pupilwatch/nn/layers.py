"""Forward/backward primitives for 1-D CNNs.

Activations use a channels-last layout ``(batch, length, channels)`` so the
convolution reduces to a single matrix product over unfolded patches.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_same(x, k):
    left = (k - 1) // 2
    right = k - 1 - left
    return np.pad(x, ((0, 0), (left, right), (0, 0))), left


def conv1d_forward(x, w, b):
    """Stride-1 'same' convolution.

    Parameters
    ----------
    x : ndarray, shape (B, L, Cin)
    w : ndarray, shape (Cout, Cin, K)
    b : ndarray, shape (Cout,)

    Returns
    -------
    out : ndarray, shape (B, L, Cout)
    cols : ndarray, shape (B * L, Cin * K)
        Unfolded patches, kept for the backward pass.
    """
    bsz, length, cin = x.shape
    cout, _, k = w.shape
    xp, _ = _pad_same(x, k)
    # (B, L, Cin, K) -> rows of Cin*K, matching w.reshape(Cout, Cin*K)
    cols = sliding_window_view(xp, k, axis=1).reshape(bsz * length, cin * k)
    out = cols @ w.reshape(cout, cin * k).T + b
    return out.reshape(bsz, length, cout), cols


def conv1d_backward(dout, cols, x_shape, w):
    bsz, length, cin = x_shape
    cout, _, k = w.shape
    d2 = dout.reshape(bsz * length, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cout, cin * k)).reshape(bsz, length, cin, k)
    left = (k - 1) // 2
    dxp = np.zeros((bsz, length + k - 1, cin), dtype=dout.dtype)
    for j in range(k):
        dxp[:, j:j + length, :] += dcols[:, :, :, j]
    return dxp[:, left:left + length, :], dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def maxpool_forward(x, width):
    """Non-overlapping max pool; a trailing remainder shorter than `width` is dropped.

    Ties resolve to the first position in the pool.
    """
    bsz, length, c = x.shape
    lp = length // width
    xr = x[:, :lp * width, :].reshape(bsz, lp, width, c)
    out = xr[:, :, 0, :].copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, width):
        better = xr[:, :, j, :] > out
        np.copyto(out, xr[:, :, j, :], where=better)
        idx[better] = j
    return out, idx


def maxpool_backward(dout, idx, x_shape, width):
    bsz, length, c = x_shape
    lp = dout.shape[1]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dxr = dx[:, :lp * width, :].reshape(bsz, lp, width, c)
    for j in range(width):
        dxr[:, :, j, :] = np.where(idx == j, dout, 0.0)
    return dx


def dropout_mask(shape, rate, rng, dtype=np.float64):
    """Inverted-dropout mask: zeros with probability `rate`, survivors scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
