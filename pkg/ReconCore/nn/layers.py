"""
Layer primitives with hand-written backward passes.

Tensors are real float arrays laid out (batch, channels, height, width).
Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes ``(grad_output, cache)`` and returns the gradient with
respect to the input followed by the parameter gradients, if any.
"""

import numpy as np


def conv2d_forward(x, w, b):
    """
    'same' 2D convolution (cross-correlation) with an odd square kernel.

    Args:
        x (ndarray): Input (B, C_in, H, W).
        w (ndarray): Kernel (C_out, C_in, k, k), k odd.
        b (ndarray): Bias (C_out,).

    Returns:
        tuple: Output (B, C_out, H, W) and the cache for ``conv2d_backward``.
    """
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d expects {c_in} input channels, got {x.shape[1]}")
    pad = k // 2
    batch, _, height, width = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((batch, c_out, height, width), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            y += np.einsum('bchw,oc->bohw', xp[:, :, i:i + height, j:j + width], w[:, :, i, j], optimize=True)
    y += b[None, :, None, None]
    return y, (xp, w)


def conv2d_backward(gy, cache):
    xp, w = cache
    k = w.shape[2]
    pad = k // 2
    height, width = gy.shape[2:]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            window = xp[:, :, i:i + height, j:j + width]
            gw[:, :, i, j] = np.einsum('bohw,bchw->oc', gy, window, optimize=True)
            gxp[:, :, i:i + height, j:j + width] += np.einsum('bohw,oc->bchw', gy, w[:, :, i, j], optimize=True)
    gb = gy.sum(axis=(0, 2, 3))
    return gxp[:, :, pad:pad + height, pad:pad + width], gw, gb


def conv_transpose2_forward(x, w, b):
    """
    Transposed convolution with a 2×2 kernel and stride 2 (exact 2× upsampling).

    Args:
        x (ndarray): Input (B, C_in, H, W).
        w (ndarray): Kernel (C_in, C_out, 2, 2).
        b (ndarray): Bias (C_out,).
    """
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2 expects {w.shape[0]} input channels, got {x.shape[1]}")
    batch, _, height, width = x.shape
    y = np.einsum('bchw,coij->bohiwj', x, w, optimize=True)
    y = y.reshape(batch, w.shape[1], 2 * height, 2 * width) + b[None, :, None, None]
    return y, (x, w)


def conv_transpose2_backward(gy, cache):
    x, w = cache
    batch, _, height, width = x.shape
    g6 = gy.reshape(batch, w.shape[1], height, 2, width, 2)
    gx = np.einsum('bohiwj,coij->bchw', g6, w, optimize=True)
    gw = np.einsum('bchw,bohiwj->coij', x, g6, optimize=True)
    return gx, gw, gy.sum(axis=(0, 2, 3))


def avg_pool2_forward(x):
    """2×2 average pooling with stride 2; H and W must be even."""
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {height}x{width}")
    y = x.reshape(batch, channels, height // 2, 2, width // 2, 2).mean(axis=(3, 5))
    return y, None


def avg_pool2_backward(gy, cache):
    return np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) / 4.0


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(gy, cache):
    return gy * cache


def concat_forward(a, b):
    """Channel concatenation [a, b]."""
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(gy, cache):
    return gy[:, :cache], gy[:, cache:]
