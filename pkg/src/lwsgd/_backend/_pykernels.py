"""Pure-numpy kernel implementations.

Fallback backend used when the compiled extension is unavailable (or forced
via ``LWSGD_BACKEND=numpy``).  Convolutions are lowered to one GEMM per batch
chunk through a sliding-window view; chunking caps the size of the implicit
im2col copy that ``tensordot`` materialises.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"

# Upper bound on the scratch im2col copy, in scalars (32 MB at float32).
_CHUNK_SCALARS = 8_000_000


def _chunk_size(ci, h, w):
    return max(1, _CHUNK_SCALARS // max(1, ci * 9 * h * w))


def conv2d_forward(x, kernels, bias):
    """3x3 same-padding cross-correlation. x: (B,Ci,H,W) -> (B,Co,H,W)."""
    b, ci, h, w = x.shape
    co = kernels.shape[0]
    out = np.empty((b, co, h, w), dtype=x.dtype)
    step = _chunk_size(ci, h, w)
    for lo in range(0, b, step):
        hi = min(b, lo + step)
        xp = np.zeros((hi - lo, ci, h + 2, w + 2), dtype=x.dtype)
        xp[:, :, 1:-1, 1:-1] = x[lo:hi]
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n,Ci,H,W,3,3)
        y = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (n,H,W,Co)
        out[lo:hi] = y.transpose(0, 3, 1, 2)
    out += bias[None, :, None, None]
    return out


def conv2d_backward(x, kernels, grad_out, need_input_grad=True):
    """Gradients of conv2d_forward. Returns (grad_x | None, grad_k, grad_b)."""
    b, ci, h, w = x.shape
    co = kernels.shape[0]
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_k = np.zeros_like(kernels)
    step = _chunk_size(ci, h, w)
    for lo in range(0, b, step):
        hi = min(b, lo + step)
        xp = np.zeros((hi - lo, ci, h + 2, w + 2), dtype=x.dtype)
        xp[:, :, 1:-1, 1:-1] = x[lo:hi]
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))
        # (B,Co,H,W) x (B,Ci,H,W,3,3) summed over B,H,W -> (Co,Ci,3,3)
        grad_k += np.tensordot(grad_out[lo:hi], win, axes=([0, 2, 3], [0, 2, 3]))
    if not need_input_grad:
        return None, grad_k, grad_b
    gxp = np.zeros((b, ci, h + 2, w + 2), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            tap = kernels[:, :, ky, kx]  # (Co,Ci)
            contrib = np.tensordot(grad_out, tap, axes=([1], [0]))  # (B,H,W,Ci)
            gxp[:, :, ky:ky + h, kx:kx + w] += contrib.transpose(0, 3, 1, 2)
    return gxp[:, :, 1:-1, 1:-1], grad_k, grad_b


def maxpool2_forward(x):
    """2x2 max pooling; ties resolved to the first window cell in row-major
    order.  Returns (pooled, window_argmax) with argmax in {0,1,2,3}."""
    b, c, h, w = x.shape
    xr = x.reshape(b, c, h // 2, 2, w // 2, 2)
    xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=4).astype(np.uint8)
    out = np.take_along_axis(xr, idx[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(idx, grad_out):
    """Route each upstream gradient to the argmax cell of its window."""
    b, c, h2, w2 = grad_out.shape
    g = np.zeros((b, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(g, idx[..., None].astype(np.intp), grad_out[..., None], axis=4)
    g = g.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(b, c, h2 * 2, w2 * 2))
