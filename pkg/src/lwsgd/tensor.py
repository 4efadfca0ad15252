"""Dense numeric kernels for the model layers.

Tensors are plain contiguous numpy arrays; float32 is the working precision
and float64 is available for verification runs (gradient checks want the
headroom).  Convolution is fixed at 3x3 kernels, stride 1, padding 1 --
cross-correlation, no kernel flip -- which is all the supported
architectures use.  Every operation here accepts either a single sample
(``C,H,W``) or a batch (``B,C,H,W``).
"""

import numpy as np

from lwsgd._backend import BACKEND, kernels
from lwsgd.errors import ShapeError

DEFAULT_DTYPE = np.float32


def backend_name():
    """Identify which kernel backend was selected at import time."""
    return BACKEND


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def _batched(x, name):
    """Promote (C,H,W) to (1,C,H,W); return (array, was_single)."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name}: expected 3-D or 4-D input, got shape {x.shape}")


def conv2d(x, kern, bias=None):
    """Same-padding 3x3 convolution with per-output-channel bias."""
    xb, single = _batched(x, "conv2d")
    kern = np.asarray(kern)
    if kern.ndim != 4 or kern.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: kernels must be (Co,Ci,3,3), got {kern.shape}")
    if kern.shape[1] != xb.shape[1]:
        raise ShapeError(
            f"conv2d: input channels {xb.shape[1:]} do not match kernels {kern.shape}"
        )
    if bias is None:
        bias = np.zeros(kern.shape[0], dtype=xb.dtype)
    bias = np.asarray(bias, dtype=xb.dtype)
    if bias.shape != (kern.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({kern.shape[0]},)")
    y = kernels.conv2d_forward(np.ascontiguousarray(xb), kern.astype(xb.dtype, copy=False), bias)
    return y[0] if single else y


def conv2d_backward(x, kern, grad_out, need_input_grad=True):
    """Exact gradients of conv2d; returns (grad_input, grad_kernels, grad_bias).

    grad_input is None when need_input_grad is False (truncated backward stops
    propagating below the deepest selected layer).
    """
    xb, single = _batched(x, "conv2d_backward")
    gb, gsingle = _batched(grad_out, "conv2d_backward")
    kern = np.asarray(kern)
    if single != gsingle or gb.shape[0] != xb.shape[0]:
        raise ShapeError(
            f"conv2d_backward: input {np.asarray(x).shape} vs grad {np.asarray(grad_out).shape}"
        )
    if gb.shape[1] != kern.shape[0] or gb.shape[2:] != xb.shape[2:]:
        raise ShapeError(
            f"conv2d_backward: grad shape {gb.shape} inconsistent with "
            f"input {xb.shape} and kernels {kern.shape}"
        )
    gx, gk, gbias = kernels.conv2d_backward(
        np.ascontiguousarray(xb), np.ascontiguousarray(kern),
        np.ascontiguousarray(gb), need_input_grad=need_input_grad,
    )
    if gx is not None and single:
        gx = gx[0]
    return gx, gk, gbias


def maxpool2(x):
    """2x2 max pooling with argmax indices for exact backward routing."""
    xb, single = _batched(x, "maxpool2")
    if xb.shape[2] % 2 or xb.shape[3] % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {xb.shape}")
    y, idx = kernels.maxpool2_forward(np.ascontiguousarray(xb))
    if single:
        return y[0], idx[0]
    return y, idx


def maxpool2_backward(idx, grad_out):
    ib, single = _batched(idx, "maxpool2_backward")
    gb, gsingle = _batched(grad_out, "maxpool2_backward")
    if ib.shape != gb.shape:
        raise ShapeError(f"maxpool2_backward: indices {ib.shape} vs grad {gb.shape}")
    gx = kernels.maxpool2_backward(np.ascontiguousarray(ib), np.ascontiguousarray(gb))
    return gx[0] if single else gx


def relu(x):
    return np.maximum(np.asarray(x), 0)


def relu_backward(x, grad_out):
    """Mask upstream gradient by x > 0; the derivative at exactly 0 is 0."""
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward: input {x.shape} vs grad {grad_out.shape}")
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)
