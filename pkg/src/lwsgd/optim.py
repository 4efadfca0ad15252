"""Optimizers with layer-masked updates, plus learning-rate schedules.

Both optimizers apply a step only to the layers present in the gradient
dict; parameters and moment buffers of every other layer are untouched,
bit for bit.  Adam keeps one step counter per layer so bias correction
tracks how often that layer has actually been updated.
"""

from dataclasses import dataclass

import numpy as np

from lwsgd.errors import ConfigError, ShapeError


class AdamState:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.kind = "adam"
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(params.p, dtype=params.dtype)
        self.v = np.zeros(params.p, dtype=params.dtype)
        self.t = np.zeros(params.network.num_layers + 1, dtype=np.int64)


class NesterovState:
    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.kind = "nesterov_sgd"
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = np.zeros(params.p, dtype=params.dtype)


def _layer_slices(params, index, gw, gb):
    seg = params.network.segment(index)
    if gw.shape != seg.weight_shape or gb.shape != seg.bias_shape:
        raise ShapeError(
            f"layer {index}: gradient shapes {gw.shape}/{gb.shape} != "
            f"segment {seg.weight_shape}/{seg.bias_shape}"
        )
    w_sl = slice(seg.offset, seg.offset + seg.weight_size)
    b_sl = slice(seg.offset + seg.weight_size, seg.end)
    return (w_sl, gw.reshape(-1)), (b_sl, gb)


def adam_step(state, params, grads):
    """Adam with bias correction on the layers present in ``grads`` only."""
    b1, b2 = state.beta1, state.beta2
    for index in sorted(grads):
        gw, gb = grads[index]
        state.t[index] += 1
        t = state.t[index]
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for sl, g in _layer_slices(params, index, gw, gb):
            g = g.astype(params.dtype, copy=False)
            state.m[sl] = b1 * state.m[sl] + (1 - b1) * g
            state.v[sl] = b2 * state.v[sl] + (1 - b2) * g * g
            mhat = state.m[sl] / bc1
            vhat = state.v[sl] / bc2
            params.theta[sl] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    params.mark_updated()


def nesterov_sgd_step(state, params, grads, lr):
    """Nesterov momentum SGD with coupled L2 weight decay on selected layers."""
    mu = state.momentum
    wd = state.weight_decay
    for index in sorted(grads):
        gw, gb = grads[index]
        for sl, g in _layer_slices(params, index, gw, gb):
            g = g.astype(params.dtype, copy=False)
            if wd:
                g = g + wd * params.theta[sl]
            state.buf[sl] = mu * state.buf[sl] + g
            params.theta[sl] -= lr * (g + mu * state.buf[sl])
    params.mark_updated()


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"     # constant | halve_every
    base_lr: float = 0.01
    period: int = 30

    def __post_init__(self):
        if self.kind not in ("constant", "halve_every"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "halve_every" and self.period < 1:
            raise ConfigError(f"halve_every needs period >= 1, got {self.period}")


def lr_at(schedule, epoch):
    """lr(epoch) = base_lr * 0.5^floor(epoch / period) for halve_every."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if schedule.kind == "constant":
        return schedule.base_lr
    return schedule.base_lr * 0.5 ** (epoch // schedule.period)
