"""Post-training parameter analysis.

Three lenses on which coordinates of theta did the work:

* movement ranking: |theta_final - theta_init| sorted descending, feeding the
  two re-initialization operators (reset the most-moved coordinates, or keep
  only them);
* active-frequency maps: per epoch, the largest alpha% of the full-batch
  gradient components count as active; counts accumulate over training;
* gradient profiles: sorted absolute values of one gradient vector.

All operators are pure and deterministic; ties break toward the lower
parameter index.
"""

import math
from dataclasses import dataclass

import numpy as np

from lwsgd import model
from lwsgd.errors import ShapeError


def percent_to_count(percent, p):
    """Map a percentage to a coordinate count, rounding half up."""
    if not 0.0 <= percent <= 100.0:
        raise ValueError(f"percent must lie in [0, 100], got {percent}")
    return int(math.floor(percent / 100.0 * p + 0.5))


@dataclass(frozen=True)
class MovementRanking:
    """Permutation of [0,p) ordered by movement, largest first."""

    order: np.ndarray      # int64 permutation
    movement: np.ndarray   # |theta_T - theta_0| in original index order

    @property
    def p(self):
        return self.order.shape[0]


def rank_by_movement(theta_T, theta_0):
    theta_T = np.asarray(theta_T)
    theta_0 = np.asarray(theta_0)
    if theta_T.shape != theta_0.shape or theta_T.ndim != 1:
        raise ShapeError(f"rank_by_movement: {theta_T.shape} vs {theta_0.shape}")
    movement = np.abs(theta_T.astype(np.float64) - theta_0.astype(np.float64))
    order = np.argsort(-movement, kind="stable")
    return MovementRanking(order=order, movement=movement)


def active_reinit(theta_T, theta_0, ranking, percent):
    """Reset the ``percent``% most-moved coordinates to their initial values."""
    k = percent_to_count(percent, ranking.p)
    out = np.array(theta_T, copy=True)
    idx = ranking.order[:k]
    out[idx] = np.asarray(theta_0)[idx]
    return out


def lazy_reinit(theta_T, theta_0, ranking, percent):
    """Keep the ``percent``% most-moved coordinates trained; reset the rest."""
    k = percent_to_count(percent, ranking.p)
    out = np.array(theta_0, copy=True)
    idx = ranking.order[:k]
    out[idx] = np.asarray(theta_T)[idx]
    return out


def reinit_sweep(network, theta_T, theta_0, grid, images, labels,
                 batch_size=512):
    """Evaluate both re-init operators across a percentage grid.

    Returns rows (mode, percent, test_accuracy) with mode in {active, lazy}.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("reinit_sweep needs a non-empty percentage grid")
    ranking = rank_by_movement(theta_T, theta_0)
    scratch = model.ParamStore(network, np.array(theta_T, copy=True))
    rows = []
    for percent in grid:
        for mode, op in (("active", active_reinit), ("lazy", lazy_reinit)):
            scratch.theta[...] = op(theta_T, theta_0, ranking, percent)
            scratch.mark_updated()
            _, acc = model.evaluate(network, scratch, images, labels, batch_size)
            rows.append((mode, float(percent), acc))
    return rows


@dataclass
class ActiveFrequencyMap:
    """How often each coordinate landed in the top alpha% of |gradient|."""

    alpha: float
    p: int
    counts: np.ndarray = None
    epochs: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 100.0:
            raise ValueError(f"alpha must lie in (0, 100], got {self.alpha}")
        if self.counts is None:
            self.counts = np.zeros(self.p, dtype=np.int64)

    @property
    def k_active(self):
        return int(math.ceil(self.alpha / 100.0 * self.p))

    def add_epoch(self, grad):
        grad = np.asarray(grad)
        if grad.shape != (self.p,):
            raise ShapeError(f"gradient shape {grad.shape} != ({self.p},)")
        order = np.argsort(-np.abs(grad), kind="stable")
        self.counts[order[:self.k_active]] += 1
        self.epochs += 1


def active_frequency(gradients, alpha):
    """Accumulate active counts over a sequence of per-epoch gradients."""
    freq = None
    for grad in gradients:
        grad = np.asarray(grad)
        if freq is None:
            freq = ActiveFrequencyMap(alpha=alpha, p=grad.shape[0])
        freq.add_epoch(grad)
    if freq is None:
        raise ValueError("active_frequency needs at least one gradient")
    return freq


@dataclass(frozen=True)
class LayerHeatmap:
    """Counts of one layer reshaped for plotting, normalized to [0, 1].

    Dense layers map to a (fan_out, fan_in) grid.  Conv layers map to a
    (Co*3, Ci*3) grid of 3x3 kernel tiles.  Biases are kept as a separate
    vector rather than drawn into the grid.
    """

    index: int
    kind: str
    grid: np.ndarray
    bias: np.ndarray


def layer_heatmap(freq, network):
    """Per-layer heatmaps of an ActiveFrequencyMap; values are counts / epochs."""
    if freq.p != network.p:
        raise ShapeError(f"frequency map p={freq.p} != network p={network.p}")
    if freq.epochs == 0:
        raise ValueError("frequency map holds no epochs yet")
    scale = 1.0 / freq.epochs
    maps = {}
    for seg in network.segments:
        w_counts = seg.weight_view(freq.counts)
        b_counts = seg.bias_view(freq.counts)
        if seg.kind == "dense":
            grid = w_counts * scale
        else:
            co, ci = seg.weight_shape[:2]
            grid = (w_counts.transpose(0, 2, 1, 3).reshape(co * 3, ci * 3)) * scale
        maps[seg.index] = LayerHeatmap(seg.index, seg.kind,
                                       np.ascontiguousarray(grid),
                                       b_counts * scale)
    return maps


@dataclass(frozen=True)
class GradientProfile:
    """Sorted |g_i| in descending order; index in the array is the rank."""

    magnitudes: np.ndarray
    epoch: int = -1
    source: str = "minibatch"   # minibatch | full_batch


def gradient_profile(grad, epoch=-1, source="minibatch"):
    grad = np.asarray(grad)
    if grad.ndim != 1:
        raise ShapeError(f"gradient_profile expects a flat vector, got {grad.shape}")
    mags = np.sort(np.abs(grad), kind="stable")[::-1]
    return GradientProfile(np.ascontiguousarray(mags), epoch=epoch, source=source)
