"""Layer-selection policies: which parametric layers train in a given epoch.

Layers are numbered 1..L from the input ("bottom") to the output ("top").
A selection implies a back-prop truncation depth: the backward pass must
descend exactly to the deepest selected layer and no further.  Probabilistic
policies draw once per epoch; all mini-batches within the epoch share the
selection.
"""

import math
from dataclasses import dataclass

from lwsgd.errors import ConfigError

STATIC_KINDS = frozenset({
    "full", "top_k", "bottom_q", "top_k_bottom_q_static", "middle_only",
})
PROBABILISTIC_KINDS = frozenset({
    "top_k_bottom_q_prob", "top_k_all_bottoms", "random_uniform", "random_beta",
})
KINDS = STATIC_KINDS | PROBABILISTIC_KINDS


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str
    num_layers: int             # L, the network's parametric layer count
    k: int = 1
    q: int = 1
    rho: float = 0.0
    alpha: float = 2.0          # beta-distribution shape parameters
    beta: float = 5.0
    max_k: int = None           # upper bound for random_uniform / random_beta

    def __post_init__(self):
        L = self.num_layers
        if self.kind not in KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if L < 1:
            raise ConfigError(f"policy needs a network with >= 1 layers, got {L}")
        if self.kind in ("top_k", "top_k_bottom_q_static", "top_k_bottom_q_prob",
                         "top_k_all_bottoms"):
            if not 1 <= self.k <= L:
                raise ConfigError(f"k={self.k} outside [1, {L}]")
        if self.kind in ("bottom_q", "top_k_bottom_q_static", "top_k_bottom_q_prob"):
            if not 1 <= self.q <= L:
                raise ConfigError(f"q={self.q} outside [1, {L}]")
        if self.kind == "top_k_bottom_q_static" and self.k + self.q > L:
            raise ConfigError(f"k + q = {self.k + self.q} exceeds L = {L}")
        if self.kind == "middle_only" and L < 3:
            raise ConfigError(f"middle_only needs L >= 3, got {L}")
        if self.kind in ("top_k_bottom_q_prob", "top_k_all_bottoms"):
            if not 0.0 < self.rho <= 1.0:
                raise ConfigError(f"rho={self.rho} outside (0, 1]")
        if self.max_k is not None and not 1 <= self.max_k <= L:
            raise ConfigError(f"max_k={self.max_k} outside [1, {L}]")

    @property
    def is_static(self):
        return self.kind in STATIC_KINDS

    @property
    def k_bound(self):
        return self.max_k if self.max_k is not None else self.num_layers


@dataclass(frozen=True)
class LayerSelection:
    selected: frozenset

    def __post_init__(self):
        if not self.selected:
            raise ValueError("a layer selection cannot be empty")

    @property
    def stop_layer(self):
        return min(self.selected)

    def as_sorted(self):
        return tuple(sorted(self.selected))


def _top(L, k):
    return frozenset(range(L - k + 1, L + 1))


def _bottom(q):
    return frozenset(range(1, q + 1))


def select_static(policy):
    L = policy.num_layers
    if policy.kind == "full":
        sel = frozenset(range(1, L + 1))
    elif policy.kind == "top_k":
        sel = _top(L, policy.k)
    elif policy.kind == "bottom_q":
        sel = _bottom(policy.q)
    elif policy.kind == "top_k_bottom_q_static":
        sel = _top(L, policy.k) | _bottom(policy.q)
    elif policy.kind == "middle_only":
        sel = frozenset(range(2, L))
    else:
        raise ConfigError(f"{policy.kind!r} is not a static policy")
    return LayerSelection(sel)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def select_probabilistic(policy, rng, epoch=None):
    """One selection draw; consumes exactly one variate from ``rng``."""
    L = policy.num_layers
    if policy.kind == "top_k_bottom_q_prob":
        sel = _top(L, policy.k)
        if rng.random() < policy.rho:
            sel = sel | _bottom(policy.q)
    elif policy.kind == "top_k_all_bottoms":
        sel = _top(L, policy.k)
        if rng.random() < policy.rho:
            sel = frozenset(range(1, L + 1))
    elif policy.kind == "random_uniform":
        k = int(rng.integers(1, policy.k_bound + 1))
        sel = _top(L, k)
    elif policy.kind == "random_beta":
        x = float(rng.beta(policy.alpha, policy.beta))
        k = _round_half_up(1 + (policy.k_bound - 1) * x)
        k = min(max(k, 1), policy.k_bound)
        sel = _top(L, k)
    else:
        raise ConfigError(f"{policy.kind!r} is not a probabilistic policy")
    return LayerSelection(sel)


def draw_selection(policy, rng, epoch=None):
    if policy.is_static:
        return select_static(policy)
    return select_probabilistic(policy, rng, epoch)


def truncation_of(selection):
    """Back-prop cut depth for a selection: its deepest (minimum) layer."""
    return selection.stop_layer
