"""Experiment configuration: line-based ``key = value`` files.

``#`` starts a comment (whole-line or trailing); nested keys are dotted
(``policy.kind = top_k``).  A few bare aliases are accepted for the most
common policy fields (``policy``, ``k``, ``q``, ``rho``).  Unknown keys are
rejected so typos fail loudly at validation time instead of silently using
a default.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from lwsgd import model
from lwsgd.errors import ConfigError
from lwsgd.optim import LrSchedule
from lwsgd.policy import SelectionPolicy

_ALIASES = {
    "policy": "policy.kind",
    "k": "policy.k",
    "q": "policy.q",
    "rho": "policy.rho",
}

_KNOWN_KEYS = {
    "arch.family", "arch.d", "arch.w", "arch.in_dim", "arch.out_dim",
    "data.kind", "data.train_images", "data.train_labels",
    "data.test_images", "data.test_labels", "data.train_batches",
    "data.test_batches", "data.subset",
    "train.epochs", "train.batch_size", "train.dtype",
    "optim.kind", "optim.lr", "optim.beta1", "optim.beta2", "optim.eps",
    "optim.momentum", "optim.weight_decay",
    "schedule.kind", "schedule.period",
    "policy.kind", "policy.k", "policy.q", "policy.rho", "policy.alpha",
    "policy.beta", "policy.max_k",
    "seeds",
    "init.kind", "init.checkpoint",
    "analysis.reinit_grid", "analysis.alpha_list", "analysis.profile_epochs",
    "eval.batch_size",
}


def parse_config_text(text):
    """Parse config lines into a flat {key: value} dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        key = _ALIASES.get(key, key)
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _get(raw, key, default=None, required=False):
    if key in raw:
        return raw[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def _as_int(raw, key, default=None, required=False):
    val = _get(raw, key, default, required)
    if val is None:
        return None
    try:
        return int(str(val))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {val!r}") from exc


def _as_float(raw, key, default=None, required=False):
    val = _get(raw, key, default, required)
    if val is None:
        return None
    try:
        return float(str(val))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {val!r}") from exc


def _as_list(value, conv):
    if value is None or str(value).strip() == "":
        return []
    return [conv(tok.strip()) for tok in str(value).split(",") if tok.strip()]


@dataclass
class ExperimentConfig:
    """Validated experiment description; immutable once built."""

    raw: dict

    family: str = "relu"
    d: int = 1
    w: int = 100
    in_dim: int = 784
    out_dim: int = 10

    data_kind: str = "mnist"
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    train_batches: list = field(default_factory=list)
    test_batches: list = field(default_factory=list)
    subset: int = 0            # 0 = use the full training set

    epochs: int = 100
    batch_size: int = 128
    dtype: str = "float32"

    optim_kind: str = "adam"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 0.0005

    schedule_kind: str = "constant"
    schedule_period: int = 30

    policy_kind: str = "full"
    policy_k: int = 1
    policy_q: int = 1
    policy_rho: float = 0.1
    policy_alpha: float = 2.0
    policy_beta: float = 5.0
    policy_max_k: int = None

    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])

    init_kind: str = "xavier"
    init_checkpoint: str = None

    reinit_grid: list = field(default_factory=list)
    alpha_list: list = field(default_factory=list)
    profile_epochs: list = field(default_factory=list)

    eval_batch_size: int = 512

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def build_network(self):
        if self.family == "relu":
            return model.build_relu_net(self.d, self.w, self.in_dim, self.out_dim)
        if self.family == "conv":
            return model.build_conv_net(self.d, self.w, out_dim=self.out_dim)
        if self.family in ("vgg5", "vgg11"):
            return model.build_vgg(self.family)
        raise ConfigError(f"unknown arch.family {self.family!r}")

    def build_policy(self, network):
        return SelectionPolicy(
            kind=self.policy_kind, num_layers=network.num_layers,
            k=self.policy_k, q=self.policy_q, rho=self.policy_rho,
            alpha=self.policy_alpha, beta=self.policy_beta,
            max_k=self.policy_max_k,
        )

    def build_schedule(self):
        return LrSchedule(kind=self.schedule_kind, base_lr=self.lr,
                          period=self.schedule_period)


def _check_paths(cfg):
    paths = []
    if cfg.data_kind in ("mnist", "fashion_mnist"):
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            value = getattr(cfg, key)
            if value is None:
                raise ConfigError(f"data.{key} is required for data.kind={cfg.data_kind}")
            paths.append(value)
    elif cfg.data_kind == "cifar10":
        if not cfg.train_batches or not cfg.test_batches:
            raise ConfigError("cifar10 needs data.train_batches and data.test_batches")
        paths.extend(cfg.train_batches)
        paths.extend(cfg.test_batches)
    else:
        raise ConfigError(f"unknown data.kind {cfg.data_kind!r}")
    if cfg.init_kind == "checkpoint":
        if not cfg.init_checkpoint:
            raise ConfigError("init.kind=checkpoint needs init.checkpoint")
        paths.append(cfg.init_checkpoint)
    elif cfg.init_kind != "xavier":
        raise ConfigError(f"unknown init.kind {cfg.init_kind!r}")
    for path in paths:
        if not os.path.exists(path):
            raise ConfigError(f"referenced path does not exist: {path}")


def build_config(raw):
    """Validate a raw key dict and return an ExperimentConfig."""
    cfg = ExperimentConfig(
        raw=dict(raw),
        family=_get(raw, "arch.family", "relu"),
        d=_as_int(raw, "arch.d", 1),
        w=_as_int(raw, "arch.w", 100),
        in_dim=_as_int(raw, "arch.in_dim", 784),
        out_dim=_as_int(raw, "arch.out_dim", 10),
        data_kind=_get(raw, "data.kind", "mnist"),
        train_images=_get(raw, "data.train_images"),
        train_labels=_get(raw, "data.train_labels"),
        test_images=_get(raw, "data.test_images"),
        test_labels=_get(raw, "data.test_labels"),
        train_batches=_as_list(_get(raw, "data.train_batches"), str),
        test_batches=_as_list(_get(raw, "data.test_batches"), str),
        subset=_as_int(raw, "data.subset", 0),
        epochs=_as_int(raw, "train.epochs", 100),
        batch_size=_as_int(raw, "train.batch_size", 128),
        dtype=_get(raw, "train.dtype", "float32"),
        optim_kind=_get(raw, "optim.kind", "adam"),
        lr=_as_float(raw, "optim.lr", 0.001),
        beta1=_as_float(raw, "optim.beta1", 0.9),
        beta2=_as_float(raw, "optim.beta2", 0.999),
        eps=_as_float(raw, "optim.eps", 1e-8),
        momentum=_as_float(raw, "optim.momentum", 0.9),
        weight_decay=_as_float(raw, "optim.weight_decay", 0.0005),
        schedule_kind=_get(raw, "schedule.kind", "constant"),
        schedule_period=_as_int(raw, "schedule.period", 30),
        policy_kind=_get(raw, "policy.kind", "full"),
        policy_k=_as_int(raw, "policy.k", 1),
        policy_q=_as_int(raw, "policy.q", 1),
        policy_rho=_as_float(raw, "policy.rho", 0.1),
        policy_alpha=_as_float(raw, "policy.alpha", 2.0),
        policy_beta=_as_float(raw, "policy.beta", 5.0),
        policy_max_k=_as_int(raw, "policy.max_k"),
        seeds=_as_list(_get(raw, "seeds", "1,2,3,4,5"), int),
        init_kind=_get(raw, "init.kind", "xavier"),
        init_checkpoint=_get(raw, "init.checkpoint"),
        reinit_grid=_as_list(_get(raw, "analysis.reinit_grid"), float),
        alpha_list=_as_list(_get(raw, "analysis.alpha_list"), float),
        profile_epochs=_as_list(_get(raw, "analysis.profile_epochs"), int),
        eval_batch_size=_as_int(raw, "eval.batch_size", 512),
    )
    if cfg.epochs < 0:
        raise ConfigError(f"train.epochs must be >= 0, got {cfg.epochs}")
    if not cfg.seeds:
        raise ConfigError("seeds must be non-empty")
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError(f"train.dtype must be float32 or float64, got {cfg.dtype!r}")
    if cfg.optim_kind not in ("adam", "nesterov_sgd"):
        raise ConfigError(f"unknown optim.kind {cfg.optim_kind!r}")
    _check_paths(cfg)
    network = cfg.build_network()        # validates arch arguments
    cfg.build_policy(network)            # validates k/q/rho against L
    cfg.build_schedule()
    return cfg


def apply_overrides(raw, overrides):
    """Apply ``key=value`` strings on top of a raw dict (CLI --override)."""
    out = dict(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"override references unknown key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path, overrides=None, seeds=None):
    try:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    if seeds:
        raw["seeds"] = ",".join(str(s) for s in seeds)
    return build_config(raw)
