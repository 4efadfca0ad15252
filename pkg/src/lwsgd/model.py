"""Layered models: construction, initialization, forward, truncated backward.

A network is an ordered list of layers; parametric layers (dense, 3x3 conv)
are numbered 1..L from the input side up, and every parameter lives in one
flat vector indexed by a per-layer segment table.  The backward pass can be
cut off at any parametric layer: gradients above the cut are identical to a
full backward's, and nothing below the cut is touched -- that short-circuit
is what makes sparse layer selection cheap.
"""

from dataclasses import dataclass

import numpy as np

from lwsgd import tensor
from lwsgd.errors import ConfigError, ShapeError, StateError


@dataclass(frozen=True)
class LayerSpec:
    """One layer: dense/conv3x3 are parametric, the rest are plumbing."""

    kind: str                  # dense | conv3x3 | relu | maxpool2 | flatten
    in_shape: tuple
    out_shape: tuple
    weight_shape: tuple = None  # (fan_out, fan_in) or (Co, Ci, 3, 3)
    bias_shape: tuple = None

    @property
    def parametric(self):
        return self.weight_shape is not None


@dataclass(frozen=True)
class Segment:
    """Flat-vector slice of one parametric layer: weights then bias."""

    index: int          # parametric layer index, 1-based from the input side
    kind: str
    offset: int
    weight_shape: tuple
    bias_shape: tuple

    @property
    def weight_size(self):
        return int(np.prod(self.weight_shape))

    @property
    def bias_size(self):
        return int(self.bias_shape[0])

    @property
    def length(self):
        return self.weight_size + self.bias_size

    @property
    def end(self):
        return self.offset + self.length

    def weight_view(self, theta):
        return theta[self.offset:self.offset + self.weight_size].reshape(self.weight_shape)

    def bias_view(self, theta):
        return theta[self.offset + self.weight_size:self.end]


class Network:
    """Immutable architecture description plus its parameter segment table."""

    def __init__(self, family, layers, d=None, w=None):
        self.family = family
        self.layers = tuple(layers)
        self.d = d
        self.w = w
        self.in_shape = layers[0].in_shape
        self.out_dim = layers[-1].out_shape[0]
        segments = []
        offset = 0
        for spec in layers:
            if spec.parametric:
                seg = Segment(len(segments) + 1, spec.kind, offset,
                              spec.weight_shape, spec.bias_shape)
                segments.append(seg)
                offset += seg.length
        self.segments = tuple(segments)
        self.p = offset

    @property
    def num_layers(self):
        """Count of parametric layers (selection granularity)."""
        return len(self.segments)

    def segment(self, index):
        if not 1 <= index <= len(self.segments):
            raise ShapeError(f"no parametric layer {index}; network has {self.num_layers}")
        return self.segments[index - 1]


def _dense(in_dim, out_dim):
    return LayerSpec("dense", (in_dim,), (out_dim,), (out_dim, in_dim), (out_dim,))


def _conv(ci, co, hw):
    return LayerSpec("conv3x3", (ci,) + hw, (co,) + hw, (co, ci, 3, 3), (co,))


def _relu(shape):
    return LayerSpec("relu", shape, shape)


def _pool(shape):
    c, h, w = shape
    return LayerSpec("maxpool2", shape, (c, h // 2, w // 2))


def _flatten(shape):
    return LayerSpec("flatten", shape, (int(np.prod(shape)),))


def build_relu_net(d, w, in_dim=784, out_dim=10):
    """Fully-connected ReLU network with d hidden layers of width w.

    d=1 means input -> hidden(w) -> output: two parametric layers.
    """
    if d < 1 or w < 1:
        raise ConfigError(f"relu net needs d >= 1 and w >= 1, got d={d}, w={w}")
    layers = [_dense(in_dim, w), _relu((w,))]
    for _ in range(d - 1):
        layers += [_dense(w, w), _relu((w,))]
    layers.append(_dense(w, out_dim))
    return Network("relu", layers, d=d, w=w)


def build_conv_net(d, w, in_channels=1, in_hw=(28, 28), out_dim=10):
    """d conv layers of w channels plus a dense readout.

    Spatial dims are halved after the first two conv layers only, so they
    stay even for the 2x2 pooling regardless of depth.
    """
    if d < 1 or w < 1:
        raise ConfigError(f"conv net needs d >= 1 and w >= 1, got d={d}, w={w}")
    hw = tuple(in_hw)
    layers = []
    ci = in_channels
    for i in range(d):
        layers.append(_conv(ci, w, hw))
        layers.append(_relu((w,) + hw))
        if i < 2:
            layers.append(_pool((w,) + hw))
            hw = (hw[0] // 2, hw[1] // 2)
        ci = w
    layers.append(_flatten((w,) + hw))
    layers.append(_dense(w * hw[0] * hw[1], out_dim))
    return Network("conv", layers, d=d, w=w)


def build_vgg(variant):
    """VGG-style nets without batch norm or dropout.

    vgg5 (28x28 grayscale, 10 classes): a three-stage 3x3 conv trunk
    (128, 52, 20 channels, pooling after the first two) and a two-layer
    classifier with a 3608-unit hidden layer; exactly 3,646,154 parameters
    over 5 weight layers.  vgg11 (32x32 RGB, 10 classes): the classic
    eight-conv stack with a 512-512 classifier head.
    """
    if variant == "vgg5":
        hw = (28, 28)
        layers = [
            _conv(1, 128, hw), _relu((128,) + hw), _pool((128,) + hw),
        ]
        hw = (14, 14)
        layers += [
            _conv(128, 52, hw), _relu((52,) + hw), _pool((52,) + hw),
        ]
        hw = (7, 7)
        layers += [
            _conv(52, 20, hw), _relu((20,) + hw),
            _flatten((20, 7, 7)),
            _dense(980, 3608), _relu((3608,)),
            _dense(3608, 10),
        ]
        return Network("vgg5", layers, d=4, w=128)
    if variant == "vgg11":
        chans = [64, 128, 256, 256, 512, 512, 512, 512]
        pool_after = {0, 1, 3, 5, 7}
        hw = (32, 32)
        ci = 3
        layers = []
        for i, co in enumerate(chans):
            layers.append(_conv(ci, co, hw))
            layers.append(_relu((co,) + hw))
            if i in pool_after:
                layers.append(_pool((co,) + hw))
                hw = (hw[0] // 2, hw[1] // 2)
            ci = co
        layers += [
            _flatten((512, 1, 1)),
            _dense(512, 512), _relu((512,)),
            _dense(512, 512), _relu((512,)),
            _dense(512, 10),
        ]
        return Network("vgg11", layers, d=10, w=512)
    raise ConfigError(f"unknown vgg variant {variant!r} (expected vgg5 or vgg11)")


class ParamStore:
    """Flat parameter vector plus the frozen initial snapshot.

    ``theta`` is mutated in place by the optimizer; ``theta0`` is the value
    at initialization and is write-protected.  ``version`` counts mutations
    so an activation tape can detect that it has gone stale.
    """

    def __init__(self, network, theta):
        if theta.shape != (network.p,):
            raise ShapeError(f"theta length {theta.shape} != network p ({network.p},)")
        self.network = network
        self.segments = network.segments
        self.theta = theta
        theta0 = theta.copy()
        theta0.flags.writeable = False
        self.theta0 = theta0
        self.version = 0

    @property
    def p(self):
        return self.network.p

    @property
    def dtype(self):
        return self.theta.dtype

    def weight(self, index):
        return self.network.segment(index).weight_view(self.theta)

    def bias(self, index):
        return self.network.segment(index).bias_view(self.theta)

    def mark_updated(self):
        self.version += 1

    def replace_with(self, theta):
        """Fresh store over the same network (used by re-init sweeps)."""
        return ParamStore(self.network, np.asarray(theta, dtype=self.dtype).copy())


def xavier_init(network, rng, dtype=tensor.DEFAULT_DTYPE):
    """Gaussian weights with variance 2/(fan_in + fan_out); zero biases.

    Conv fans count the 3x3 receptive field: fan_in = Ci*9, fan_out = Co*9.
    """
    theta = np.zeros(network.p, dtype=dtype)
    for seg in network.segments:
        if seg.kind == "dense":
            fan_out, fan_in = seg.weight_shape
        else:
            co, ci = seg.weight_shape[:2]
            fan_in, fan_out = ci * 9, co * 9
        std = np.sqrt(2.0 / (fan_in + fan_out))
        sample = rng.normal(0.0, std, seg.weight_size)
        seg.weight_view(theta)[...] = sample.astype(dtype).reshape(seg.weight_shape)
    return ParamStore(network, theta)


def snapshot(params):
    """Independent copy of the current theta."""
    return params.theta.copy()


def restore(params, theta):
    """Overwrite theta in place from a snapshot of matching length."""
    theta = np.asarray(theta)
    if theta.shape != params.theta.shape:
        raise ShapeError(f"restore: snapshot {theta.shape} != theta {params.theta.shape}")
    params.theta[...] = theta.astype(params.dtype, copy=False)
    params.mark_updated()


class ActivationTape:
    """Per-layer values saved by one forward pass for one backward pass."""

    def __init__(self):
        self.entries = None
        self.params_version = None
        self.consumed = False

    def ready_for(self, params):
        return (self.entries is not None and not self.consumed
                and self.params_version == params.version)


def forward(network, params, batch, tape=None):
    """Run the network; returns logits (B, out_dim).

    When ``tape`` is given, the per-layer inputs needed by backward() are
    recorded and the tape is bound to the current parameter version.
    """
    x = np.asarray(batch, dtype=params.dtype)
    want = tuple(network.in_shape)
    if len(want) == 1:
        # dense-first networks take anything that flattens to in_dim
        if x.ndim == 1 and x.shape == want:
            x = x[None]
        elif x.ndim >= 2 and int(np.prod(x.shape[1:])) == want[0]:
            x = x.reshape(x.shape[0], want[0])
        else:
            raise ShapeError(
                f"forward: batch shape {x.shape} does not flatten to input {want}"
            )
    else:
        if x.ndim == len(want):
            x = x[None]
        if x.shape[1:] != want:
            raise ShapeError(
                f"forward: batch shape {x.shape[1:]} != network input {want}"
            )
    entries = [] if tape is not None else None
    pidx = 0
    for spec in network.layers:
        if spec.kind == "dense":
            pidx += 1
            seg = network.segment(pidx)
            if entries is not None:
                entries.append(x)
            x = x @ seg.weight_view(params.theta).T + seg.bias_view(params.theta)
        elif spec.kind == "conv3x3":
            pidx += 1
            seg = network.segment(pidx)
            if entries is not None:
                entries.append(x)
            x = tensor.conv2d(x, seg.weight_view(params.theta),
                              seg.bias_view(params.theta))
        elif spec.kind == "relu":
            if entries is not None:
                entries.append(x)
            x = tensor.relu(x)
        elif spec.kind == "maxpool2":
            x, idx = tensor.maxpool2(x)
            if entries is not None:
                entries.append(idx)
        elif spec.kind == "flatten":
            if entries is not None:
                entries.append(None)
            x = x.reshape(x.shape[0], -1)
        else:  # pragma: no cover - builders only emit the kinds above
            raise ShapeError(f"unknown layer kind {spec.kind!r}")
    if tape is not None:
        tape.entries = entries
        tape.params_version = params.version
        tape.consumed = False
    return x


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    log_probs = z[rows, labels] - np.log(ez.sum(axis=1))
    loss = float(-log_probs.mean())
    grad = sm
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def backward(network, params, tape, grad_logits, stop_layer=1, layer_set=None):
    """Backward pass truncated at ``stop_layer``.

    Returns {layer_index: (grad_weight, grad_bias)} for every parametric
    layer >= stop_layer (restricted to ``layer_set`` when given).  The
    traversal ends once stop_layer's parameter gradients exist; no activation
    gradient is propagated below it.  Gradients above the cut are exactly
    the ones a full backward would produce.
    """
    if tape is None or not tape.ready_for(params):
        raise StateError("backward needs a fresh tape from a matching forward")
    L = network.num_layers
    if not 1 <= stop_layer <= L:
        raise ShapeError(f"stop_layer {stop_layer} outside [1, {L}]")
    tape.consumed = True
    wanted = set(range(stop_layer, L + 1)) if layer_set is None else {
        i for i in layer_set if i >= stop_layer
    }
    grads = {}
    g = np.asarray(grad_logits, dtype=params.dtype)
    pidx = L
    for pos in range(len(network.layers) - 1, -1, -1):
        spec = network.layers[pos]
        entry = tape.entries[pos]
        if spec.kind == "dense":
            this = pidx
            pidx -= 1
            if this in wanted:
                grads[this] = (g.T @ entry, g.sum(axis=0))
            if this == stop_layer:
                break
            seg = network.segment(this)
            g = g @ seg.weight_view(params.theta)
        elif spec.kind == "conv3x3":
            this = pidx
            pidx -= 1
            seg = network.segment(this)
            need_gx = this != stop_layer
            if this in wanted:
                gx, gk, gb = tensor.conv2d_backward(
                    entry, seg.weight_view(params.theta), g,
                    need_input_grad=need_gx,
                )
                grads[this] = (gk, gb)
            elif need_gx:
                gx, _, _ = tensor.conv2d_backward(
                    entry, seg.weight_view(params.theta), g,
                    need_input_grad=True,
                )
            if not need_gx:
                break
            g = gx
        elif spec.kind == "relu":
            g = tensor.relu_backward(entry, g)
        elif spec.kind == "maxpool2":
            g = tensor.maxpool2_backward(entry, g)
        elif spec.kind == "flatten":
            g = g.reshape((g.shape[0],) + tuple(spec.in_shape))
    return grads


def flat_gradient(network, grads, dtype=np.float64):
    """Scatter a per-layer gradient dict into a flat p-vector (zeros elsewhere)."""
    out = np.zeros(network.p, dtype=dtype)
    for index, (gw, gb) in grads.items():
        seg = network.segment(index)
        seg.weight_view(out)[...] = gw
        seg.bias_view(out)[...] = gb
    return out


def evaluate(network, params, images, labels, batch_size=512):
    """Mean loss and accuracy over a dataset, batched, fixed order."""
    n = images.shape[0]
    total_loss = 0.0
    correct = 0
    for lo in range(0, n, batch_size):
        hi = min(n, lo + batch_size)
        logits = forward(network, params, images[lo:hi])
        loss, _ = softmax_cross_entropy(logits, labels[lo:hi])
        total_loss += loss * (hi - lo)
        correct += int((logits.argmax(axis=1) == labels[lo:hi]).sum())
    return total_loss / n, correct / n
