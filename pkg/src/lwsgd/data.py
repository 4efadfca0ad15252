"""Dataset ingestion and parameter checkpoints.

IDX image/label pairs (the MNIST distribution format, big-endian headers,
optionally gzipped) and CIFAR-10 binary batches (3073-byte records) load
into float32 arrays scaled to [0, 1] with no further normalization.
Checkpoints use a little-endian "LWS1" container: a segment table describing
the architecture, the flat float32 parameter vector, and (seed, epoch)
metadata; round trips are bit-exact.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from lwsgd.errors import FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CHECKPOINT_MAGIC = b"LWS1"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray   # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray   # (N,) int64
    name: str = ""
    classes: int = 10

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"image count {self.images.shape[0]} != label count {self.labels.shape[0]}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise FormatError(f"labels outside [0, {self.classes})")

    @property
    def n(self):
        return self.images.shape[0]


def _read_file(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _be_u32(buf, offset, path):
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at byte {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path, name=""):
    """Load an IDX image/label pair; pixels are scaled by 1/255."""
    buf = _read_file(images_path)
    magic = _be_u32(buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic {magic:#010x} at byte 0")
    n = _be_u32(buf, 4, images_path)
    h = _be_u32(buf, 8, images_path)
    w = _be_u32(buf, 12, images_path)
    need = 16 + n * h * w
    if len(buf) != need:
        raise FormatError(
            f"{images_path}: expected {need} bytes for {n}x{h}x{w} images, "
            f"got {len(buf)} (payload starts at byte 16)"
        )
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(n, 1, h, w)

    lbuf = _read_file(labels_path)
    lmagic = _be_u32(lbuf, 0, labels_path)
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic {lmagic:#010x} at byte 0")
    ln = _be_u32(lbuf, 4, labels_path)
    if len(lbuf) != 8 + ln:
        raise FormatError(
            f"{labels_path}: expected {8 + ln} bytes for {ln} labels, got {len(lbuf)}"
        )
    if ln != n:
        raise FormatError(f"{images_path} holds {n} images but {labels_path} holds {ln} labels")
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(images=images, labels=labels, name=name)


def load_cifar10(batch_paths, name="cifar10"):
    """Load CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes per record."""
    chunks = []
    labels = []
    for path in batch_paths:
        buf = _read_file(path)
        if len(buf) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD} "
                f"(trailing fragment at byte {len(buf) - len(buf) % CIFAR_RECORD})"
            )
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        chunks.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(chunks).astype(np.float32) / 255.0
    return Dataset(images=images, labels=np.concatenate(labels), name=name)


def balanced_subset(dataset, n, rng):
    """Sample n items with an exactly uniform class histogram, then shuffle."""
    c = dataset.classes
    if n % c:
        raise ValueError(f"subset size {n} is not divisible by {c} classes")
    per_class = n // c
    picks = []
    for cls in range(c):
        pool = np.flatnonzero(dataset.labels == cls)
        if pool.size < per_class:
            raise ValueError(
                f"class {cls} has {pool.size} samples, need {per_class}"
            )
        picks.append(rng.choice(pool, size=per_class, replace=False))
    order = np.concatenate(picks)
    order = order[rng.permutation(order.size)]
    return Dataset(images=dataset.images[order], labels=dataset.labels[order],
                   name=dataset.name, classes=c)


def minibatches(dataset, batch_size, shuffle_seed, epoch):
    """Yield (images, labels) batches in a fresh per-epoch shuffled order.

    The order is keyed by (shuffle_seed, epoch) only, so a run can be
    replayed batch for batch.  The final short batch is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(shuffle_seed), int(epoch)])))
    perm = rng.permutation(dataset.n)
    for lo in range(0, dataset.n, batch_size):
        idx = perm[lo:lo + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def save_checkpoint(params, path, seed=-1, epoch=-1):
    """Write theta and the segment table; float32 payload, little-endian."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params.segments)))
        for seg in params.segments:
            fh.write(struct.pack("<II", seg.index, len(seg.weight_shape)))
            fh.write(struct.pack(f"<{len(seg.weight_shape)}I", *seg.weight_shape))
            fh.write(struct.pack("<I", seg.bias_shape[0]))
        theta32 = params.theta.astype(np.float32, copy=False)
        fh.write(struct.pack("<Q", theta32.size))
        fh.write(theta32.astype("<f4", copy=False).tobytes())
        fh.write(struct.pack("<qq", int(seed), int(epoch)))


def load_checkpoint(path):
    """Read a checkpoint; returns (theta, segment table, seed, epoch)."""
    buf = _read_file(path)
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {buf[:4]!r} at byte 0")
    off = 4
    (n_seg,) = struct.unpack_from("<I", buf, off)
    off += 4
    table = []
    try:
        for _ in range(n_seg):
            index, ndim = struct.unpack_from("<II", buf, off)
            off += 8
            w_shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            (b_len,) = struct.unpack_from("<I", buf, off)
            off += 4
            table.append((index, tuple(w_shape), (b_len,)))
        (p,) = struct.unpack_from("<Q", buf, off)
        off += 8
        if off + 4 * p + 16 != len(buf):
            raise FormatError(
                f"{path}: expected {off + 4 * p + 16} bytes, got {len(buf)} "
                f"(payload at byte {off})"
            )
        theta = np.frombuffer(buf, dtype="<f4", count=p, offset=off).copy()
        off += 4 * p
        seed, epoch = struct.unpack_from("<qq", buf, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint at byte {off}") from exc
    return theta, table, int(seed), int(epoch)


def load_checkpoint_into(params, path, as_initial=True):
    """Load a checkpoint into an existing store, validating the segment table.

    With as_initial=True the loaded vector also becomes theta0, so movement
    analysis measures distance from the imported weights.
    """
    theta, table, seed, epoch = load_checkpoint(path)
    expect = [(s.index, s.weight_shape, s.bias_shape) for s in params.segments]
    if table != expect:
        raise FormatError(
            f"{path}: segment table {table[:3]}... does not match the "
            f"receiving network ({expect[:3]}...)"
        )
    if theta.shape != params.theta.shape:
        raise FormatError(
            f"{path}: p={theta.shape[0]} does not match network p={params.p}"
        )
    params.theta[...] = theta.astype(params.dtype)
    if as_initial:
        theta0 = params.theta.copy()
        theta0.flags.writeable = False
        params.theta0 = theta0
    params.mark_updated()
    return seed, epoch
