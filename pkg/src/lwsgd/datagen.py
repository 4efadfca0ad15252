"""Offline dataset tooling: IDX/CIFAR writers and a demo digit dataset.

The experiment CLI only consumes files; it never downloads anything.  For
air-gapped machines this module can synthesize a 10-class handwritten-digit
dataset in the standard IDX layout: the 8x8 scikit-learn digits (1797 real
handwriting samples) are upscaled to 28x28 and expanded with seeded random
shifts, rotations and scale jitter.  Train and test draw from disjoint
source images, so the split is leak-free.  It is a stand-in with the same
file format, shapes and class structure as MNIST, not MNIST itself.
"""

import json
import os
import struct

import numpy as np

from lwsgd.errors import FormatError

# bump when the augmentation recipe changes so cached datasets regenerate
_RECIPE_VERSION = 2


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or images.shape[0] != labels.shape[0]:
        raise FormatError(f"write_idx: images {images.shape} vs labels {labels.shape}")
    n, h, w = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, h, w))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.tobytes())


def write_cifar_batch(images, labels, path):
    """Write uint8 images (N, 3, 32, 32) and labels as one CIFAR-10 batch."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n = images.shape[0]
    rec = np.empty((n, 3073), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images.reshape(n, -1)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def _augment_digit(img8, rng, ndi):
    # img8 is float in [0, 1]; upscale 8 -> 28 with jittered zoom/rotation/
    # shift.  Jitter ranges are calibrated so reference classifiers land
    # close to their MNIST accuracies (see README).
    zoom = 28.0 / 8.0 * rng.uniform(0.88, 1.06)
    big = ndi.zoom(img8, zoom, order=1)
    angle = rng.uniform(-9.0, 9.0)
    big = ndi.rotate(big, angle, order=1, reshape=False, mode="constant")
    canvas = np.zeros((28, 28), dtype=np.float64)
    h, w = big.shape
    dy = (28 - h) // 2 + rng.integers(-2, 3)
    dx = (28 - w) // 2 + rng.integers(-2, 3)
    ys = slice(max(dy, 0), min(dy + h, 28))
    xs = slice(max(dx, 0), min(dx + w, 28))
    canvas[ys, xs] = big[ys.start - dy:ys.stop - dy, xs.start - dx:xs.stop - dx]
    canvas += rng.normal(0.0, 0.01, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def make_digits28(n_train=12000, n_test=2000, seed=0):
    """Balanced 28x28 digit dataset from augmented scikit-learn digits.

    Returns (train_images, train_labels, test_images, test_labels) with
    uint8 images.  Source digits are split 80/20 before augmentation.
    """
    import scipy.ndimage as ndi
    from sklearn.datasets import load_digits

    if n_train % 10 or n_test % 10:
        raise ValueError("n_train and n_test must be divisible by 10")
    base = load_digits()
    images = base.images / 16.0
    labels = base.target
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    train_pool = {c: [] for c in range(10)}
    test_pool = {c: [] for c in range(10)}
    for cls in range(10):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        cut = int(idx.size * 0.8)
        train_pool[cls] = images[idx[:cut]]
        test_pool[cls] = images[idx[cut:]]

    def synth(pools, per_class):
        out_img = np.empty((per_class * 10, 28, 28), dtype=np.uint8)
        out_lbl = np.empty(per_class * 10, dtype=np.uint8)
        row = 0
        for cls in range(10):
            pool = pools[cls]
            for _ in range(per_class):
                src = pool[rng.integers(0, len(pool))]
                img = _augment_digit(src, rng, ndi)
                out_img[row] = np.round(img * 255).astype(np.uint8)
                out_lbl[row] = cls
                row += 1
        perm = rng.permutation(row)
        return out_img[perm], out_lbl[perm]

    train_images, train_labels = synth(train_pool, n_train // 10)
    test_images, test_labels = synth(test_pool, n_test // 10)
    return train_images, train_labels, test_images, test_labels


def ensure_digits28(out_dir, n_train=12000, n_test=2000, seed=0):
    """Generate the demo dataset into out_dir once; reuse it afterwards.

    Returns a dict of the four IDX paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    meta_path = os.path.join(out_dir, "digits28.json")
    paths = {
        "train_images": os.path.join(out_dir, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(out_dir, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(out_dir, "t10k-images-idx3-ubyte"),
        "test_labels": os.path.join(out_dir, "t10k-labels-idx1-ubyte"),
    }
    meta = {"n_train": n_train, "n_test": n_test, "seed": seed,
            "recipe": _RECIPE_VERSION}
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            if json.load(fh) == meta and all(os.path.exists(p) for p in paths.values()):
                return paths
    tr_i, tr_l, te_i, te_l = make_digits28(n_train, n_test, seed)
    write_idx(tr_i, tr_l, paths["train_images"], paths["train_labels"])
    write_idx(te_i, te_l, paths["test_images"], paths["test_labels"])
    with open(meta_path, "w") as fh:
        json.dump(meta, fh)
    return paths


def main(argv=None):
    import argparse

    ap = argparse.ArgumentParser(description="generate the offline demo digit dataset")
    ap.add_argument("out_dir")
    ap.add_argument("--train-n", type=int, default=12000)
    ap.add_argument("--test-n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    paths = ensure_digits28(args.out_dir, args.train_n, args.test_n, args.seed)
    for key, path in paths.items():
        print(f"{key}: {path}")


if __name__ == "__main__":
    main()
