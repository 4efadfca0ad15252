import numpy as np
import pytest

from lwsgd import datagen


def _blocky_digits(n, rng):
    """28x28 images whose class is the position of a bright block; learnable
    in a couple of epochs, which keeps runner tests fast."""
    images = rng.integers(0, 40, (n, 28, 28), dtype=np.int32)
    labels = rng.integers(0, 10, n).astype(np.uint8)
    for i, cls in enumerate(labels):
        r, c = divmod(int(cls), 5)
        images[i, 3 + 11 * r:10 + 11 * r, 2 + 5 * c:9 + 5 * c] += 180
    return np.clip(images, 0, 255).astype(np.uint8), labels


@pytest.fixture(scope="session")
def tiny_idx(tmp_path_factory):
    """A small 10-class IDX dataset: returns a dict of the four paths."""
    root = tmp_path_factory.mktemp("tinyds")
    rng = np.random.default_rng(1234)
    tr_img, tr_lbl = _blocky_digits(400, rng)
    te_img, te_lbl = _blocky_digits(120, rng)
    paths = {
        "train_images": str(root / "train-images"),
        "train_labels": str(root / "train-labels"),
        "test_images": str(root / "test-images"),
        "test_labels": str(root / "test-labels"),
    }
    datagen.write_idx(tr_img, tr_lbl, paths["train_images"], paths["train_labels"])
    datagen.write_idx(te_img, te_lbl, paths["test_images"], paths["test_labels"])
    return paths


@pytest.fixture
def tiny_config_text(tiny_idx):
    """Config template for a fast relu-net run on the tiny dataset."""
    return (
        "arch.family = relu\n"
        "arch.d = 1\n"
        "arch.w = 16\n"
        "data.kind = mnist\n"
        f"data.train_images = {tiny_idx['train_images']}\n"
        f"data.train_labels = {tiny_idx['train_labels']}\n"
        f"data.test_images = {tiny_idx['test_images']}\n"
        f"data.test_labels = {tiny_idx['test_labels']}\n"
        "train.epochs = 2\n"
        "train.batch_size = 64\n"
        "optim.kind = adam\n"
        "optim.lr = 0.005\n"
        "seeds = 1,2\n"
    )
