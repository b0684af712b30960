"""Shared fixtures: finite-difference helpers, synthetic IDX data, tiny models."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import pytest

from qocnn import data, model as model_mod

FD_EPS = 1e-5
FD_TOL = 1e-4


def fd_grad(loss_fn, arr: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central differences over every real component of a parameter array.

    Complex arrays are perturbed through their float64 view, so the result
    is interleaved re/im, matching packed_view of the analytic gradient.
    """
    if np.iscomplexobj(arr):
        view = arr.view(np.float64).ravel()
    else:
        view = arr.ravel()
    out = np.empty(view.size)
    for j in range(view.size):
        orig = view[j]
        view[j] = orig + eps
        plus = loss_fn()
        view[j] = orig - eps
        minus = loss_fn()
        view[j] = orig
        out[j] = (plus - minus) / (2.0 * eps)
    return out


def packed_view(grad: np.ndarray) -> np.ndarray:
    """Flatten a packed complex gradient to interleaved re/im float64."""
    if np.iscomplexobj(grad):
        return np.ascontiguousarray(grad).view(np.float64).ravel()
    return np.asarray(grad, dtype=np.float64).ravel()


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), FD_EPS)
    return float((np.abs(a - b) / denom).max())


def random_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# ---------------------------------------------------------------------------
# synthetic IDX data: label-dependent bright block on noise, both fold halves


def synthetic_images(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(10), rng.integers(0, 10, max(n - 10, 0))])
    labels = labels[:n][rng.permutation(n)].astype(np.uint8)
    imgs = rng.integers(0, 40, size=(n, 28, 28)).astype(np.uint8)
    for i, y in enumerate(labels):
        r, c = divmod(int(y), 5)
        imgs[i, 3 + 12 * r : 11 + 12 * r, 1 + 5 * c : 6 + 5 * c] = 220
    return imgs, labels


def write_idx_pair(dirpath: Path, images: np.ndarray, labels: np.ndarray, stem: str):
    n, rows, cols = images.shape
    img_path = dirpath / f"{stem}-images-idx3-ubyte"
    lbl_path = dirpath / f"{stem}-labels-idx1-ubyte"
    img_path.write_bytes(
        struct.pack(">IIII", 0x803, n, rows, cols) + images.tobytes()
    )
    lbl_path.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return img_path, lbl_path


@pytest.fixture(scope="session")
def synth_idx_files(tmp_path_factory) -> dict[str, Path]:
    """Small synthetic train/test IDX files covering all ten classes."""
    d = tmp_path_factory.mktemp("idx")
    train_imgs, train_labels = synthetic_images(512, seed=11)
    test_imgs, test_labels = synthetic_images(256, seed=12)
    ti, tl = write_idx_pair(d, train_imgs, train_labels, "train")
    si, sl = write_idx_pair(d, test_imgs, test_labels, "t10k")
    return {
        "train_images": ti,
        "train_labels": tl,
        "test_images": si,
        "test_labels": sl,
    }


@pytest.fixture(scope="session")
def synth_datasets(synth_idx_files) -> tuple[data.Dataset, data.Dataset]:
    train = data.Dataset.load(
        synth_idx_files["train_images"], synth_idx_files["train_labels"], "train"
    )
    test = data.Dataset.load(
        synth_idx_files["test_images"], synth_idx_files["test_labels"], "test"
    )
    return train, test


# ---------------------------------------------------------------------------
# real MNIST discovery (acceptance criteria 4 and 5)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist() -> dict[str, Path] | None:
    root = os.environ.get("QOCNN_MNIST_DIR") or str(
        Path(__file__).resolve().parent.parent / "data"
    )
    paths = {key: Path(root) / name for key, name in MNIST_FILES.items()}
    if all(p.exists() for p in paths.values()):
        return paths
    return None


MNIST_SKIP_REASON = (
    "MNIST IDX files not found (set QOCNN_MNIST_DIR or place the four "
    "train/t10k ubyte files under ./data); this environment has no network "
    "access to fetch them"
)


@pytest.fixture(scope="session")
def mnist_paths() -> dict[str, Path]:
    paths = find_mnist()
    if paths is None:
        pytest.skip(MNIST_SKIP_REASON)
    return paths


# ---------------------------------------------------------------------------
# tiny models


def tiny_model(arch: str, seed: int = 0) -> model_mod.ModelGraph:
    if arch == "qocnn":
        return model_mod.new_model(
            arch, seed=seed, in_dim=8, hidden=4, classes=3,
            conv_k=2, conv_s=2, pool_w=2, pool_p=2,
        )
    return model_mod.new_model(arch, seed=seed, in_dim=8, hidden=6, classes=4)


def tiny_batch(model: model_mod.ModelGraph, seed: int = 1, n: int = 4) -> data.Batch:
    rng = np.random.default_rng(seed)
    x = random_complex(rng, (n, model.in_dim))
    labels = rng.integers(0, model.out_dim, size=n)
    return data.Batch(x=x, labels=labels)
