"""Dataset ingestion.

A dataset is a directory of images plus a CSV with a header row naming at
least ``filename`` and ``label`` columns; an ``image_id`` column is optional
and defaults to the filename stem.
"""

from __future__ import annotations

import csv
import importlib.util
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, InputError
from ..tensorio import load_image
from .config import DatasetConfig


@dataclass
class LabeledImage:
    image_id: str
    path: str
    label: int
    image: np.ndarray


def read_labels(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"labels file {path} not found")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"filename", "label"} <= set(rows[0]):
        raise InputError(f"{path}: needs 'filename' and 'label' columns")
    return rows


def load_dataset(cfg: DatasetConfig, expected_shape=None) -> list[LabeledImage]:
    """Load the images listed in the labels file, ordered by image id.

    When ``sample_count`` is below the dataset size a subset is drawn with
    ``sample_seed`` and returned in id order.
    """
    root = Path(cfg.directory)
    if not root.is_dir():
        raise ConfigurationError(f"dataset directory {root} not found")
    rows = read_labels(root / cfg.labels)
    entries = sorted(
        ((r.get("image_id") or Path(r["filename"]).stem, r["filename"], int(r["label"])) for r in rows),
        key=lambda e: e[0],
    )
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate image ids in labels file")
    if cfg.sample_count is not None and cfg.sample_count < len(entries):
        keep = np.random.default_rng(cfg.sample_seed).choice(len(entries), cfg.sample_count, replace=False)
        entries = [entries[i] for i in sorted(keep)]

    out = []
    for image_id, filename, label in entries:
        path = root / filename
        if not path.exists():
            raise InputError(f"listed image {path} is missing")
        img = load_image(path, cfg.resize)
        if expected_shape is not None and tuple(img.shape) != tuple(expected_shape):
            raise InputError(f"{path}: shape {img.shape} but the classifier expects {tuple(expected_shape)}; "
                             "set [dataset] resize")
        out.append(LabeledImage(image_id, str(path), label, img))
    if not out:
        raise InputError(f"dataset {root} is empty")
    return out


def write_dataset(directory, images, labels, ids=None) -> Path:
    """Write (C, H, W) [0, 1] arrays as PNG files plus ``labels.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = ids or [f"{i:05d}" for i in range(len(images))]
    with (d / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "filename", "label"])
        for iid, img, lab in zip(ids, images, labels):
            arr = np.clip(np.rint(np.asarray(img).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(d / f"{iid}.png")
            w.writerow([iid, f"{iid}.png", int(lab)])
    return d / "labels.csv"


def bundled_cifar10_samples() -> list[tuple[str, int]]:
    """Paths and labels of the CIFAR-10 test images shipped with foolbox.

    The package is located without importing it.
    """
    spec = importlib.util.find_spec("foolbox")
    if spec is None or not spec.submodule_search_locations:
        raise ConfigurationError("the foolbox package (sample images) is not installed")
    data = Path(list(spec.submodule_search_locations)[0]) / "data"
    files = sorted(data.glob("cifar10_*.png"))
    if not files:
        raise ConfigurationError(f"no CIFAR-10 samples under {data}")
    return [(str(f), int(f.stem.split("_")[-1])) for f in files]


def export_cifar10_samples(directory, mirrored: bool = True) -> Path:
    """Materialize the bundled CIFAR-10 samples as a dataset directory.

    With ``mirrored`` each image is also written flipped left-right, which
    doubles the pool while keeping labels valid.
    """
    images, labels, ids = [], [], []
    for path, label in bundled_cifar10_samples():
        img = load_image(path)
        stem = Path(path).stem
        images.append(img), labels.append(label), ids.append(stem)
        if mirrored:
            images.append(np.ascontiguousarray(img[:, :, ::-1]))
            labels.append(label)
            ids.append(stem + "_m")
    return write_dataset(directory, images, labels, ids)
