"""Class-incremental task streams: synthetic Gaussian clusters and IDX digit files."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..netcore import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class StreamError(ValueError):
    pass


class IdxFormatError(StreamError):
    pass


@dataclass(frozen=True)
class Task:
    classes: tuple[int, ...]
    train: Batch
    test: Batch


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    num_classes: int

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            if seen & set(t.classes):
                raise StreamError("task class sets overlap")
            seen |= set(t.classes)
        if seen != set(range(self.num_classes)):
            raise StreamError("task class sets do not cover every class")

    @property
    def in_dim(self) -> int:
        return self.tasks[0].train.features.shape[1]

    @property
    def testsets(self) -> list[Batch]:
        return [t.test for t in self.tasks]

    def __len__(self) -> int:
        return len(self.tasks)


def partition_classes(num_classes: int, tasks: int) -> list[tuple[int, ...]]:
    if tasks < 1 or num_classes % tasks:
        raise StreamError(f"{num_classes} classes cannot be split evenly into {tasks} tasks")
    per = num_classes // tasks
    return [tuple(range(i * per, (i + 1) * per)) for i in range(tasks)]


def _split_by_class(features, labels, test_features, test_labels, num_classes, tasks) -> TaskStream:
    out = []
    for classes in partition_classes(num_classes, tasks):
        tr = np.isin(labels, classes)
        te = np.isin(test_labels, classes)
        out.append(Task(classes, Batch(features[tr], labels[tr]),
                        Batch(test_features[te], test_labels[te])))
    return TaskStream(tuple(out), num_classes)


def class_means(num_classes: int, dims: int, separation: float,
                rng: np.random.Generator) -> np.ndarray:
    """Cluster centres whose pairwise distances equal ``separation``
    (exactly when ``dims >= num_classes``, approximately otherwise)."""
    if dims >= num_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dims, num_classes)))
        dirs = q.T
    else:
        dirs = rng.standard_normal((num_classes, dims))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (separation / np.sqrt(2.0))


def make_synthetic_stream(num_classes: int = 10, tasks: int = 5, dims: int = 20,
                          samples_per_class: int = 500, separation: float = 6.0, seed: int = 0,
                          test_per_class: int = 200) -> TaskStream:
    """Unit-covariance Gaussian clusters, split into tasks by class index."""
    partition_classes(num_classes, tasks)
    rng = np.random.default_rng(seed)
    means = class_means(num_classes, dims, separation, rng)

    def sample(per_class):
        y = np.repeat(np.arange(num_classes), per_class)
        x = means[y] + rng.standard_normal((y.size, dims))
        return x, y

    x, y = sample(samples_per_class)
    xt, yt = sample(test_per_class)
    return _split_by_class(x, y, xt, yt, num_classes, tasks)


def _read_idx(path, magic: int, kind: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: truncated at offset 0 (no magic number)")
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise IdxFormatError(f"{path}: bad {kind} magic 0x{found:08x} at offset 0, "
                             f"expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) < header_end + count:
        raise IdxFormatError(f"{path}: payload truncated at offset {len(data)}, expected "
                             f"{header_end + count} bytes")
    if len(data) > header_end + count:
        raise IdxFormatError(f"{path}: {len(data) - header_end - count} trailing bytes "
                             f"at offset {header_end + count}")
    return np.frombuffer(data, dtype=">u1", count=count, offset=header_end).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Images as float rows scaled to [0, 1]."""
    raw = _read_idx(path, IDX_IMAGES_MAGIC, "image")
    return raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0


def read_idx_labels(path, num_classes: int = 10) -> np.ndarray:
    labels = _read_idx(path, IDX_LABELS_MAGIC, "label").astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise IdxFormatError(f"{path}: label {labels[bad[0]]} at record {bad[0]} "
                             f"outside [0, {num_classes})")
    return labels


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def load_idx_stream(image_file, label_file, tasks: int = 5,
                    test_image_file: Optional[str] = None, test_label_file: Optional[str] = None,
                    num_classes: int = 10, test_fraction: float = 0.2, seed: int = 0) -> TaskStream:
    """Digit stream from IDX files.

    Without explicit test files a seeded ``test_fraction`` of the records is
    held out. Every file is parsed and validated before any task is built.
    """
    x = read_idx_images(image_file)
    y = read_idx_labels(label_file, num_classes)
    if x.shape[0] != y.shape[0]:
        raise IdxFormatError(f"{image_file}: {x.shape[0]} images but {y.shape[0]} labels")
    if test_image_file is not None:
        xt = read_idx_images(test_image_file)
        yt = read_idx_labels(test_label_file, num_classes)
        if xt.shape[0] != yt.shape[0]:
            raise IdxFormatError(f"{test_image_file}: image/label count mismatch")
    else:
        order = np.random.default_rng(seed).permutation(y.size)
        n_test = int(round(test_fraction * y.size))
        te, tr = order[:n_test], order[n_test:]
        x, y, xt, yt = x[tr], y[tr], x[te], y[te]
    return _split_by_class(x, y, xt, yt, num_classes, tasks)


def iterate_batches(batch: Batch, batch_size: int, rng: np.random.Generator) -> Sequence[Batch]:
    order = rng.permutation(len(batch))
    return [batch.subset(order[i:i + batch_size]) for i in range(0, len(batch), batch_size)]
