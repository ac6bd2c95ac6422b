"""Datasets: synthetic generators, delimited-text loading and DIVT file I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ParseError
from .tensor import Rng, Tensor


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (count, dim) or (count, C, H, W), float32
    labels: np.ndarray  # (count,), int64 in [0, classes)
    classes: int

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ParameterError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ParameterError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes)

    def split(self, eval_frac: float = 0.2, seed: int = 0):
        """Seeded shuffle into disjoint, exhaustive (train, eval) parts."""
        if not 0.0 < eval_frac < 1.0:
            raise ParameterError(f"eval fraction must be in (0, 1), got {eval_frac}")
        order = Rng(seed, (11,)).permutation(len(self))
        n_eval = int(round(eval_frac * len(self)))
        return self.subset(np.sort(order[n_eval:])), self.subset(np.sort(order[:n_eval]))


def gen_blobs(classes: int, dim: int, per_class: int, spread: float = 1.0, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters around standard-normal class centers."""
    if classes < 1 or dim < 1 or per_class < 1 or spread < 0:
        raise ParameterError("classes, dim and per_class must be positive and spread >= 0")
    rng = Rng(seed, (21,))
    centers = rng.normal((classes, dim))
    noise = rng.normal((classes, per_class, dim)) * spread
    x = (centers[:, None, :] + noise).reshape(classes * per_class, dim)
    y = np.repeat(np.arange(classes), per_class)
    return Dataset(x.astype(np.float32), y.astype(np.int64), classes)


def gen_textured_images(classes: int, size: int, per_class: int, seed: int = 0, noise: float = 0.08) -> Dataset:
    """Single-channel images mixing a smooth ramp with fine stripes.

    A class is identified by the pair (ramp direction, stripe orientation):
    ramps alternate between two opposite directions and stripe orientations
    step through half a turn, so neither the low- nor the high-frequency
    content alone separates all classes.  Per-sample phase, amplitude and
    pixel noise vary; values are clipped to [0, 1].
    """
    if classes < 1 or per_class < 1:
        raise ParameterError("classes and per_class must be positive")
    if size < 8:
        raise ParameterError(f"image size must be >= 8, got {size}")
    rng = Rng(seed, (22,))
    coords = (np.arange(size) - (size - 1) / 2) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    orientations = max(1, math.ceil(classes / 2))
    images, labels = [], []
    for c in range(classes):
        ramp_angle = math.pi * (c % 2) + math.pi / 4
        stripe_angle = math.pi * (c // 2) / orientations
        ramp = xx * math.cos(ramp_angle) + yy * math.sin(ramp_angle)
        for _ in range(per_class):
            freq = size / 4 * (1 + 0.15 * (rng.uniform() - 0.5))
            phase = 2 * math.pi * rng.uniform()
            a = stripe_angle + 0.15 * (rng.uniform() - 0.5)
            stripes = np.sin(2 * math.pi * freq * (xx * math.cos(a) + yy * math.sin(a)) + phase)
            img = (
                0.5
                + (0.5 + 0.3 * rng.uniform()) * ramp
                + (0.15 + 0.1 * rng.uniform()) * stripes
                + noise * rng.normal((size, size))
            )
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(c)
    x = np.stack(images)[:, None].astype(np.float32)
    return Dataset(x, np.asarray(labels, dtype=np.int64), classes)


def load_delimited(path, label_column=-1, delimiter: str = ",", header: bool = False) -> Dataset:
    """Read a rectangular numeric table; one column holds class labels.

    ``label_column`` is an index (negative counts from the end) or, with
    ``header=True``, a column name.  Features are standardized per column
    and labels factorized to ``0..k-1`` in order of first appearance.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    first = 1 if header else 0
    names = [c.strip() for c in rows[0]] if header and rows else None
    body = [(i + 1, r) for i, r in enumerate(rows) if i >= first and any(cell.strip() for cell in r)]
    if not body:
        raise ParseError(f"{path}: no data rows")
    width = len(names) if names else len(body[0][1])
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise ParseError(f"{path}: label column {label_column!r} not found in header")
        lab = names.index(label_column)
    else:
        lab = label_column + width if label_column < 0 else label_column
        if not 0 <= lab < width:
            raise ParseError(f"{path}: label column {label_column} out of range for {width} columns")
    feats, raw_labels = [], []
    for lineno, row in body:
        if len(row) != width:
            raise ParseError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        vals = []
        for col, cell in enumerate(row):
            if col == lab:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: row {lineno}, column {col + 1}: non-numeric value {cell!r}") from None
        feats.append(vals)
        raw_labels.append(row[lab].strip())
    codes = {}
    labels = np.array([codes.setdefault(v, len(codes)) for v in raw_labels], dtype=np.int64)
    x = np.asarray(feats, dtype=np.float64)
    std = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)
    return Dataset(x.astype(np.float32), labels, len(codes))


def write_divt(path, tensor: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor.to_divt())


def read_divt(path) -> Tensor:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return Tensor.from_divt(buf)
