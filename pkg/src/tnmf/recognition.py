"""Face-recognition evaluation: image loading, preprocessing and 1-NN scoring.

A trained basis ``W`` is frozen, test images are projected onto it with
nonnegative multiplicative updates, and each test coefficient vector takes the
label of its nearest training coefficient column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.spatial.distance

from . import pgm
from .errors import DatasetError, ParameterError, PGMError, ShapeError
from .factorization import (
    FactorizationModel,
    PenaltyConfig,
    SolverConfig,
    make_rng,
    uniform_positive,
    update_h,
)
from .matrix import as_matrix, frobenius_norm_sq

METRICS = ("cosine", "euclidean")


@dataclass(frozen=True)
class GrayImage:
    """Grey-scale image; ``pixels`` is a (height, width) array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"image must be a nonempty 2-D array, got shape {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ParameterError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def intensities(self) -> np.ndarray:
        """Row-major flattened intensities."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class ImageDataset:
    images: tuple[GrayImage, ...]
    labels: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        if len(self.images) != len(self.labels):
            raise ShapeError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        shapes = {img.pixels.shape for img in self.images}
        if len(shapes) > 1:
            raise ShapeError(f"images have differing sizes: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.images)

    def subjects(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        return list(dict.fromkeys(self.labels))

    def subset(self, indices: Sequence[int]) -> "ImageDataset":
        return ImageDataset(
            tuple(self.images[i] for i in indices),
            tuple(self.labels[i] for i in indices),
            self.name,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_per_subject: int
    seed: int = 0

    def __post_init__(self):
        if self.train_per_subject < 1:
            raise ParameterError(
                f"train_per_subject must be >= 1, got {self.train_per_subject}"
            )


# -- PGM ---------------------------------------------------------------------


def parse_pgm(data: bytes) -> GrayImage:
    samples, maxval = pgm.decode_samples(data)
    return GrayImage(samples / maxval)


def serialize_pgm(img: GrayImage, maxval: int = 255, plain: bool = False) -> bytes:
    samples = np.rint(img.pixels * maxval).astype(np.int64)
    return pgm.encode(samples, maxval, plain=plain)


def read_pgm(path) -> GrayImage:
    path = Path(path)
    try:
        return parse_pgm(path.read_bytes())
    except PGMError as e:
        raise DatasetError(f"{path}: {e}") from e
    except OSError as e:
        raise DatasetError(f"{path}: {e.strerror or e}") from e


# -- preprocessing -----------------------------------------------------------


def _linear_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix sampling ``src`` points linearly at ``dst`` centres."""
    centres = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    centres = np.clip(centres, 0.0, src - 1)
    lo = np.floor(centres).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = centres - lo
    out = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(out, (rows, lo), 1.0 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def downsample(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Shrink an image to ``target_w`` x ``target_h``.

    Exact integer factors on both axes use block means; anything else uses
    bilinear interpolation at target pixel centres.
    """
    h, w = img.pixels.shape
    if target_w < 1 or target_h < 1:
        raise ParameterError(f"target size must be positive, got {target_w}x{target_h}")
    if target_w > w or target_h > h:
        raise ParameterError(
            f"cannot upscale {w}x{h} to {target_w}x{target_h}"
        )
    if h % target_h == 0 and w % target_w == 0:
        fy, fx = h // target_h, w // target_w
        out = img.pixels.reshape(target_h, fy, target_w, fx).mean(axis=(1, 3))
    else:
        out = _linear_weights(h, target_h) @ img.pixels @ _linear_weights(w, target_w).T
    return GrayImage(np.clip(out, 0.0, 1.0))


def build_matrix(ds: ImageDataset) -> np.ndarray:
    """Stack vectorised images as the columns of an n x p matrix."""
    if len(ds) == 0:
        raise ParameterError("cannot build a matrix from an empty dataset")
    return np.column_stack([img.intensities for img in ds.images])


def split(ds: ImageDataset, spec: SplitSpec) -> tuple[ImageDataset, ImageDataset]:
    """Per subject, draw ``train_per_subject`` images for training."""
    rng = make_rng(spec.seed)
    labels = np.array(ds.labels)
    train_idx = []
    for subject in ds.subjects():
        idx = np.flatnonzero(labels == subject)
        if len(idx) <= spec.train_per_subject:
            raise ParameterError(
                f"subject {subject!r} has {len(idx)} images; need more than "
                f"{spec.train_per_subject}"
            )
        train_idx.extend(rng.choice(idx, size=spec.train_per_subject, replace=False))
    train_set = set(int(i) for i in train_idx)
    train = sorted(train_set)
    test = [i for i in range(len(ds)) if i not in train_set]
    return ds.subset(train), ds.subset(test)


# -- evaluation --------------------------------------------------------------


def project(w, x_test, solver: SolverConfig | None = None) -> np.ndarray:
    """Nonnegative coefficients for ``x_test`` on the frozen basis ``w``.

    Runs unpenalised H updates from a seeded uniform start until the solver's
    stopping rule fires.
    """
    solver = solver or SolverConfig()
    w = as_matrix(w, "W", nonnegative=True)
    x_test = as_matrix(x_test, "X_test", nonnegative=True)
    if w.shape[0] != x_test.shape[0]:
        raise ShapeError(f"W {w.shape} and X_test {x_test.shape} have different row counts")
    k, m = w.shape[1], x_test.shape[1]
    if m == 0:
        return np.zeros((k, 0))
    h = uniform_positive(make_rng(solver.seed), (k, m))
    model = FactorizationModel(w=w, h=h)
    plain = PenaltyConfig()
    last = frobenius_norm_sq(x_test - w @ h)
    for t in range(1, solver.max_iters + 1):
        model = update_h(model, x_test, plain, solver)
        if t % solver.check_every == 0 or t == solver.max_iters:
            err = frobenius_norm_sq(x_test - w @ model.h)
            if abs(last - err) <= solver.rel_tol * max(last, np.finfo(float).tiny):
                break
            last = err
    return model.h


def _cosine_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # rows of a vs rows of b; zero vectors are infinitely far from everything
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = (a @ b.T) / np.outer(na, nb)
    dist = 1.0 - sim
    dist[na == 0, :] = np.inf
    dist[:, nb == 0] = np.inf
    return dist


def classify(h_test, h_train, labels: Sequence, metric: str = "cosine") -> list:
    """1-nearest-neighbour labels for each column of ``h_test``.

    Ties go to the lowest training column index.
    """
    h_test = np.asarray(h_test, dtype=np.float64)
    h_train = np.asarray(h_train, dtype=np.float64)
    if h_train.ndim != 2 or h_train.shape[1] == 0:
        raise ParameterError("training set is empty")
    if h_test.shape[0] != h_train.shape[0]:
        raise ShapeError(
            f"coefficient dimensions differ: test {h_test.shape}, train {h_train.shape}"
        )
    if len(labels) != h_train.shape[1]:
        raise ShapeError(f"{len(labels)} labels for {h_train.shape[1]} training columns")
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if h_test.shape[1] == 0:
        return []
    if metric == "cosine":
        dist = _cosine_distances(h_test.T, h_train.T)
    else:
        dist = scipy.spatial.distance.cdist(h_test.T, h_train.T)
    nearest = np.argmin(dist, axis=1)
    return [labels[j] for j in nearest]


def accuracy(predicted: Sequence, actual: Sequence) -> float:
    if len(predicted) != len(actual):
        raise ParameterError(
            f"length mismatch: {len(predicted)} predictions, {len(actual)} labels"
        )
    if not predicted:
        raise ParameterError("accuracy of an empty prediction list is undefined")
    hits = sum(1 for p, a in zip(predicted, actual) if p == a)
    return hits / len(predicted)


# -- dataset I/O -------------------------------------------------------------


def _load_manifest(path: Path) -> tuple[list[Path], list[str]]:
    files, labels = [], []
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 2:
                    raise DatasetError(
                        f"{path}:{lineno}: expected 'relative-path,label', got {row!r}"
                    )
                files.append(path.parent / row[0].strip())
                labels.append(row[1].strip())
    except OSError as e:
        raise DatasetError(f"{path}: {e.strerror or e}") from e
    return files, labels


def _scan_directory(root: Path) -> tuple[list[Path], list[str]]:
    files, labels = [], []
    for subject in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(subject.iterdir()):
            if f.is_file() and f.suffix.lower() == ".pgm":
                files.append(f)
                labels.append(subject.name)
    return files, labels


def load_dataset(path, name: str | None = None, resize: tuple[int, int] | None = None) -> ImageDataset:
    """Load a subject-per-directory tree or a ``path,label`` manifest file.

    ``resize`` is ``(width, height)``; images are downsampled after loading.
    """
    path = Path(path)
    if path.is_dir():
        files, labels = _scan_directory(path)
    elif path.is_file():
        files, labels = _load_manifest(path)
    else:
        raise DatasetError(f"{path}: no such file or directory")
    if not files:
        raise DatasetError(f"{path}: no PGM images found")
    images = []
    for f in files:
        img = read_pgm(f)
        if resize is not None:
            try:
                img = downsample(img, *resize)
            except ParameterError as e:
                raise DatasetError(f"{f}: {e}") from e
        images.append(img)
    try:
        return ImageDataset(tuple(images), tuple(labels), name or path.stem)
    except ShapeError as e:
        raise DatasetError(f"{path}: {e}") from e


def save_dataset(ds: ImageDataset, root, maxval: int = 255) -> list[Path]:
    """Write ``ds`` as ``root/<label>/<index>.pgm`` (binary PGM)."""
    root = Path(root)
    written = []
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        f = d / f"{i:04d}.pgm"
        f.write_bytes(serialize_pgm(img, maxval))
        written.append(f)
    return written
