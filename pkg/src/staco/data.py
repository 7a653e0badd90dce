"""Binary-classification datasets: libsvm parsing, synthesis, subsampling."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .rng import make_rng


class DataError(ValueError):
    """Raised for malformed input files or invalid dataset operations."""


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix with +1/-1 labels.

    ``pos_idx`` and ``neg_idx`` partition ``range(n)`` and are sorted.
    Arrays are marked read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    pos_idx: np.ndarray = field(init=False)
    neg_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int8)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError("labels length does not match number of rows")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be +1 or -1")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == -1)
        pos.setflags(write=False)
        neg.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "pos_idx", pos)
        object.__setattr__(self, "neg_idx", neg)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_pos(self) -> int:
        return len(self.pos_idx)

    @property
    def n_neg(self) -> int:
        return len(self.neg_idx)

    @property
    def X_pos(self) -> np.ndarray:
        return self.features[self.pos_idx]

    @property
    def X_neg(self) -> np.ndarray:
        return self.features[self.neg_idx]

    def require_both_classes(self):
        if self.n_pos < 1 or self.n_neg < 1:
            raise DataError(
                f"dataset needs at least one positive and one negative "
                f"(n+={self.n_pos}, n-={self.n_neg})")

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows])


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    d: int
    n_pos: int
    n_neg: int
    positive_fraction: float
    feature_min: list
    feature_max: list

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


def summarize(ds: Dataset) -> DatasetSummary:
    ds.require_both_classes()
    return DatasetSummary(
        n=ds.n, d=ds.d, n_pos=ds.n_pos, n_neg=ds.n_neg,
        positive_fraction=ds.n_pos / ds.n,
        feature_min=ds.features.min(axis=0).tolist(),
        feature_max=ds.features.max(axis=0).tolist(),
    )


def parse_libsvm(source: TextIO | Iterable[str], n_features: int | None = None) -> Dataset:
    """Parse libsvm/svmlight text into a dense :class:`Dataset`.

    Parameters
    ----------
    source : text stream or iterable of lines
        Each nonempty line is ``<label> <idx>:<val> ...`` with 1-based,
        strictly increasing indices.
    n_features : int, optional
        Force the column count (useful when a test file lacks the highest
        feature). Defaults to the maximum index seen.

    Labels greater than zero become +1, everything else -1.
    """
    labels = []
    rows = []
    max_idx = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            lab = float(tokens[0])
        except ValueError:
            raise DataError(f"line {lineno}: bad label {tokens[0]!r}") from None
        if not math.isfinite(lab):
            raise DataError(f"line {lineno}: bad label {tokens[0]!r}")
        idx = []
        val = []
        prev = 0
        for tok in tokens[1:]:
            k, sep, v = tok.partition(":")
            try:
                j = int(k)
                x = float(v)
            except ValueError:
                raise DataError(f"line {lineno}: malformed token {tok!r}") from None
            if not sep or j <= prev or not math.isfinite(x):
                raise DataError(f"line {lineno}: malformed token {tok!r}")
            prev = j
            idx.append(j - 1)
            val.append(x)
        max_idx = max(max_idx, prev)
        labels.append(1 if lab > 0 else -1)
        rows.append((idx, val))
    if not rows:
        raise DataError("empty libsvm input")
    d = max_idx if n_features is None else n_features
    if max_idx > d:
        raise DataError(f"feature index {max_idx} exceeds n_features={d}")
    X = np.zeros((len(rows), d))
    for r, (idx, val) in enumerate(rows):
        X[r, idx] = val
    return Dataset(X, np.array(labels, dtype=np.int8))


def load_libsvm(path, n_features: int | None = None) -> Dataset:
    path = Path(path)
    if path.suffix == ".bz2":
        import bz2
        with bz2.open(path, "rt") as fh:
            return parse_libsvm(fh, n_features)
    with open(path) as fh:
        return parse_libsvm(fh, n_features)


def to_libsvm(ds: Dataset) -> str:
    """Serialize using ``repr`` floats so parsing round-trips exactly."""
    out = io.StringIO()
    for x, lab in zip(ds.features, ds.labels):
        toks = [f"{j + 1}:{float(v)!r}" for j, v in enumerate(x) if v != 0.0]
        out.write(("+1" if lab > 0 else "-1") + ("" if not toks else " " + " ".join(toks)) + "\n")
    return out.getvalue()


def subsample_positives(ds: Dataset, keep_frac: float, seed: int) -> Dataset:
    """Keep ``ceil(keep_frac * n+)`` random positives and every negative.

    Row order of the survivors is preserved.
    """
    if not keep_frac > 0 or keep_frac > 1:
        raise DataError(f"keep_frac must be in (0, 1], got {keep_frac}")
    n_keep = math.ceil(keep_frac * ds.n_pos)
    if n_keep < 1:
        raise DataError("no positives would remain")
    if n_keep == ds.n_pos:
        return ds
    rng = make_rng(seed, "subsample")
    kept = np.sort(rng.choice(ds.pos_idx, size=n_keep, replace=False))
    rows = np.sort(np.concatenate([kept, ds.neg_idx]))
    return ds.subset(rows)


def split_head_tail(ds: Dataset, train_frac: float) -> tuple[Dataset, Dataset]:
    """First ``floor(train_frac * n)`` rows train, the rest test (file order)."""
    if not 0 < train_frac < 1:
        raise DataError(f"train_frac must be in (0, 1), got {train_frac}")
    cut = math.floor(train_frac * ds.n)
    if cut == 0 or cut == ds.n:
        raise DataError("split would leave an empty part")
    train = ds.subset(np.arange(cut))
    test = ds.subset(np.arange(cut, ds.n))
    for name, part in (("train", train), ("test", test)):
        if part.n_pos == 0 or part.n_neg == 0:
            raise DataError(f"{name} split has n+={part.n_pos}, n-={part.n_neg}")
    return train, test


def synth_gaussian(n_pos: int, n_neg: int, d: int, separation: float, seed: int) -> Dataset:
    """Two isotropic Gaussians at +/- separation along the first axis.

    Positives occupy the first ``n_pos`` rows.
    """
    if n_pos < 1 or n_neg < 1 or d < 1 or separation < 0:
        raise DataError("synth_gaussian needs n_pos, n_neg, d >= 1 and separation >= 0")
    rng = make_rng(seed, "synth")
    X = rng.standard_normal((n_pos + n_neg, d))
    X[:n_pos, 0] += separation
    X[n_pos:, 0] -= separation
    y = np.concatenate([np.ones(n_pos, np.int8), -np.ones(n_neg, np.int8)])
    return Dataset(X, y)
