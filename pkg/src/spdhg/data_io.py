"""libsvm-format datasets, train/test splitting and data-level constants."""

import gzip
import io
import math
from dataclasses import dataclass

import numpy as np

from .linalg import SparseMatrix


class ParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples ``(a_i, b_i)``: a sparse feature matrix and one label per row.

    Labels are in {-1, +1} unless ``binary`` is False, which admits any
    finite real target (least-squares problems).
    """

    features: SparseMatrix
    labels: np.ndarray
    binary: bool = True

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (self.features.rows,):
            raise ValueError("one label per feature row required")
        if self.features.rows < 1 or self.features.cols < 1:
            raise ValueError("dataset needs n >= 1 and d >= 1")
        if self.binary and not np.all(np.abs(labels) == 1.0):
            raise ValueError("binary labels must be -1 or +1")
        if not np.all(np.isfinite(labels)):
            raise ValueError("labels must be finite")

    @property
    def n(self):
        return self.features.rows

    @property
    def d(self):
        return self.features.cols

    def subset(self, rows):
        return Dataset(self.features.take_rows(rows), self.labels[np.asarray(rows)], self.binary)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features == other.features
            and np.array_equal(self.labels, other.labels)
            and self.binary == other.binary
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset
    split_seed: int
    train_rows: np.ndarray
    test_rows: np.ndarray


def _map_labels(raw, first_seen):
    distinct = sorted(set(raw))
    if len(distinct) > 2:
        third = sorted(first_seen[v] for v in distinct)[2]
        raise ParseError(third, f"more than two distinct labels: {distinct[:3]}...")
    if len(distinct) == 2:
        lo = distinct[0]
        return np.array([-1.0 if v == lo else 1.0 for v in raw])
    # single class: sign decides
    return np.array([1.0 if v > 0 else -1.0 for v in raw])


def parse_libsvm(stream, n_features=None):
    """Read ``label idx:val ...`` lines into a :class:`Dataset`.

    Indices are 1-based and must increase strictly within a line. Two raw
    label values are mapped onto {-1, +1}, the numerically smaller one to
    -1. Blank lines and ``#`` comments are skipped. ``n_features`` overrides
    the dimension inferred from the largest index.
    """
    raw_labels = []
    first_seen = {}
    rows, cols, vals = [], [], []
    max_idx = 0
    n = 0
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("ascii")
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(lineno, f"bad label {tokens[0]!r}") from None
        if not math.isfinite(label):
            raise ParseError(lineno, f"bad label {tokens[0]!r}")
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"malformed token {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise ParseError(lineno, f"bad index in {tok!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise ParseError(lineno, f"non-numeric value in {tok!r}") from None
            if not math.isfinite(val):
                raise ParseError(lineno, f"non-finite value in {tok!r}")
            if idx < 1:
                raise ParseError(lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise ParseError(lineno, f"index {idx} not increasing (previous {prev})")
            prev = idx
            if val != 0.0:
                rows.append(n)
                cols.append(idx - 1)
                vals.append(val)
        max_idx = max(max_idx, prev)
        raw_labels.append(label)
        first_seen.setdefault(label, lineno)
        n += 1
    if n == 0:
        raise ParseError(0, "no samples")
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise ValueError(f"n_features={d} smaller than largest index {max_idx}")
    labels = _map_labels(raw_labels, first_seen)
    return Dataset(SparseMatrix.from_triplets(n, d, rows, cols, vals), labels)


def load_libsvm(path, n_features=None):
    path = str(path)
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="ascii") as fh:
            return parse_libsvm(fh, n_features)
    with open(path, "r", encoding="ascii") as fh:
        return parse_libsvm(fh, n_features)


def format_libsvm(ds):
    """Serialise a dataset; floats use 17 significant digits so parsing round-trips."""
    m = ds.features
    out = io.StringIO()
    for i in range(ds.n):
        label = ds.labels[i]
        parts = ["%+d" % label if ds.binary else "%.17g" % label]
        for p in range(m.indptr[i], m.indptr[i + 1]):
            parts.append("%d:%.17g" % (m.indices[p] + 1, m.data[p]))
        out.write(" ".join(parts))
        out.write("\n")
    return out.getvalue()


def save_libsvm(ds, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_libsvm(ds))


def split(ds, train_fraction=0.8, seed=0):
    """Shuffle rows with ``seed`` and cut off ``floor(n * train_fraction)`` for training."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = math.floor(ds.n * train_fraction)
    if n_train < 1 or n_train >= ds.n:
        raise ValueError(f"degenerate split: {n_train} of {ds.n} rows for training")
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, te = perm[:n_train], perm[n_train:]
    return SplitDataset(ds.subset(tr), ds.subset(te), seed, tr, te)


def lipschitz_upper_bound(ds):
    """0.25 * max_i ||a_i||^2, the usual smoothness bound for the logistic loss."""
    return 0.25 * max_row_norm_sq(ds)


def max_row_norm_sq(ds):
    m = ds.features
    sq = np.zeros(m.rows)
    np.add.at(sq, np.repeat(np.arange(m.rows), m.row_nnz()), m.data ** 2)
    return float(sq.max())
