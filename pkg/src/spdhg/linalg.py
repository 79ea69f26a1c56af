"""Sparse matrix container and the few kernels the solvers need."""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K


class ConvergenceError(RuntimeError):
    """Iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


def _check_vector(v, n, what):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n:
        raise ValueError(f"{what}: expected vector of length {n}, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with float64 entries.

    Construct through :meth:`from_triplets` or :meth:`from_dense` unless the
    CSR arrays are already canonical; the constructor validates them.
    """

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative shape")
        if indptr.shape != (self.rows + 1,) or indptr[0] != 0:
            raise ValueError("indptr must have length rows+1 and start at 0")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if indptr[-1] != indices.shape[0] or indices.shape != data.shape:
            raise ValueError("indptr[-1], indices and data lengths disagree")
        if indices.size and (indices.min() < 0 or indices.max() >= self.cols):
            raise ValueError("column index out of range")
        for i in range(self.rows):
            row = indices[indptr[i]:indptr[i + 1]]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"row {i}: column indices not strictly increasing")
        if not np.all(np.isfinite(data)) or np.any(data == 0.0):
            raise ValueError("entries must be finite and non-zero")

    @classmethod
    def from_triplets(cls, rows, cols, row_ids, col_ids, values):
        """Build from coordinates; duplicates are summed, exact zeros dropped."""
        r = np.asarray(row_ids, dtype=np.int64).ravel()
        c = np.asarray(col_ids, dtype=np.int64).ravel()
        v = np.asarray(values, dtype=np.float64).ravel()
        if not (r.shape == c.shape == v.shape):
            raise ValueError("triplet arrays differ in length")
        if r.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ValueError("triplet index out of range")
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if r.size:
            new = np.ones(r.size, dtype=bool)
            new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
            starts = np.flatnonzero(new)
            # sequential merge keeps the summation order deterministic
            merged = np.array([v[a:b].sum() for a, b in zip(starts, list(starts[1:]) + [r.size])])
            r, c, v = r[starts], c[starts], merged
            keep = v != 0.0
            r, c, v = r[keep], c[keep], v[keep]
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        return cls(rows, cols, np.cumsum(indptr), c, v)

    @classmethod
    def from_dense(cls, a):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        r, c = np.nonzero(a)
        return cls.from_triplets(a.shape[0], a.shape[1], r, c, a[r, c])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def row_nnz(self):
        return np.diff(self.indptr)

    def to_dense(self):
        out = np.zeros(self.shape)
        for i in range(self.rows):
            sl = slice(self.indptr[i], self.indptr[i + 1])
            out[i, self.indices[sl]] = self.data[sl]
        return out

    def take_rows(self, rows):
        """New matrix made of the listed rows, in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        counts = self.row_nnz()[rows]
        indptr = np.concatenate([[0], np.cumsum(counts)])
        pieces = [np.arange(self.indptr[i], self.indptr[i + 1]) for i in rows]
        sel = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
        return SparseMatrix(rows.size, self.cols, indptr, self.indices[sel], self.data[sel])

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def matvec(m, v):
    """``m @ v`` with sequential per-row summation."""
    v = _check_vector(v, m.cols, "matvec")
    return K.csr_matvec(m.indptr, m.indices, m.data, v, np.empty(m.rows))


def matvec_transpose(m, v):
    """``m.T @ v`` without forming the transpose."""
    v = _check_vector(v, m.rows, "matvec_transpose")
    return K.csr_rmatvec(m.indptr, m.indices, m.data, v, np.empty(m.cols))


def spectral_norm_sq(m, tol=1e-10, max_iters=100_000, seed=0):
    """Largest eigenvalue of ``m.T @ m`` by power iteration.

    The start vector is a seeded Gaussian draw normalised to unit length.
    Iteration stops once successive Rayleigh quotients agree to ``tol``
    relative; :class:`ConvergenceError` carries the last estimate otherwise.
    """
    if m.rows == 0 or m.cols == 0:
        raise ValueError("spectral_norm_sq needs a non-empty matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.cols)
    v /= np.linalg.norm(v)
    prev = None
    est = 0.0
    for _ in range(max_iters):
        w = matvec_transpose(m, matvec(m, v))
        est = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if prev is not None and abs(est - prev) <= tol * abs(est):
            return est
        prev = est
    raise ConvergenceError(f"power iteration did not converge in {max_iters} steps", est)
