"""Problem definition: smooth loss oracles, the regulariser's dual set, and the
saddle function ``P(y, x) = l(x) + <y, F x>``."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data_io import Dataset, lipschitz_upper_bound, max_row_norm_sq
from .linalg import SparseMatrix, matvec

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class LossKind:
    """Per-sample loss plus an optional ridge term ``(gamma/2)||x||^2``."""

    tag: str = "logistic"  # "logistic" | "least_squares"
    gamma: float = 0.0

    def __post_init__(self):
        if self.tag not in ("logistic", "least_squares"):
            raise ValueError(f"unknown loss {self.tag!r}")
        if not (self.gamma >= 0.0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be finite and >= 0")

    @property
    def code(self):
        return K.LOGISTIC if self.tag == "logistic" else K.LEAST_SQUARES

    @property
    def mu(self):
        """Strong convexity modulus guaranteed by the ridge term."""
        return self.gamma


# -- convex sets -------------------------------------------------------------------

@dataclass(frozen=True)
class L2Ball:
    radius: float
    dim: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    code = K.SET_L2

    @property
    def diameter(self):
        return 2.0 * self.radius

    def project(self, v):
        from .projections import project_l2_ball
        return project_l2_ball(v, self.radius)

    def contains(self, v, tol=FEAS_TOL):
        return float(np.linalg.norm(v)) <= self.radius + tol

    def support(self, z):
        return self.radius * float(np.linalg.norm(z))

    def contains_origin(self):
        return True


@dataclass(frozen=True)
class LinfBall:
    radius: float
    dim: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    code = K.SET_LINF

    @property
    def diameter(self):
        return 2.0 * self.radius * math.sqrt(self.dim)

    def project(self, v):
        from .projections import project_linf_ball
        return project_linf_ball(v, self.radius)

    def contains(self, v, tol=FEAS_TOL):
        return v.size == 0 or float(np.max(np.abs(v))) <= self.radius + tol

    def support(self, z):
        return self.radius * float(np.sum(np.abs(z)))

    def contains_origin(self):
        return True


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    code = K.SET_BOX

    def __post_init__(self):
        lo = np.ascontiguousarray(self.lo, dtype=np.float64)
        hi = np.ascontiguousarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(lo < hi) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("need finite lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def radius(self):
        return 0.0

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def project(self, v):
        from .projections import project_box
        return project_box(v, self.lo, self.hi)

    def contains(self, v, tol=FEAS_TOL):
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def contains_origin(self):
        return bool(np.all(self.lo <= 0.0) and np.all(self.hi >= 0.0))


# -- problem -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """``min_{x in X} max_{y in Y} l(x) + <y, F x>`` on a training set."""

    data: Dataset
    loss: LossKind
    F: SparseMatrix
    X: object
    Y: object
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        d = self.data.d
        if self.F.cols != d:
            raise ValueError(f"F has {self.F.cols} columns, data has dimension {d}")
        if self.X.dim != d:
            raise ValueError("X dimension differs from data dimension")
        if self.Y.dim != self.F.rows:
            raise ValueError("Y dimension must equal the number of rows of F")
        if self.data.binary is False and self.loss.tag == "logistic":
            raise ValueError("logistic loss needs {-1,+1} labels")

    @property
    def d(self):
        return self.data.d

    @property
    def n(self):
        return self.data.n

    @property
    def lipschitz(self):
        """Upper bound on the Lipschitz constant of the mean-loss gradient.

        Logistic: 0.25 max ||a_i||^2; least squares: max ||a_i||^2; plus gamma.
        """
        if "L" not in self._cache:
            if self.loss.tag == "logistic":
                base = lipschitz_upper_bound(self.data)
            else:
                base = max_row_norm_sq(self.data)
            self._cache["L"] = base + self.loss.gamma
        return self._cache["L"]

    @property
    def all_rows(self):
        if "rows" not in self._cache:
            self._cache["rows"] = np.arange(self.n, dtype=np.int64)
        return self._cache["rows"]

    def kernel_args(self):
        """Positional argument prefix shared by the compiled solver loops."""
        a, f, X, Y = self.data.features, self.F, self.X, self.Y
        lo = X.lo if isinstance(X, Box) else np.zeros(0)
        hi = X.hi if isinstance(X, Box) else np.zeros(0)
        return (
            a.indptr, a.indices, a.data, self.data.labels, self.loss.code, float(self.loss.gamma),
            f.indptr, f.indices, f.data,
            X.code, float(X.radius), lo, hi,
            Y.code, float(Y.radius),
        )


@dataclass(frozen=True)
class NoiseParams:
    sigma: float


def _vec(x, n, what):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{what}: expected length {n}, got shape {x.shape}")
    return x


def loss_value(spec, x, subset=None):
    """Mean per-sample loss over ``subset`` (a ``(lo, hi)`` row range), plus the ridge term."""
    x = _vec(x, spec.d, "loss_value")
    lo, hi = (0, spec.n) if subset is None else subset
    if not 0 <= lo < hi <= spec.n:
        raise ValueError(f"bad row range {subset}")
    a = spec.data.features
    return K.mean_loss(a.indptr, a.indices, a.data, spec.data.labels,
                       spec.loss.code, float(spec.loss.gamma), x, lo, hi)


def data_loss(ds, loss, x):
    """Mean per-sample loss on an arbitrary dataset, without the ridge term."""
    x = _vec(x, ds.d, "data_loss")
    a = ds.features
    code = LossKind(loss.tag).code
    return K.mean_loss(a.indptr, a.indices, a.data, ds.labels, code, 0.0, x, 0, ds.n)


def _gradient(spec, x, rows):
    a = spec.data.features
    g = np.empty(spec.d)
    K.batch_gradient(a.indptr, a.indices, a.data, spec.data.labels,
                     spec.loss.code, float(spec.loss.gamma), x, rows, g)
    return g


def full_gradient(spec, x):
    x = _vec(x, spec.d, "full_gradient")
    return _gradient(spec, x, spec.all_rows)


def sample_gradient(spec, x, i):
    """Gradient of the ``i``-th sample's loss plus the ridge term."""
    x = _vec(x, spec.d, "sample_gradient")
    return _gradient(spec, x, np.array([i], dtype=np.int64))


def stochastic_gradient(spec, x, rng):
    """Draw one training row uniformly with ``rng`` (a numpy Generator).

    Returns ``(gradient, index)``; ``rng`` is advanced in place.
    """
    i = int(rng.integers(spec.n))
    return sample_gradient(spec, x, i), i


def regularizer_value(Y, z):
    """Support function of ``Y`` at ``z``: lam*||z||_1 for LinfBall, rho*||z||_2 for L2Ball."""
    z = _vec(z, Y.dim, "regularizer_value")
    return Y.support(z)


def objective_value(spec, x):
    """Training objective ``l(x) + r(F x)``."""
    return loss_value(spec, x) + regularizer_value(spec.Y, matvec(spec.F, x))


def saddle_value(spec, y, x):
    y = _vec(y, spec.F.rows, "saddle_value")
    x = _vec(x, spec.d, "saddle_value")
    if not spec.Y.contains(y):
        raise ValueError("y lies outside the dual set")
    return loss_value(spec, x) + float(y @ matvec(spec.F, x))


# -- graphs ------------------------------------------------------------------------

def build_fusion_matrix(edges, d):
    """One row per edge ``(i, j)``: +1 at column i, -1 at column j."""
    edges = [(int(i), int(j)) for i, j in edges]
    if len(set(edges)) != len(edges):
        raise ValueError("duplicate edges")
    r, c, v = [], [], []
    for row, (i, j) in enumerate(edges):
        if not 0 <= i < j < d:
            raise ValueError(f"edge ({i}, {j}) invalid for d={d}; need 0 <= i < j < d")
        r += [row, row]
        c += [i, j]
        v += [1.0, -1.0]
    return SparseMatrix.from_triplets(len(edges), d, r, c, v)


def chain_edges(d):
    return [(i, i + 1) for i in range(d - 1)]


def feature_correlations(ds):
    """Dense Pearson correlation matrix of the feature columns; NaN for constant columns."""
    a = ds.features.to_dense()
    centered = a - a.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (centered.T @ centered) / np.outer(scale, scale)
    const = scale == 0.0
    corr[const, :] = np.nan
    corr[:, const] = np.nan
    return corr


def build_graph_by_correlation(ds, threshold, max_edges):
    """Edges between features whose |Pearson correlation| reaches ``threshold``.

    Returned as ``(i, j, corr)`` triples sorted by descending |corr| (ties by
    ``(i, j)``) and truncated to ``max_edges``.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if ds.d < 2:
        raise ValueError("need at least two features to build a graph")
    corr = feature_correlations(ds)
    iu, ju = np.triu_indices(ds.d, k=1)
    c = corr[iu, ju]
    # rounding can push a perfect correlation slightly past 1
    c = np.clip(c, -1.0, 1.0)
    keep = np.isfinite(c) & (np.abs(c) >= threshold)
    iu, ju, c = iu[keep], ju[keep], c[keep]
    order = np.lexsort((ju, iu, -np.abs(c)))[:max_edges]
    return [(int(iu[p]), int(ju[p]), float(c[p])) for p in order]


# -- noise ---------------------------------------------------------------------------

def estimate_sigma(spec, x):
    """Population standard deviation of the per-sample gradients at ``x`` (exhaustive)."""
    x = _vec(x, spec.d, "estimate_sigma")
    grads = np.stack([sample_gradient(spec, x, i) for i in range(spec.n)])
    mean = grads.mean(axis=0)
    return math.sqrt(float(np.mean(np.sum((grads - mean) ** 2, axis=1))))


# -- constructors ----------------------------------------------------------------------

def make_problem(data, model="gglr", lam=1e-5, gamma=1e-2, edges=(), radius_x=10.0):
    """GGLR (``gamma`` ignored) or GGRLR problem with ``lam ||F x||_1`` and an l2-ball X."""
    if model not in ("gglr", "ggrlr"):
        raise ValueError(f"unknown model {model!r}")
    F = build_fusion_matrix([e[:2] for e in edges], data.d)
    loss = LossKind("logistic", gamma if model == "ggrlr" else 0.0)
    return ProblemSpec(data, loss, F, L2Ball(radius_x, data.d), LinfBall(lam, F.rows))


def make_toy_dataset(n=200, d=20, seed=0, label_noise=0.1):
    """Synthetic binary classification data with a piecewise-constant true weight.

    Neighbouring features are correlated and coefficients come in fused
    blocks, so a chain graph is the natural penalty structure.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    a = z.copy()
    for j in range(1, d):
        a[:, j] = 0.6 * a[:, j - 1] + 0.8 * z[:, j]
    a /= math.sqrt(d)
    blocks = np.repeat(rng.choice([-2.0, 0.0, 1.0, 3.0], size=(d + 4) // 5), 5)[:d]
    margin = a @ blocks
    labels = np.where(margin + 0.3 * rng.standard_normal(n) >= 0, 1.0, -1.0)
    flip = rng.random(n) < label_noise
    labels[flip] *= -1.0
    return Dataset(SparseMatrix.from_dense(a), labels)
