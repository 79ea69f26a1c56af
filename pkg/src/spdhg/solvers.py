"""SPDHG in its three step-size/averaging regimes, plus the LPDHG and
gradient-based ADMM baselines."""

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .linalg import spectral_norm_sq
from .problem import data_loss, objective_value

SAMPLE_BLOCK = 4096


class SolverDivergence(RuntimeError):
    """A non-finite iterate appeared; ``trace`` holds the records up to that point."""

    def __init__(self, iteration, trace):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


class Regime(enum.Enum):
    GENERAL_CONVEX = "gc"
    STRONGLY_CONVEX_UNIFORM = "sc-uniform"
    STRONGLY_CONVEX_NONUNIFORM = "sc-nonuniform"

    @property
    def code(self):
        return _REGIME_CODES[self]

    @property
    def strongly_convex(self):
        return self is not Regime.GENERAL_CONVEX


_REGIME_CODES = {
    Regime.GENERAL_CONVEX: K.GENERAL_CONVEX,
    Regime.STRONGLY_CONVEX_UNIFORM: K.STRONGLY_CONVEX_UNIFORM,
    Regime.STRONGLY_CONVEX_NONUNIFORM: K.STRONGLY_CONVEX_NONUNIFORM,
}


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    ``iterations`` is the number of updates T; the output average covers
    x^1..x^T, i.e. horizon ``t = T - 1`` in the weight and bound formulas.
    ``checkpoints`` (explicit iteration numbers) overrides ``checkpoint_every``.
    """

    regime: Regime = Regime.GENERAL_CONVEX
    s: float = 1.0
    L: float = 0.0
    mu: float = 0.0
    iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 100
    checkpoints: tuple = None

    def __post_init__(self):
        if isinstance(self.regime, str):
            object.__setattr__(self, "regime", Regime(self.regime))
        if not self.s > 0:
            raise ValueError("s must be positive")
        if self.L < 0 or self.mu < 0:
            raise ValueError("L and mu must be non-negative")
        if self.regime.strongly_convex and not self.mu > 0:
            raise ValueError(f"regime {self.regime.value} needs mu > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def horizon(self):
        return self.iterations - 1

    def checkpoint_grid(self):
        if self.checkpoints is not None:
            pts = sorted({int(c) for c in self.checkpoints if 0 < int(c) <= self.iterations})
        else:
            pts = list(range(self.checkpoint_every, self.iterations + 1, self.checkpoint_every))
        if not pts or pts[-1] != self.iterations:
            pts.append(self.iterations)
        return [0] + pts


@dataclass
class IterateState:
    x: np.ndarray
    y: np.ndarray
    xbar_accum: np.ndarray
    ybar_accum: np.ndarray
    weight_accum: float = 0.0
    k: int = 0

    @classmethod
    def initial(cls, spec, x0=None, y0=None):
        """Start at ``(x0, y0)``, by default the origin of both spaces."""
        d, l = spec.d, spec.F.rows
        if x0 is None:
            if not spec.X.contains_origin():
                raise ValueError("x0 = 0 must lie in X")
            x0 = np.zeros(d)
        if y0 is None:
            y0 = np.zeros(l)
        x0 = np.array(x0, dtype=np.float64)
        y0 = np.array(y0, dtype=np.float64)
        if x0.shape != (d,) or y0.shape != (l,):
            raise ValueError("initial point has the wrong dimension")
        if not spec.X.contains(x0):
            raise ValueError("x0 must lie in X")
        if l and not spec.Y.contains(y0):
            raise ValueError("y0 must lie in Y")
        return cls(x0, y0, np.zeros(d), np.zeros(l))


def finalize_average(state):
    """Weighted averages ``(xbar, ybar)`` of the iterates seen so far."""
    if state.k == 0 or state.weight_accum <= 0.0:
        raise ValueError("no steps taken")
    return state.xbar_accum / state.weight_accum, state.ybar_accum / state.weight_accum


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    epoch: float
    objective: float
    test_loss: float
    gap: float
    elapsed_ms: float


@dataclass
class RunTrace:
    method: str
    records: list
    xbar: np.ndarray
    ybar: np.ndarray
    x: np.ndarray
    y: np.ndarray
    iterations: int
    samples_consumed: int
    ops: int
    extras: dict = field(default_factory=dict)

    @property
    def ops_per_iteration(self):
        return self.ops / self.iterations

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def step_size(regime, k, L, mu):
    """Primal step β^{k+1} for iteration k (k = 0, 1, ...)."""
    regime = Regime(regime)
    if k < 0:
        raise ValueError("k must be >= 0")
    if regime.strongly_convex and not mu > 0:
        raise ValueError(f"regime {regime.value} needs mu > 0")
    return K.step_size(regime.code, float(k), float(L), float(mu))


def averaging_weight(regime, k, t):
    """Weight α^{k+1} of iterate x^{k+1} in the horizon-t average."""
    regime = Regime(regime)
    if not 0 <= k <= t:
        raise ValueError("need 0 <= k <= t")
    return K.averaging_weight(regime.code, float(k), float(t))


class _Sampler:
    """Uniform row indices drawn in fixed-size blocks, so the stream does not
    depend on how the run is segmented."""

    def __init__(self, n, rng):
        self.n, self.rng = n, rng
        self.buf = np.zeros(0, dtype=np.int64)

    def take(self, m):
        while self.buf.size < m:
            self.buf = np.concatenate([self.buf, self.rng.integers(0, self.n, SAMPLE_BLOCK)])
        out, self.buf = self.buf[:m], self.buf[m:]
        return np.ascontiguousarray(out, dtype=np.int64)


def _metrics(spec, test, reference, x, y):
    from .analysis import duality_gap

    obj = objective_value(spec, x)
    tl = data_loss(test, spec.loss, x) if test is not None else math.nan
    gap = duality_gap(spec, reference, x, y) if reference is not None else math.nan
    return obj, tl, gap


def _current_average(state):
    if state.k == 0:
        return state.x.copy(), state.y.copy()
    return finalize_average(state)


def _pdhg(spec, cfg, test, reference, stochastic, step_rule, beta, method, x0, y0):
    state = IterateState.initial(spec, x0, y0)
    sampler = _Sampler(spec.n, np.random.default_rng(cfg.seed)) if stochastic else None
    empty = np.zeros(0, dtype=np.int64)
    wacc = np.zeros(1)
    counters = np.zeros(2, dtype=np.int64)
    prefix = spec.kernel_args()
    per_iter = 1 if stochastic else spec.n
    records = []
    elapsed = 0.0

    def record(k):
        xb, yb = _current_average(state)
        obj, tl, gap = _metrics(spec, test, reference, xb, yb)
        records.append(TraceRecord(k, k * per_iter / spec.n, obj, tl, gap, elapsed))

    def trace():
        xb, yb = _current_average(state)
        return RunTrace(method, records, xb, yb, state.x.copy(), state.y.copy(),
                        state.k, state.k * per_iter, int(counters[0]))

    record(0)
    grid = cfg.checkpoint_grid()
    for lo, hi in zip(grid[:-1], grid[1:]):
        samples = sampler.take(hi - lo) if stochastic else empty
        t0 = time.perf_counter()
        bad = K.pdhg_segment(
            *prefix, float(cfg.s), cfg.regime.code, float(cfg.L), float(cfg.mu),
            float(cfg.horizon), step_rule, float(beta),
            samples, spec.all_rows,
            state.x, state.y, state.xbar_accum, state.ybar_accum, wacc, lo, hi, counters,
        )
        elapsed += (time.perf_counter() - t0) * 1e3
        state.weight_accum = float(wacc[0])
        if bad >= 0:
            state.k = bad + 1
            raise SolverDivergence(bad, trace())
        state.k = hi
        record(hi)
    return trace()


def spdhg_run(spec, cfg, test=None, reference=None, x0=None, y0=None):
    """Stochastic PDHG: one sampled row per iteration, β from the regime schedule.

    Each iteration takes ``y <- Π_Y(y + s F x)`` and then
    ``x <- Π_X(x - β (∇l(x, ξ) + Fᵀ y))``. Checkpoint metrics are evaluated on
    the running weighted average; ``reference`` (a ReferencePoint) enables
    the gap column.
    """
    return _pdhg(spec, cfg, test, reference, True, K.STEP_SCHEDULE, 0.0, "spdhg", x0, y0)


def default_lpdhg_beta(spec):
    lam_max = spectral_norm_sq(spec.F) if spec.F.rows and spec.F.nnz else 0.0
    return 1.0 / (spec.lipschitz + math.sqrt(lam_max))


def lpdhg_run(spec, cfg, test=None, reference=None, step="schedule", beta=None, x0=None, y0=None):
    """Linearised PDHG: the same loop with the exact full gradient.

    ``step="schedule"`` uses the regime's β^{k+1}; ``step="constant"`` uses
    ``beta`` (default ``1 / (L + sqrt(λmax(FᵀF)))``).
    """
    if step == "schedule":
        rule, b = K.STEP_SCHEDULE, 0.0
    elif step == "constant":
        rule, b = K.STEP_CONSTANT, default_lpdhg_beta(spec) if beta is None else beta
        if not b > 0:
            raise ValueError("beta must be positive")
    else:
        raise ValueError(f"unknown step rule {step!r}")
    return _pdhg(spec, cfg, test, reference, False, rule, b, "lpdhg", x0, y0)


def gadmm_run(spec, cfg, rho=1.0, test=None, reference=None):
    """Gradient-based ADMM on ``min l(x) + r(z)`` subject to ``z = F x``.

    Per iteration: z by the prox of r (soft-thresholding for the l1 norm),
    a projected gradient step on x with step ``rho``, then the multiplier
    step. Metrics use the last iterate, with the multiplier projected onto
    Y standing in for the dual variable.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not spec.X.contains_origin():
        raise ValueError("x0 = 0 must lie in X")
    d, l = spec.d, spec.F.rows
    x, z, lam = np.zeros(d), np.zeros(l), np.zeros(l)
    counters = np.zeros(2, dtype=np.int64)
    prefix = spec.kernel_args()
    records = []
    elapsed = 0.0
    k = 0

    def record(it):
        obj, tl, gap = _metrics(spec, test, reference, x, spec.Y.project(lam))
        records.append(TraceRecord(it, float(it), obj, tl, gap, elapsed))

    def trace():
        tr = RunTrace("gadmm", records, x.copy(), spec.Y.project(lam), x.copy(),
                      spec.Y.project(lam), k, k * spec.n, int(counters[0]))
        tr.extras.update(z=z.copy(), lam=lam.copy())
        return tr

    record(0)
    grid = cfg.checkpoint_grid()
    for lo, hi in zip(grid[:-1], grid[1:]):
        t0 = time.perf_counter()
        bad = K.gadmm_segment(*prefix, float(rho), spec.all_rows, x, z, lam, lo, hi, counters)
        elapsed += (time.perf_counter() - t0) * 1e3
        if bad >= 0:
            k = bad + 1
            raise SolverDivergence(bad, trace())
        k = hi
        record(hi)
    return trace()


def soft_threshold(w, tau):
    """Componentwise ``argmin_z tau|z| + (1/2)(z - w)^2``."""
    w = np.asarray(w, dtype=np.float64)
    return np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)


def gadmm_z_update(Fx, lam, rho, Y):
    """The z-step alone, as the compiled loop computes it (Moreau identity)."""
    w = np.asarray(Fx, dtype=np.float64) + np.asarray(lam, dtype=np.float64) / rho
    return w - Y.project(rho * w) / rho
