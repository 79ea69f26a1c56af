"""Duality gaps against reference saddle points, the high-probability bounds,
Monte-Carlo tail checks and log-log rate fits."""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _kernels as K
from .linalg import spectral_norm_sq
from .problem import Box, estimate_sigma, saddle_value
from .solvers import Regime, default_lpdhg_beta, spdhg_run


class ReferenceNotConverged(RuntimeError):
    """Reference solve stopped above tolerance; ``point`` holds the best effort."""

    def __init__(self, message, point):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    x_star: np.ndarray
    y_star: np.ndarray
    residual: float
    iterations: int = 0


@dataclass(frozen=True)
class BoundParams:
    D_x: float
    D_y: float
    sigma: float
    L: float
    mu: float
    lambda_max_FtF: float
    s: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.s > 0:
            raise ValueError("s must be positive")


@dataclass(frozen=True)
class TailReport:
    regime: str
    omega: float
    trials: int
    t: int
    bound_value: float
    exceed_count: int
    empirical_rate: float
    theoretical_cap: float
    max_gap: float
    mean_gap: float

    @property
    def passed(self):
        return self.empirical_rate <= self.theoretical_cap

    def to_json(self):
        return json.dumps(asdict(self), indent=2) + "\n"


def compute_reference(spec, max_iters=1_000_000, tol=1e-10, s=1.0, beta=None):
    """Saddle point of ``P`` from a long constant-step LPDHG run.

    Stops when ``||x+ - x|| + ||y+ - y|| < tol``; raises
    :class:`ReferenceNotConverged` (carrying the final point) otherwise.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    beta = default_lpdhg_beta(spec) if beta is None else beta
    x, y = np.zeros(spec.d), np.zeros(spec.F.rows)
    it, residual, best = K.reference_loop(*spec.kernel_args(), float(s), float(beta),
                                          spec.all_rows, x, y, int(max_iters), float(tol))
    point = ReferencePoint(x, y, float(residual), int(it))
    if not residual < tol:
        raise ReferenceNotConverged(
            f"reference residual {residual:.3g} (best {best:.3g}) above tol {tol:.3g} "
            f"after {it} iterations", point)
    return point


def duality_gap(spec, ref, xbar, ybar):
    """``P(y*, xbar) - P(ybar, x*)``."""
    return saddle_value(spec, ref.y_star, xbar) - saddle_value(spec, ybar, ref.x_star)


def _random_feasible(X, rng):
    if isinstance(X, Box):
        return X.lo + rng.random(X.dim) * (X.hi - X.lo)
    v = rng.standard_normal(X.dim)
    return X.radius * rng.random() ** (1.0 / X.dim) * v / np.linalg.norm(v)


def uniform_sigma(spec, points=10, seed=0):
    """Largest gradient-noise level over x0 = 0 and ``points`` random feasible points."""
    rng = np.random.default_rng(seed)
    xs = [np.zeros(spec.d)] + [_random_feasible(spec.X, rng) for _ in range(points)]
    return max(estimate_sigma(spec, x) for x in xs)


def bound_params(spec, s=1.0, sigma=None, seed=0):
    lam = spectral_norm_sq(spec.F) if spec.F.rows and spec.F.nnz else 0.0
    return BoundParams(
        D_x=spec.X.diameter,
        D_y=spec.Y.diameter,
        sigma=uniform_sigma(spec, seed=seed) if sigma is None else sigma,
        L=spec.lipschitz,
        mu=spec.loss.mu,
        lambda_max_FtF=lam,
        s=s,
    )


def theorem_bound(regime, params, t, omega):
    """Right-hand side of the high-probability gap bound for horizon ``t``.

    The gap of the horizon-t averages exceeds this value with probability
    at most ``2 exp(-omega)``.
    """
    regime = Regime(regime)
    if not omega > 0:
        raise ValueError("omega must be positive")
    if t < 0:
        raise ValueError("t must be >= 0")
    p = params
    Dx2, Dy2, lam, sig = p.D_x ** 2, p.D_y ** 2, p.lambda_max_FtF, p.sigma
    if regime is Regime.GENERAL_CONVEX:
        r = math.sqrt(t + 1.0)
        return (Dy2 / (2.0 * p.s * (t + 1.0))
                + p.L * Dx2 / (2.0 * (t + 1.0))
                + (Dx2 + 2.0 * lam * Dy2) / r
                + 2.0 * math.sqrt(omega) * p.D_x * sig / r
                + (1.0 + omega) * sig ** 2 / r)
    if not p.mu > 0:
        raise ValueError(f"regime {regime.value} needs mu > 0")
    if regime is Regime.STRONGLY_CONVEX_UNIFORM:
        lg = math.log(t + 1.0)
        return (Dy2 / (2.0 * p.s * (t + 1.0))
                + p.L * Dx2 / (2.0 * (t + 1.0))
                + lam * Dy2 * lg / (p.mu * (t + 1.0))
                + 2.0 * math.sqrt(omega) * p.D_x * sig / math.sqrt(t + 1.0)
                + (1.0 + omega) * sig ** 2 * lg / (2.0 * p.mu * (t + 1.0)))
    return (Dy2 / (p.s * (t + 2.0))
            + p.L * Dx2 / (t + 2.0)
            + 4.0 * lam * Dy2 / (p.mu * (t + 2.0))
            + 2.0 * math.sqrt(2.0 * omega) * p.D_x * sig / math.sqrt(t + 2.0)
            + 4.0 * (1.0 + omega) * sig ** 2 / (p.mu * (t + 2.0)))


def trial_seed(master_seed, trial_id):
    """Independent 63-bit seed for trial ``trial_id`` of a master seed."""
    state = np.random.SeedSequence([int(master_seed), int(trial_id)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _final_gap(args):
    spec, cfg, ref = args
    tr = spdhg_run(spec, cfg)
    return duality_gap(spec, ref, tr.xbar, tr.ybar)


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def trial_gaps(spec, cfg, ref, trials, jobs=1):
    """Final gaps of ``trials`` independent SPDHG runs, in trial-id order."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = replace(cfg, checkpoints=(cfg.iterations,))
    items = [(spec, replace(base, seed=trial_seed(cfg.seed, i)), ref) for i in range(trials)]
    return np.array(_map(_final_gap, items, jobs))


def tail_report(regime, params, t, omega, gaps, ref=None):
    bound = theorem_bound(regime, params, t, omega)
    if ref is not None and ref.residual > 0.01 * bound:
        raise ValueError(f"reference residual {ref.residual:.3g} too coarse for bound {bound:.3g}")
    exceed = int(np.sum(gaps > bound))
    return TailReport(
        regime=Regime(regime).value, omega=float(omega), trials=int(gaps.size), t=int(t),
        bound_value=bound, exceed_count=exceed, empirical_rate=exceed / gaps.size,
        theoretical_cap=2.0 * math.exp(-omega),
        max_gap=float(gaps.max()), mean_gap=float(gaps.mean()),
    )


def tail_experiment(spec, cfg, ref, omega, trials, params=None, jobs=1):
    """Count how often the final gap exceeds the bound across independent runs."""
    params = bound_params(spec, cfg.s) if params is None else params
    gaps = trial_gaps(spec, cfg, ref, trials, jobs)
    return tail_report(cfg.regime, params, cfg.horizon, omega, gaps, ref)


def fit_rate(ts, gaps):
    """Least-squares slope of ``log(gap)`` against ``log(t)``."""
    ts = np.asarray(ts, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    if ts.shape != gaps.shape or ts.size < 5:
        raise ValueError("need at least 5 (t, gap) points")
    if np.any(gaps <= 0):
        raise ValueError("gaps must be positive (reference too coarse?)")
    if np.any(ts <= 0) or ts.max() / ts.min() < 100.0:
        raise ValueError("t must be positive and span at least two decades")
    slope, _ = np.polyfit(np.log(ts), np.log(gaps), 1)
    return float(slope)


def log_checkpoints(lo, hi, per_decade=5):
    """Integer checkpoints spaced evenly in log scale on ``[lo, hi]``."""
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return tuple(sorted({int(round(v)) for v in np.logspace(math.log10(lo), math.log10(hi), n)}))


def _gap_curve(args):
    spec, cfg, ref = args
    tr = spdhg_run(spec, cfg, reference=ref)
    return tr.column("iteration"), tr.column("gap")


def averaged_gap_curve(spec, cfg, ref, seeds, jobs=1):
    """Seed-averaged gap of the running averages at ``cfg``'s checkpoints.

    Returns ``(iterations, mean_gap)`` without the initial record.
    """
    items = [(spec, replace(cfg, seed=int(sd)), ref) for sd in seeds]
    curves = _map(_gap_curve, items, jobs)
    its = curves[0][0][1:]
    return its, np.mean([c[1][1:] for c in curves], axis=0)
