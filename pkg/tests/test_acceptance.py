"""Acceptance suite: one test per numbered criterion, summarised at the end of the run."""

import io
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from spdhg.analysis import (BoundParams, averaged_gap_curve, bound_params, fit_rate,
                            log_checkpoints, tail_report, theorem_bound, trial_gaps)
from spdhg.cli import main
from spdhg.data_io import Dataset, ParseError, load_libsvm, parse_libsvm, save_libsvm
from spdhg.linalg import SparseMatrix, matvec
from spdhg.problem import (Box, L2Ball, LinfBall, LossKind, ProblemSpec, build_fusion_matrix,
                           full_gradient, loss_value, make_problem, make_toy_dataset,
                           sample_gradient)
from spdhg.projections import dual_update, project_box, project_l2_ball, project_linf_ball
from spdhg.solvers import (Regime, SolverConfig, averaging_weight, gadmm_run, gadmm_z_update,
                           lpdhg_run, soft_threshold, spdhg_run, step_size)

criterion = pytest.mark.criterion
RATE_SEEDS = range(20)
RATE_CHECKPOINTS = log_checkpoints(100, 100_000)


def no_time(tr):
    return [(r.iteration, r.epoch, r.objective, r.test_loss, r.gap) for r in tr.records]


@criterion(1, "oracle equivalence: SPDHG == LPDHG bitwise on a 1-sample dataset")
def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    ds = Dataset(SparseMatrix.from_dense([[0.8, 0.0, -1.2, 0.4]]), np.array([-1.0]))
    spec = make_problem(ds, "ggrlr", lam=0.05, gamma=0.01, edges=[(0, 1), (1, 2), (2, 3)],
                        radius_x=2.0)
    for seed in np.random.default_rng(2024).integers(0, 2**31, 5):
        for regime in Regime:
            cfg = SolverConfig(regime, L=spec.lipschitz, mu=0.01, iterations=500,
                               checkpoint_every=50, seed=int(seed))
            a, b = spdhg_run(spec, cfg), lpdhg_run(spec, cfg)
            assert no_time(a) == no_time(b)
            for u, v in ((a.x, b.x), (a.y, b.y), (a.xbar, b.xbar), (a.ybar, b.ybar)):
                assert u.tobytes() == v.tobytes()
    assert time.perf_counter() - t0 < 1.0


def _random_spec(rng, tag, gamma, n, d):
    a = rng.standard_normal((n, d)) * (rng.random((n, d)) < 0.6)
    if tag == "logistic":
        ds = Dataset(SparseMatrix.from_dense(a), np.where(rng.random(n) < 0.5, -1.0, 1.0))
    else:
        ds = Dataset(SparseMatrix.from_dense(a), rng.standard_normal(n), binary=False)
    return ProblemSpec(ds, LossKind(tag, gamma), build_fusion_matrix([], d), L2Ball(5.0, d),
                       LinfBall(1.0, 0))


@criterion(2, "gradient correctness vs central differences (h=1e-6), rel err <= 1e-5")
def test_c02_gradient_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for tag in ("logistic", "least_squares"):
        for gamma in (0.0, 1e-2):
            spec = _random_spec(rng, tag, gamma, 30, 6)
            for _ in range(20):
                x = spec.X.project(rng.standard_normal(6) * 2)
                g = full_gradient(spec, x)
                fd = np.array([(loss_value(spec, x + h * e) - loss_value(spec, x - h * e)) / (2 * h)
                               for e in np.eye(6)])
                assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-12)


@criterion(3, "unbiasedness: exhaustive per-sample mean == full gradient to 1e-12")
def test_c03_unbiasedness():
    rng = np.random.default_rng(3)
    for trial in range(10):
        n, d = int(rng.integers(1, 51)), int(rng.integers(1, 21))
        tag = ("logistic", "least_squares")[trial % 2]
        spec = _random_spec(rng, tag, float(rng.choice([0.0, 0.01])), n, d)
        x = rng.standard_normal(d)
        mean = np.mean([sample_gradient(spec, x, i) for i in range(n)], axis=0)
        np.testing.assert_allclose(mean, full_gradient(spec, x), rtol=0, atol=1e-12)


@criterion(4, "projection suite: idempotence, non-expansiveness, variational inequality, dual step")
def test_c04_projections():
    rng = np.random.default_rng(4)
    d = 5
    lo, hi = -rng.random(d) - 0.1, rng.random(d) + 0.1
    cases = [
        (lambda v: project_l2_ball(v, 1.7), L2Ball(1.7, d)),
        (lambda v: project_linf_ball(v, 0.6), LinfBall(0.6, d)),
        (lambda v: project_box(v, lo, hi), Box(lo, hi)),
    ]
    for proj, C in cases:
        for _ in range(1000):
            scale = 10.0 ** rng.uniform(-2, 3)
            u, v = rng.standard_normal(d) * scale, rng.standard_normal(d) * scale
            pu, pv = proj(u), proj(v)
            assert proj(pu).tobytes() == pu.tobytes()
            assert C.contains(pu)
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12
            z = C.project(rng.standard_normal(d))
            assert (u - pu) @ (z - pu) <= 1e-9
    for Y in (LinfBall(0.5, 4), L2Ball(1.2, 4)):
        for _ in range(20):
            y_prev = Y.project(rng.standard_normal(4))
            Fx, s = rng.standard_normal(4) * 3, rng.uniform(0.05, 10)
            y = dual_update(y_prev, Fx, s, Y)
            cand = np.array([Y.project(c) for c in rng.uniform(-3, 3, (1000, 4))])
            obj = cand @ Fx - np.sum((cand - y_prev) ** 2, axis=1) / (2 * s)
            assert y @ Fx - np.sum((y - y_prev) ** 2) / (2 * s) >= obj.max() - 1e-12


@criterion(5, "step sizes and averaging weights match the displayed schedules")
def test_c05_schedules():
    for k in [0, 1, 2, 5, 10, 99, 1000, 12345, 10**6]:
        for L in [0.0, 0.25, 1.0, 7.5]:
            assert abs(step_size("gc", k, L, 0) - 1 / (math.sqrt(k + 1) + L)) <= 1e-15
            for mu in [1e-3, 0.1, 2.0]:
                assert abs(step_size("sc-uniform", k, L, mu) - 1 / (mu * (k + 1) + L)) <= 1e-15
                assert abs(step_size("sc-nonuniform", k, L, mu)
                           - 2 / (mu * (k + 2) + 2 * L)) <= 1e-15
    for t in [0, 1, 3, 10, 1000]:
        for k in range(0, t + 1, max(1, t // 7)):
            assert abs(averaging_weight("gc", k, t) - 1 / (t + 1)) <= 1e-15
            assert abs(averaging_weight("sc-uniform", k, t) - 1 / (t + 1)) <= 1e-15
            assert abs(averaging_weight("sc-nonuniform", k, t)
                       - 2 * (k + 1) / ((t + 1) * (t + 2))) <= 1e-15
    for t in list(range(0, 200)) + [999, 5000, 31415, 99999, 100000]:
        total = 0.0
        for k in range(t + 1):
            total += averaging_weight("sc-nonuniform", k, t)
        assert abs(total - 1.0) <= 1e-12, t


def _rate(spec, ref, regime, mu):
    cfg = SolverConfig(regime, L=spec.lipschitz, mu=mu, iterations=RATE_CHECKPOINTS[-1],
                       checkpoints=RATE_CHECKPOINTS)
    its, gaps = averaged_gap_curve(spec, cfg, ref, RATE_SEEDS)
    return fit_rate(its, gaps)


@criterion(6, "general convex rate on toy GGLR: log-log slope <= -0.40")
def test_c06_general_convex_rate(toy_gglr, ref_gglr):
    t0 = time.perf_counter()
    assert ref_gglr.residual <= 1e-10
    slope = _rate(toy_gglr, ref_gglr, "gc", 0.0)
    print(f"general convex slope {slope:.3f}")
    assert slope <= -0.40
    assert time.perf_counter() - t0 <= 120


@criterion(7, "strongly convex non-uniform rate on toy GGRLR: log-log slope <= -0.75")
def test_c07_strongly_convex_rate(toy_ggrlr, ref_ggrlr):
    t0 = time.perf_counter()
    assert ref_ggrlr.residual <= 1e-10
    slope = _rate(toy_ggrlr, ref_ggrlr, "sc-nonuniform", toy_ggrlr.loss.mu)
    print(f"non-uniform slope {slope:.3f}")
    assert slope <= -0.75
    assert time.perf_counter() - t0 <= 120


@criterion(8, "ordering at t=1e4: non-uniform <= uniform <= general convex (10% slack)")
def test_c08_regime_ordering(toy_ggrlr, ref_ggrlr):
    gaps = {}
    for regime in Regime:
        cfg = SolverConfig(regime, L=toy_ggrlr.lipschitz, mu=toy_ggrlr.loss.mu,
                           iterations=10_001, checkpoints=(10_001,))
        _, g = averaged_gap_curve(toy_ggrlr, cfg, ref_ggrlr, RATE_SEEDS)
        gaps[regime] = g[-1]
    print({r.value: f"{g:.3e}" for r, g in gaps.items()})
    assert gaps[Regime.STRONGLY_CONVEX_NONUNIFORM] <= 1.1 * gaps[Regime.STRONGLY_CONVEX_UNIFORM]
    assert gaps[Regime.STRONGLY_CONVEX_UNIFORM] <= 1.1 * gaps[Regime.GENERAL_CONVEX]


@criterion(9, "high-probability bounds: exceedance rate <= 2 exp(-omega), 200 trials at t=1e3")
def test_c09_high_probability(toy_gglr, ref_gglr, toy_ggrlr, ref_ggrlr):
    t0 = time.perf_counter()
    jobs = min(4, os.cpu_count() or 1)
    cases = [(Regime.GENERAL_CONVEX, toy_gglr, ref_gglr),
             (Regime.STRONGLY_CONVEX_UNIFORM, toy_ggrlr, ref_ggrlr),
             (Regime.STRONGLY_CONVEX_NONUNIFORM, toy_ggrlr, ref_ggrlr)]
    for regime, spec, ref in cases:
        params = bound_params(spec)
        cfg = SolverConfig(regime, L=spec.lipschitz, mu=spec.loss.mu, iterations=1001, seed=99)
        gaps = trial_gaps(spec, cfg, ref, 200, jobs)
        assert np.all(gaps >= -10 * ref.residual)
        for omega in (1.0, 2.0, 3.0):
            rep = tail_report(regime, params, cfg.horizon, omega, gaps, ref)
            print(f"{regime.value} omega={omega:g} bound={rep.bound_value:.3g} "
                  f"max_gap={rep.max_gap:.3g} rate={rep.empirical_rate}")
            assert rep.t == 1000 and rep.trials == 200
            assert rep.empirical_rate <= 2 * math.exp(-omega)
    assert time.perf_counter() - t0 <= 300


@criterion(10, "theorem_bound spot value: general convex, unit params, t=0, omega=1 gives 8")
def test_c10_bound_spot_value():
    p = BoundParams(D_x=1, D_y=1, sigma=1, L=1, mu=1, lambda_max_FtF=1, s=1)
    assert theorem_bound("gc", p, 0, 1.0) == 8.0


@criterion(11, "GADMM: soft-threshold z-step, z == Fx at convergence, costlier iterations")
def test_c11_gadmm(toy_ggrlr, toy_gglr):
    rng = np.random.default_rng(11)
    lam_reg, rho = 0.2, 0.5
    Y = LinfBall(lam_reg, 8)
    Fx, mult = rng.standard_normal(8), rng.standard_normal(8)
    z = gadmm_z_update(Fx, mult, rho, Y)
    w = Fx + mult / rho
    step = 1e-4
    grid = np.arange(-6.0, 6.0 + step, step)
    for i in range(8):
        zi = grid[np.argmin(lam_reg * np.abs(grid) + 0.5 * rho * (grid - w[i]) ** 2)]
        assert abs(zi - z[i]) <= step
    np.testing.assert_array_equal(z, soft_threshold(w, lam_reg / rho))

    tr = gadmm_run(toy_ggrlr, SolverConfig(iterations=5000, checkpoint_every=5000), rho=0.5)
    assert np.linalg.norm(tr.extras["z"] - matvec(toy_ggrlr.F, tr.x)) <= 1e-6

    cfg = SolverConfig("gc", L=toy_gglr.lipschitz, iterations=500)
    assert gadmm_run(toy_gglr, cfg).ops_per_iteration > spdhg_run(toy_gglr, cfg).ops_per_iteration


@criterion(12, "determinism: train CSV and validate-hp JSON byte-identical across runs")
def test_c12_cli_determinism(tmp_path):
    data = tmp_path / "toy.svm"
    save_libsvm(make_toy_dataset(n=100, d=8, seed=5), data)
    csvs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["train", "--data", str(data), "--iters", "2000", "--checkpoint-every", "200",
                     "--seed", "17", "--graph", "chain", "--reference", "--no-timing",
                     "--out", str(out)]) == 0
        csvs.append(out.read_bytes())
    assert csvs[0] == csvs[1]
    reports = []
    for name in ("ta", "tb"):
        out = tmp_path / name
        assert main(["validate-hp", "--data", str(data), "--model", "ggrlr", "--lambda", "0.01",
                     "--graph", "chain", "--regime", "gc,sc-uniform,sc-nonuniform", "--iters", "201",
                     "--trials", "20", "--seed", "8", "--out", str(out)]) == 0
        reports.append({p.name: p.read_bytes() for p in sorted(out.glob("tail_*.json"))})
    assert len(reports[0]) == 9 and reports[0] == reports[1]
    # manifests differ only in the output directory they name
    ma, mb = (json.loads((tmp_path / d / "manifest.json").read_text()) for d in ("ta", "tb"))
    assert {**ma, "out": None} == {**mb, "out": None}


def _splice_path():
    env = os.environ.get("SPLICE_PATH")
    if env:
        return Path(env)
    here = Path(__file__).parent / "data"
    for name in ("splice", "splice.svm", "splice.txt", "splice.gz"):
        if (here / name).exists():
            return here / name
    return None


@criterion(13, "parser: splice parses to n=1000, d=60; malformed lines name their line")
def test_c13_parser():
    fixtures = {
        "1 1:1\n-1 2\n": 2,
        "1 1:1\n\n-1 1:x\n": 3,
        "1 3:1 2:1\n": 1,
        "1 1:1\n1 2:2 2:3\n": 2,
        "1 1:1\n2 1:1\n3 1:1\n": 3,
        "1 1:nan\n": 1,
    }
    for text, line in fixtures.items():
        with pytest.raises(ParseError, match=f"line {line}"):
            parse_libsvm(io.StringIO(text))
    path = _splice_path()
    assert path is not None and path.exists(), (
        "splice dataset not found: set SPLICE_PATH or place it at tests/data/splice")
    ds = load_libsvm(path)
    assert (ds.n, ds.d) == (1000, 60)
