"""Command-line front end: ``train``, ``compare``, ``validate-hp``, ``make-graph``.

Every run writes a JSON manifest of its full configuration next to its
outputs; ``--manifest FILE`` replays one (explicit flags still override).
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .data_io import ParseError, load_libsvm, split
from .problem import build_graph_by_correlation, chain_edges, make_problem
from .solvers import Regime, SolverConfig, SolverDivergence, gadmm_run, lpdhg_run, spdhg_run

log = logging.getLogger("spdhg")

TRACE_HEADER = ["iter", "epoch", "objective", "test_loss", "gap", "elapsed_ms"]
SOLVERS = ("spdhg", "lpdhg", "gadmm")
REGIMES = tuple(r.value for r in Regime)


class UsageError(Exception):
    pass


class RunFailure(Exception):
    pass


@dataclass
class RunManifest:
    command: str = "train"
    data: str = None
    n_features: int = None
    model: str = "gglr"
    solver: list = field(default_factory=lambda: ["spdhg"])
    regime: list = field(default_factory=lambda: ["gc"])
    lam: float = 1e-5
    gamma: float = 1e-2
    s: float = 1.0
    rho: float = 1.0
    radius_x: float = 10.0
    graph: str = None
    threshold: float = 0.5
    max_edges: int = 100
    train_fraction: float = 0.8
    iters: int = 10000
    checkpoint_every: int = 1000
    epochs: int = 5
    seed: int = 0
    repetitions: int = 10
    jobs: int = 1
    lpdhg_step: str = "constant"
    reference: bool = False
    reference_tol: float = 1e-10
    reference_iters: int = 1_000_000
    omega: list = field(default_factory=lambda: [1.0, 2.0, 3.0])
    trials: int = 200
    timing: bool = True
    out: str = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**raw)

    def validate(self):
        if self.model not in ("gglr", "ggrlr"):
            raise UsageError(f"--model must be gglr or ggrlr, got {self.model!r}")
        for s in self.solver:
            if s not in SOLVERS:
                raise UsageError(f"unknown solver {s!r}")
        for r in self.regime:
            if r not in REGIMES:
                raise UsageError(f"unknown regime {r!r}")
        if self.model == "gglr" and any(r != "gc" for r in self.regime):
            raise UsageError("strongly convex regimes need --model ggrlr (mu = gamma > 0)")
        if self.model == "ggrlr" and not self.gamma > 0:
            raise UsageError("--gamma must be positive for ggrlr")
        positive = dict(lam=self.lam, s=self.s, rho=self.rho, radius_x=self.radius_x,
                        iters=self.iters, checkpoint_every=self.checkpoint_every,
                        epochs=self.epochs, repetitions=self.repetitions, jobs=self.jobs,
                        trials=self.trials, reference_tol=self.reference_tol)
        for name, v in positive.items():
            if not v > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive, got {v}")
        if not all(o > 0 for o in self.omega):
            raise UsageError("--omega values must be positive")
        if not 0 < self.threshold < 1:
            raise UsageError("--threshold must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise UsageError("--train-fraction must lie in (0, 1)")
        if self.lpdhg_step not in ("constant", "schedule"):
            raise UsageError("--lpdhg-step must be constant or schedule")
        if self.data is None:
            raise UsageError("--data is required")


# -- helpers -------------------------------------------------------------------------

def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def _load(m):
    if not os.path.exists(m.data):
        raise UsageError(f"data file not found: {m.data}")
    try:
        return load_libsvm(m.data, m.n_features)
    except ParseError as exc:
        raise UsageError(f"{m.data}: {exc}") from None


def read_edges(path, d):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise UsageError(f"{path}:{lineno}: expected 'i j [corr]'")
            edges.append((int(parts[0]), int(parts[1])))
    return edges


def _edges(m, train):
    if m.graph == "chain":
        return chain_edges(train.d)
    if m.graph:
        if not os.path.exists(m.graph):
            raise UsageError(f"graph file not found: {m.graph}")
        return read_edges(m.graph, train.d)
    if train.d < 2:
        return []
    return [e[:2] for e in build_graph_by_correlation(train, m.threshold, m.max_edges)]


def _problem(m, train):
    return make_problem(train, m.model, lam=m.lam, gamma=m.gamma,
                        edges=_edges(m, train), radius_x=m.radius_x)


def _config(m, spec, regime, iterations, checkpoint_every, seed):
    return SolverConfig(Regime(regime), s=m.s, L=spec.lipschitz, mu=spec.loss.mu,
                        iterations=iterations, seed=seed, checkpoint_every=checkpoint_every)


def _run(m, solver, spec, cfg, test, ref):
    if solver == "spdhg":
        return spdhg_run(spec, cfg, test, ref)
    if solver == "lpdhg":
        return lpdhg_run(spec, cfg, test, ref, step=m.lpdhg_step)
    return gadmm_run(spec, cfg, rho=m.rho, test=test, reference=ref)


def _reference(m, spec):
    try:
        return analysis.compute_reference(spec, m.reference_iters, m.reference_tol, s=m.s)
    except analysis.ReferenceNotConverged as exc:
        raise RunFailure(str(exc)) from None


def _trace_rows(records, timing):
    for r in records:
        yield [_fmt(r.iteration), _fmt(r.epoch), _fmt(r.objective), _fmt(r.test_loss),
               _fmt(r.gap), _fmt(r.elapsed_ms) if timing else ""]


def _write_manifest(m, path):
    Path(path).write_text(m.to_json())


def _manifest_path(out):
    p = Path(out)
    return p.with_name(p.stem + ".manifest.json")


# -- commands ------------------------------------------------------------------------

def cmd_train(m):
    ds = _load(m)
    parts = split(ds, m.train_fraction, m.seed)
    spec = _problem(m, parts.train)
    ref = _reference(m, spec) if m.reference else None
    solver = m.solver[0]
    cfg = _config(m, spec, m.regime[0], m.iters, m.checkpoint_every, m.seed)
    out = m.out or "trace.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    code = 0
    try:
        trace = _run(m, solver, spec, cfg, parts.test, ref)
    except SolverDivergence as exc:
        log.error("%s solver aborted: %s", solver, exc)
        trace, code = exc.trace, 1
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(_trace_rows(trace.records, m.timing))
    _write_manifest(m, _manifest_path(out))
    log.info("wrote %s (%d checkpoints)", out, len(trace.records))
    return code


def _compare_task(args):
    m, solver, regime, spec, test, ref, seed = args
    n = spec.n
    if solver == "spdhg":
        cfg = _config(m, spec, regime, m.epochs * n, n, seed)
    else:
        cfg = _config(m, spec, regime, m.epochs, 1, seed)
    return _run(m, solver, spec, cfg, test, ref).records


def cmd_compare(m):
    methods = []
    for solver in m.solver:
        for regime in (m.regime if solver != "gadmm" else m.regime[:1]):
            label = solver if solver == "gadmm" else f"{solver}-{regime}"
            if label not in [x[0] for x in methods]:
                methods.append((label, solver, regime))
    if len(methods) < 2:
        raise UsageError("compare needs at least two solver/regime combinations")
    ds = _load(m)
    parts = split(ds, m.train_fraction, m.seed)
    spec = _problem(m, parts.train)
    ref = _reference(m, spec) if m.reference else None
    seeds = [analysis.trial_seed(m.seed, r) for r in range(m.repetitions)]
    tasks = [(m, solver, regime, spec, parts.test, ref, sd)
             for _, solver, regime in methods for sd in seeds]
    try:
        results = analysis._map(_compare_task, tasks, m.jobs)
    except SolverDivergence as exc:
        log.error("solver aborted: %s", exc)
        return 1
    out = m.out or "compare.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + TRACE_HEADER)
        for j, (label, _, _) in enumerate(methods):
            runs = results[j * len(seeds):(j + 1) * len(seeds)]
            for pos in range(len(runs[0])):
                recs = [run[pos] for run in runs]
                mean = {k: float(np.mean([getattr(r, k) for r in recs]))
                        for k in ("objective", "test_loss", "gap", "elapsed_ms")}
                w.writerow([label, _fmt(recs[0].iteration), _fmt(recs[0].epoch),
                            _fmt(mean["objective"]), _fmt(mean["test_loss"]), _fmt(mean["gap"]),
                            _fmt(mean["elapsed_ms"]) if m.timing else ""])
    _write_manifest(m, _manifest_path(out))
    log.info("wrote %s (%d methods x %d repetitions)", out, len(methods), len(seeds))
    return 0


def cmd_validate_hp(m):
    ds = _load(m)
    spec = _problem(m, ds)
    ref = _reference(m, spec)
    params = analysis.bound_params(spec, m.s, seed=m.seed)
    out = Path(m.out or "tail_reports")
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    for regime in m.regime:
        cfg = _config(m, spec, regime, m.iters, m.iters, m.seed)
        gaps = analysis.trial_gaps(spec, cfg, ref, m.trials, m.jobs)
        for omega in m.omega:
            try:
                rep = analysis.tail_report(regime, params, cfg.horizon, omega, gaps, ref)
            except ValueError as exc:
                log.error("%s", exc)
                return 1
            (out / f"tail_{regime}_omega{omega:g}.json").write_text(rep.to_json())
            status = "ok" if rep.passed else "EXCEEDED"
            print(f"{regime:14s} omega={omega:g} bound={rep.bound_value:.4g} "
                  f"rate={rep.empirical_rate:.4f} cap={rep.theoretical_cap:.4f} {status}")
            failed |= not rep.passed
    _write_manifest(m, out / "manifest.json")
    return 1 if failed else 0


def cmd_make_graph(m):
    ds = _load(m)
    if ds.d < 2:
        log.error("need at least two features to build a graph (d=%d)", ds.d)
        return 1
    edges = build_graph_by_correlation(ds, m.threshold, m.max_edges)
    out = m.out or "graph.txt"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for i, j, c in edges:
            fh.write(f"{i} {j} {c:.17g}\n")
    _write_manifest(m, _manifest_path(out))
    log.info("wrote %d edges to %s", len(edges), out)
    return 0


COMMANDS = {
    "train": cmd_train,
    "compare": cmd_compare,
    "validate-hp": cmd_validate_hp,
    "make-graph": cmd_make_graph,
}


# -- argument parsing ------------------------------------------------------------------

def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    a = shared.add_argument
    a("--manifest", help="replay a saved manifest; explicit flags override it")
    a("--data", default=S, help="libsvm file (.gz accepted)")
    a("--n-features", dest="n_features", type=int, default=S)
    a("--model", default=S, choices=["gglr", "ggrlr"])
    a("--solver", default=S, type=_csv_list(str), help="spdhg, lpdhg, gadmm (comma list)")
    a("--regime", default=S, type=_csv_list(str), help="gc, sc-uniform, sc-nonuniform")
    a("--lambda", dest="lam", default=S, type=float)
    a("--gamma", default=S, type=float)
    a("--s", default=S, type=float, help="dual proximal parameter")
    a("--rho", default=S, type=float, help="GADMM penalty / step")
    a("--radius-x", dest="radius_x", default=S, type=float)
    a("--graph", default=S, help="edge-list file, or 'chain'; default: correlation graph")
    a("--threshold", default=S, type=float, help="|correlation| threshold for graphs")
    a("--max-edges", dest="max_edges", default=S, type=int)
    a("--train-fraction", dest="train_fraction", default=S, type=float)
    a("--iters", default=S, type=int)
    a("--checkpoint-every", dest="checkpoint_every", default=S, type=int)
    a("--epochs", default=S, type=int, help="epoch budget for compare")
    a("--seed", default=S, type=int)
    a("--repetitions", default=S, type=int)
    a("--jobs", default=S, type=int)
    a("--lpdhg-step", dest="lpdhg_step", default=S, choices=["constant", "schedule"])
    a("--reference", default=S, action="store_true", help="compute a reference and fill the gap column")
    a("--reference-tol", dest="reference_tol", default=S, type=float)
    a("--reference-iters", dest="reference_iters", default=S, type=int)
    a("--omega", default=S, type=_csv_list(float))
    a("--trials", default=S, type=int)
    a("--no-timing", dest="timing", default=S, action="store_false",
      help="leave elapsed_ms empty so outputs are byte-reproducible")
    a("--out", default=S)
    a("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spdhg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[shared])
    return parser


def manifest_from_args(ns):
    if ns.manifest:
        path = Path(ns.manifest)
        if not path.exists():
            raise UsageError(f"manifest not found: {path}")
        m = RunManifest.from_json(path.read_text())
    else:
        m = RunManifest()
    m.command = ns.command
    for f in fields(RunManifest):
        if f.name != "command" and hasattr(ns, f.name):
            setattr(m, f.name, getattr(ns, f.name))
    return m


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        m = manifest_from_args(ns)
        m.validate()
        return COMMANDS[ns.command](m)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spdhg {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"spdhg {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
