"""Benchmark driver: runs a problem over methods and tolerances and writes reports.

Output layout under ``out``::

    results.csv                   one row per run
    snapshots/<run>_t<time>.dat   x and U(x, t)
    steps/<run>_t<time>.dat       x and the local step k(x, t)
    slabs/<run>.jsonl             sub-slab trees of the slabs at the snapshot times (trace only)
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import csr_matrix

from .errors import ConfigurationError, DegenerateStepError, IntegrationFailure
from .integrator import IntegratorConfig, integrate
from .problems import PROBLEM_KINDS, cfl_steps, make_problem
from .solver import SolverConfig
from .timeslab import slab_tree

__all__ = ["BenchmarkCase", "RunRow", "run_benchmark", "emit_plotdata", "CSV_HEADER", "format_table"]

CSV_HEADER = ["problem", "method", "q", "mode", "tol", "n_components", "error", "walltime_s",
              "slabs", "rejected", "iters_global", "iters_local", "mu"]

REFERENCES = ("radau", "mono", "none")


@dataclass
class BenchmarkCase:
    """One benchmark: a problem, the methods to compare and the tolerances or mesh sizes.

    ``sizes`` is a list of (mesh points, domain length) pairs; an empty list
    runs the problem's own parameters once.  In ``fixed`` mode each
    component gets the constant step ``cfl * h`` (or ``k_max`` when the
    problem has no mesh), and ``tols`` is ignored.
    """

    problem: str
    parameters: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: [("mcg", 1), ("cg", 1)])
    mode: str = "adaptive"
    tols: list = field(default_factory=lambda: [1e-4])
    sizes: list = field(default_factory=list)
    out: str = "bench-out"
    theta: float = 0.5
    k_max: float = None
    cfl: float = 0.1
    snapshot_times: list = None
    reference: str = "radau"
    trace: bool = False
    deterministic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEM_KINDS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEM_KINDS)}")
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        for m, q in self.methods:
            if m not in ("mcg", "mdg", "cg", "dg"):
                raise ConfigurationError(f"unknown method {m!r}")
        if self.mode not in ("adaptive", "fixed"):
            raise ConfigurationError("mode must be 'adaptive' or 'fixed'")
        if self.mode == "adaptive" and (not self.tols or min(self.tols) <= 0):
            raise ConfigurationError("adaptive mode needs positive tolerances")
        if self.reference not in REFERENCES:
            raise ConfigurationError(f"reference must be one of {REFERENCES}")


@dataclass
class RunRow:
    problem: str
    method: str
    q: int
    mode: str
    tol: float
    n_components: int
    error: float
    walltime_s: float
    slabs: int
    rejected: int
    iters_global: float
    iters_local: float
    mu: float
    converged: bool = True
    n_elements: int = 0
    files: list = field(default_factory=list)

    def csv_values(self):
        tol = "" if self.tol is None else f"{self.tol:.6e}"
        return [self.problem, self.method, str(self.q), self.mode, tol, str(self.n_components),
                f"{self.error:.6e}", f"{self.walltime_s:.3f}", str(self.slabs), str(self.rejected),
                f"{self.iters_global:.4f}", f"{self.iters_local:.4f}", f"{self.mu:.6f}"]


def _label(value):
    return f"{value:.6g}".replace("+", "").replace("-", "m").replace(".", "p")


def emit_plotdata(trace, times, coords, directory, prefix, kind="solution"):
    """Write one two-column (x, value) file per sample time; returns the paths.

    ``kind`` is ``solution`` for U(x, t) or ``steps`` for the local step of
    each component at t.  Only the first ``len(coords)`` components are
    written (the displacement block for first-order wave systems).
    """
    if kind not in ("solution", "steps"):
        raise ConfigurationError("kind must be 'solution' or 'steps'")
    coords = np.asarray(coords, dtype=np.float64)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for t in times:
        t = float(t)
        if not 0.0 <= t <= trace.T:
            raise ValueError(f"sample time {t} outside [0, {trace.T}]")
        values = trace.state(t) if kind == "solution" else trace.local_steps(t)
        path = os.path.join(directory, f"{prefix}_t{_label(t)}.dat")
        with open(path, "w") as fh:
            fh.write(f"# x {'U' if kind == 'solution' else 'k'} t={t:.6g}\n")
            for x, v in zip(coords, values[:coords.shape[0]]):
                fh.write(f"{x:.12e} {v:.12e}\n")
        paths.append(path)
    return paths


def _reference(sys, case, method, q, tol, steps):
    if case.reference == "none":
        return None
    if case.reference == "mono":
        if case.mode == "adaptive":
            cfg = IntegratorConfig(method=method[-2:], q=q, mode="mono-adaptive", TOL=tol / 100.0,
                                   theta=case.theta, k_max=case.k_max, retain_trace=False)
        else:
            cfg = IntegratorConfig(method=method[-2:], q=q, mode="mono-fixed", steps=np.min(steps) / 4,
                                   retain_trace=False)
        return integrate(sys, cfg)[1].u_end
    rows, cols = [], []
    for i in range(sys.N):
        for j in sys.sparsity.row(i):
            rows.append(i)
            cols.append(j)
    pattern = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(sys.N, sys.N))
    sol = solve_ivp(lambda t, u: sys.evaluate(u, t), (0.0, sys.T), sys.u0, method="Radau",
                    rtol=1e-10, atol=1e-12, jac_sparsity=pattern)
    if not sol.success:
        raise IntegrationFailure(f"reference solve failed: {sol.message}")
    return sol.y[:, -1]


def _systems(case):
    if not case.sizes:
        yield make_problem(case.problem, **case.parameters)
        return
    for n, length in case.sizes:
        params = dict(case.parameters)
        if case.problem == "reaction-diffusion-1d":
            params.update(N=int(n), L=float(length))
        elif case.problem == "wave-1d-refined":
            params.update(n_base=int(n), length=float(length))
        else:
            params.update(N=int(n))
        yield make_problem(case.problem, **params)


def run_benchmark(case, log=None):
    """Run every (system, method, tolerance) combination; returns the rows.

    Writes ``results.csv`` and the snapshot and step-field files.  A run
    that fails is reported with ``converged = False`` and a NaN error.
    """
    os.makedirs(case.out, exist_ok=True)
    rows = []
    for sys in _systems(case):
        if sys.seed != case.seed:
            sys = replace(sys, seed=case.seed)
        times = case.snapshot_times
        if times is None:
            times = list(np.linspace(0.0, sys.T, 5))
        coords = sys.coords if sys.coords is not None else np.arange(sys.N, dtype=np.float64)
        steps = None
        if case.mode == "fixed":
            steps = cfl_steps(sys, case.cfl) if sys.local_h is not None else case.k_max
            if steps is None:
                raise ConfigurationError("fixed mode needs a mesh problem or k_max")
        tols = case.tols if case.mode == "adaptive" else [None]
        refs = {}
        for method, q in case.methods:
            for tol in tols:
                cfg = IntegratorConfig.from_method(
                    method, q, adaptive=case.mode == "adaptive", TOL=tol if tol else 1.0,
                    theta=case.theta, k_max=case.k_max, steps=steps, solver=SolverConfig())
                run = f"{sys.name}_N{sys.N}_{method}{q}" + (f"_tol{_label(tol)}" if tol else "_fixed")
                row = RunRow(sys.name, method, q, cfg.mode, tol, sys.N, np.nan, 0.0, 0, 0, 0.0, 0.0, np.nan)
                try:
                    trace, rep = integrate(sys, cfg)
                except (IntegrationFailure, DegenerateStepError) as exc:
                    row.converged = False
                    if log:
                        log(f"{run}: failed ({exc})")
                    rows.append(row)
                    continue
                key = "radau" if case.reference == "radau" else (method[-2:], q, tol)
                if key not in refs:
                    refs[key] = _reference(sys, case, method, q, tol or 0.0, steps)
                ref = refs[key]
                row.error = float(np.max(np.abs(rep.u_end - ref))) if ref is not None else np.nan
                row.walltime_s = 0.0 if case.deterministic else rep.walltime
                row.slabs, row.rejected, row.n_elements = rep.M, rep.rejected, rep.n_elements
                row.iters_global, row.iters_local, row.mu = rep.iters_global, rep.iters_local, rep.mu
                row.files += emit_plotdata(trace, times, coords, os.path.join(case.out, "snapshots"), run)
                row.files += emit_plotdata(trace, times, coords, os.path.join(case.out, "steps"), run,
                                           kind="steps")
                if case.trace:
                    row.files.append(_dump_slabs(trace, times, os.path.join(case.out, "slabs"), run))
                rows.append(row)
                if log:
                    log(f"{run}: M={rep.M} rejected={rep.rejected} mu={rep.mu:.3f}")
    _write_csv(rows, os.path.join(case.out, "results.csv"))
    return rows


def _dump_slabs(trace, times, directory, run):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{run}.jsonl")
    seen = []
    for t in times:
        rec = trace._record(t)
        if rec not in seen:
            seen.append(rec)
    with open(path, "w") as fh:
        for rec in seen:
            fh.write(json.dumps(slab_tree(rec)) + "\n")
    return path


def _write_csv(rows, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_values())
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def format_table(rows):
    """Plain-text summary table of benchmark rows."""
    head = f"{'method':>7} {'tol':>10} {'N':>6} {'error':>11} {'time[s]':>8} {'M':>7} {'rej':>6} {'n':>7} {'mu':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        tol = "-" if r.tol is None else f"{r.tol:.1e}"
        name = f"{r.method}({r.q})"
        lines.append(f"{name:>7} {tol:>10} {r.n_components:>6} {r.error:>11.3e} {r.walltime_s:>8.2f} "
                     f"{r.slabs:>7} {r.rejected:>6} {r.iters_global:>7.2f} {r.mu:>8.2f}")
    return "\n".join(lines)
