"""Iterative solution of the discrete equations on one time slab.

The sweep visits elements in creation order and updates each one in place
from the latest values of everything it depends on, so end values move
forward through the slab within a single sweep.  Stiff slabs are handled
by damping the update per degree of freedom (a diagonal modified Newton
step) or with a scalar damping factor adapted to the observed convergence,
and as a last resort by Newton's method on the full slab system.

The sweep kernel is plain numba-compatible Python.  It is compiled when
the system provides a numba right-hand side kernel and interpreted
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, SingularSlabError
from .timeslab import _node_time, build_dependencies, build_plan

__all__ = [
    "SolverConfig",
    "SolveReport",
    "STRATEGIES",
    "damped_update",
    "solve_slab",
    "newton_solve_slab",
    "auto_strategy",
]

DIRECT, DIAGONAL, SCALAR = 0, 1, 2
STRATEGIES = ("direct", "damped-diagonal", "damped-scalar", "newton", "auto")
_CODES = {"direct": DIRECT, "damped-diagonal": DIAGONAL, "damped-scalar": SCALAR}


@dataclass
class SolverConfig:
    strategy: str = "auto"
    max_global_sweeps: int = 100
    max_local_iterations: int = 2
    tol_fp: float = 1e-12
    divergence_factor: float = 10.0
    newton_max_dofs: int = 2000

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.max_global_sweeps < 1 or self.max_local_iterations < 1:
            raise ConfigurationError("iteration counts must be at least 1")
        if not (self.tol_fp > 0 and self.divergence_factor > 1):
            raise ConfigurationError("tol_fp must be positive and divergence_factor > 1")


@dataclass
class SolveReport:
    """Outcome of one slab solve.

    ``sweeps`` counts global iterations (Newton iterations for the newton
    strategy), ``local_iterations`` the element updates summed over all
    sweeps.  ``signal`` is None, "stiff" (the iteration diverged) or
    "nonconvergent" (sweep budget exhausted).
    """

    converged: bool
    sweeps: int
    local_iterations: int
    increment: float
    strategy: str
    signal: str | None = None
    n_elements: int = 0
    escalations: list = field(default_factory=list)

    @property
    def local_per_element(self):
        visits = self.sweeps * self.n_elements
        return self.local_iterations / visits if visits else 0.0


def damped_update(xi, g, alpha):
    """(1 - alpha) xi + alpha g, with alpha scalar or per degree of freedom."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0) or np.any(alpha > 1):
        raise ConfigurationError("damping factors must lie in (0, 1]")
    xi = np.asarray(xi, dtype=np.float64)
    return (1.0 - alpha) * xi + alpha * np.asarray(g, dtype=np.float64)


def _sweep(jx, start, last_incr, ei, es, sa, sb, ee, u_start, ptr, comp, src, basis,
           W, nodes, is_cg, strategy, alpha, max_local, tol, rhs, params, x):
    ne = ei.shape[0]
    Q = nodes.shape[0]
    m0 = 1 if is_cg else 0
    fvals = np.empty(Q)
    diag = np.zeros(Q)
    local_total = 0
    for e in range(ne):
        i = ei[e]
        s = es[e]
        a = sa[s]
        b = sb[s]
        k = b - a
        base = e * Q
        left = jx[ee[e] * Q + Q - 1] if ee[e] >= 0 else u_start[i]
        if is_cg:
            jx[base] = left
        incr = 0.0
        for it in range(max_local):
            local_total += 1
            for n in range(Q):
                t = _node_time(a, b, nodes[n])
                for p in range(ptr[base + n], ptr[base + n + 1]):
                    d = src[p]
                    if d < 0:
                        x[comp[p]] = u_start[comp[p]]
                    else:
                        v = 0.0
                        for j in range(Q):
                            v += jx[d * Q + j] * basis[p * Q + j]
                        x[comp[p]] = v
                fvals[n] = rhs(i, x, t, params)
                if strategy == 1 and it == 0:
                    xi_ = x[i]
                    h = 1e-7 * (1.0 + abs(xi_))
                    x[i] = xi_ + h
                    fp = rhs(i, x, t, params)
                    x[i] = xi_ - h
                    fm = rhs(i, x, t, params)
                    x[i] = xi_
                    diag[n] = (fp - fm) / (2.0 * h)
            incr = 0.0
            for m in range(m0, Q):
                g = 0.0
                for n in range(Q):
                    g += W[m, n] * fvals[n]
                g = left + k * g
                old = jx[base + m]
                if strategy == 1:
                    den = 1.0 - k * W[m, m] * diag[m]
                    w = 1.0 / den if den > 1.0 else 1.0
                    new = old + w * (g - old)
                elif strategy == 2:
                    new = old + alpha * (g - old)
                else:
                    new = g
                dv = abs(new - old)
                if not dv <= incr:
                    incr = dv
                jx[base + m] = new
            if incr <= tol:
                break
        last_incr[e] = incr
    # elements read values of later elements that changed afterwards
    measure = 0.0
    for e in range(ne):
        worst = last_incr[e]
        for p in range(ptr[e * Q], ptr[e * Q + Q]):
            d = src[p]
            if d > e:
                for j in range(Q):
                    dv = abs(jx[d * Q + j] - start[d * Q + j])
                    if not dv <= worst:
                        worst = dv
        if not worst <= measure:
            measure = worst
    return measure, local_total


_sweep_jit = numba.njit(_sweep)


def _image(jx, out, ei, es, sa, sb, ee, u_start, ptr, comp, src, basis, W, nodes, is_cg,
           rhs, params, x):
    """Fixed-point image g(xi) of every degree of freedom (no in-place updates)."""
    ne = ei.shape[0]
    Q = nodes.shape[0]
    fvals = np.empty(Q)
    for e in range(ne):
        i = ei[e]
        s = es[e]
        a = sa[s]
        b = sb[s]
        k = b - a
        base = e * Q
        left = jx[ee[e] * Q + Q - 1] if ee[e] >= 0 else u_start[i]
        for n in range(Q):
            t = _node_time(a, b, nodes[n])
            for p in range(ptr[base + n], ptr[base + n + 1]):
                d = src[p]
                if d < 0:
                    x[comp[p]] = u_start[comp[p]]
                else:
                    v = 0.0
                    for j in range(Q):
                        v += jx[d * Q + j] * basis[p * Q + j]
                    x[comp[p]] = v
            fvals[n] = rhs(i, x, t, params)
        for m in range(Q):
            g = 0.0
            for n in range(Q):
                g += W[m, n] * fvals[n]
            out[base + m] = left + k * g
        if is_cg:
            out[base] = left


_image_jit = numba.njit(_image)


def _assemble(jx, ei, es, sa, sb, ee, u_start, ptr, comp, src, basis, W, nodes, is_cg,
              rhs, params, x, jac, use_fd):
    """Dense Jacobian of xi - g(xi); pointwise derivatives analytic or central differences."""
    ne = ei.shape[0]
    Q = nodes.shape[0]
    nd = ne * Q
    A = np.zeros((nd, nd))
    for r in range(nd):
        A[r, r] = 1.0
    dfdx = np.zeros(Q * 64)
    for e in range(ne):
        i = ei[e]
        s = es[e]
        a = sa[s]
        b = sb[s]
        k = b - a
        base = e * Q
        for m in range(Q):
            if ee[e] >= 0:
                A[base + m, ee[e] * Q + Q - 1] -= 1.0
        for n in range(Q):
            t = _node_time(a, b, nodes[n])
            lo = ptr[base + n]
            hi = ptr[base + n + 1]
            for p in range(lo, hi):
                d = src[p]
                if d < 0:
                    x[comp[p]] = u_start[comp[p]]
                else:
                    v = 0.0
                    for j in range(Q):
                        v += jx[d * Q + j] * basis[p * Q + j]
                    x[comp[p]] = v
            if dfdx.shape[0] < hi - lo:
                dfdx = np.zeros(2 * (hi - lo))
            for p in range(lo, hi):
                c = comp[p]
                if use_fd:
                    xc = x[c]
                    h = 1e-6 * (1.0 + abs(xc))
                    x[c] = xc + h
                    fp = rhs(i, x, t, params)
                    x[c] = xc - h
                    fm = rhs(i, x, t, params)
                    x[c] = xc
                    dfdx[p - lo] = (fp - fm) / (2.0 * h)
                else:
                    dfdx[p - lo] = jac(i, c, x, t)
            for p in range(lo, hi):
                d = src[p]
                if d < 0:
                    continue
                for m in range(Q):
                    if is_cg and m == 0:
                        continue
                    coef = k * W[m, n] * dfdx[p - lo]
                    for j in range(Q):
                        A[base + m, d * Q + j] -= coef * basis[p * Q + j]
    return A


_assemble_jit = numba.njit(_assemble)


class _Context:
    """Arrays and callables shared by the kernels for one slab solve."""

    def __init__(self, slab, sys, table, plan=None):
        if plan is None:
            if slab.ed[-1] == 0 and slab.de.size == 0:
                build_dependencies(slab, sys.sparsity, table)
            plan = build_plan(slab, sys.sparsity, table)
        self.slab = slab
        self.sys = sys
        self.table = table
        self.plan = plan
        self.compiled = sys.kernel is not None
        if self.compiled:
            self.rhs = sys.kernel
        else:
            f = sys.rhs
            self.rhs = lambda i, x, t, p: f(i, x, t)
        self.x = np.zeros(sys.N)
        self.W = np.ascontiguousarray(table.weights)
        self.nodes = np.ascontiguousarray(table.nodes)

    def common(self):
        s, p = self.slab, self.plan
        return (s.ei, s.es, s.sa, s.sb, s.ee, s.u_start, p.ptr, p.comp, p.src, p.basis,
                self.W, self.nodes, self.table.is_cg)

    def sweep(self, strategy, alpha, max_local, tol, start, last_incr):
        fn = _sweep_jit if self.compiled else _sweep
        return fn(self.slab.jx, start, last_incr, *self.common(), strategy, alpha, max_local, tol,
                  self.rhs, self.sys.params, self.x)

    def image(self, jx):
        out = np.empty_like(jx)
        fn = _image_jit if self.compiled else _image
        s, p = self.slab, self.plan
        fn(jx, out, s.ei, s.es, s.sa, s.sb, s.ee, s.u_start, p.ptr, p.comp, p.src, p.basis,
           self.W, self.nodes, self.table.is_cg, self.rhs, self.sys.params, self.x)
        return out

    def jacobian(self, jx):
        s, p = self.slab, self.plan
        args = (jx, s.ei, s.es, s.sa, s.sb, s.ee, s.u_start, p.ptr, p.comp, p.src, p.basis,
                self.W, self.nodes, self.table.is_cg, self.rhs, self.sys.params, self.x)
        if self.sys.jacobian is not None:
            return _assemble(*args, self.sys.jacobian, False)
        if self.compiled:
            return _assemble_jit(*args, _no_jac, True)
        return _assemble(*args, None, True)


@numba.njit
def _no_jac(i, j, x, t):
    return 0.0


def _fixed_point(ctx, code, cfg):
    slab = ctx.slab
    jx = slab.jx
    ne = slab.n_elements
    start = np.empty_like(jx)
    last_incr = np.zeros(ne)
    alpha = 1.0
    calm = 0
    best = np.inf
    prev = np.inf
    local = 0
    measure = np.inf
    for sweep in range(1, cfg.max_global_sweeps + 1):
        tol = cfg.tol_fp * (1.0 + (np.max(np.abs(jx)) if jx.size else 0.0))
        start[:] = jx
        measure, nloc = ctx.sweep(code, alpha, cfg.max_local_iterations, tol, start, last_incr)
        local += nloc
        if not np.isfinite(measure) or not np.all(np.isfinite(jx)):
            return SolveReport(False, sweep, local, np.inf, "", "stiff", ne)
        if measure <= tol:
            return SolveReport(True, sweep, local, measure, "", None, ne)
        if code == SCALAR:
            if measure > prev:
                # discard the diverging sweep and retry it more strongly damped
                jx[:] = start
                alpha *= 0.5
                calm = 0
                if alpha < 1e-8:
                    return SolveReport(False, sweep, local, measure, "", "stiff", ne)
                continue
            else:
                calm += 1
                if calm == 3:
                    alpha = min(1.0, 2.0 * alpha)
                    calm = 0
        elif sweep >= 2 and measure > cfg.divergence_factor * best:
            return SolveReport(False, sweep, local, measure, "", "stiff", ne)
        best = min(best, measure)
        prev = measure
    return SolveReport(False, cfg.max_global_sweeps, local, measure, "", "nonconvergent", ne)


def _newton(ctx, cfg):
    slab = ctx.slab
    nd = slab.jx.size
    if nd > cfg.newton_max_dofs:
        raise ConfigurationError(
            f"slab has {nd} degrees of freedom (> {cfg.newton_max_dofs}); use a fixed-point strategy")
    jx = slab.jx
    ne = slab.n_elements
    F = jx - ctx.image(jx)
    norm = np.max(np.abs(F)) if nd else 0.0
    for it in range(cfg.max_global_sweeps + 1):
        tol = cfg.tol_fp * (1.0 + np.max(np.abs(jx)))
        if not np.isfinite(norm):
            return SolveReport(False, it, 0, np.inf, "newton", "stiff", ne)
        if norm <= tol:
            return SolveReport(True, it, 0, norm, "newton", None, ne)
        if it == cfg.max_global_sweeps:
            break
        A = ctx.jacobian(jx.copy())
        try:
            step = np.linalg.solve(A, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularSlabError(str(exc)) from None
        if not np.all(np.isfinite(step)):
            raise SingularSlabError("non-finite Newton step")
        jx += step
        F = jx - ctx.image(jx)
        norm = np.max(np.abs(F))
    return SolveReport(False, cfg.max_global_sweeps, 0, norm, "newton", "nonconvergent", ne)


def newton_solve_slab(slab, sys, table, cfg=None, plan=None):
    """Solve the slab system with Newton's method and a dense Jacobian."""
    cfg = cfg or SolverConfig(strategy="newton")
    return _newton(_Context(slab, sys, table, plan), cfg)


def auto_strategy(current, signal, diagonal=True):
    """Next strategy after ``signal`` (None keeps ``current``; exhausted -> None).

    Escalation runs direct -> damped (diagonal when a Jacobian diagonal is
    available, scalar otherwise) -> newton and never steps back.
    """
    if signal is None:
        return current
    damped = "damped-diagonal" if diagonal else "damped-scalar"
    if current == "direct":
        return damped
    if current in ("damped-diagonal", "damped-scalar"):
        return "newton"
    return None


def solve_slab(slab, sys, table, cfg=None, plan=None, start="direct"):
    """Solve the discrete equations on ``slab`` in place.

    The slab must be seeded (``slab.seed``).  With the ``auto`` strategy the
    solve starts from ``start`` and escalates on stiffness or
    non-convergence signals, restoring the seed before each new attempt.
    """
    cfg = cfg or SolverConfig()
    ctx = _Context(slab, sys, table, plan)
    if cfg.strategy != "auto":
        report = _run(ctx, cfg.strategy, cfg)
        report.escalations = [cfg.strategy]
        return report
    seed = slab.jx.copy()
    strategy = start
    tried = []
    total_sweeps = total_local = 0
    while strategy is not None:
        tried.append(strategy)
        slab.jx[:] = seed
        try:
            report = _run(ctx, strategy, cfg)
        except ConfigurationError:
            report = SolveReport(False, 0, 0, np.inf, strategy, "nonconvergent", slab.n_elements)
        except SingularSlabError:
            report = SolveReport(False, 0, 0, np.inf, strategy, "stiff", slab.n_elements)
        total_sweeps += report.sweeps
        total_local += report.local_iterations
        if report.converged:
            break
        strategy = auto_strategy(strategy, report.signal)
    report.escalations = tried
    report.sweeps = total_sweeps
    report.local_iterations = total_local
    return report


def _run(ctx, strategy, cfg):
    if strategy == "newton":
        return _newton(ctx, cfg)
    report = _fixed_point(ctx, _CODES[strategy], cfg)
    report.strategy = strategy
    return report
