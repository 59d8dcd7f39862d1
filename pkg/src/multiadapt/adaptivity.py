"""Residuals, the time-step law and step-size control.

The residual of component i on an element is R_i = dU_i/dt - f_i(U, t).
Its maximum is sampled at the quadrature nodes and the element midpoint;
for dG the jump at the left end-point divided by the step is included.
A new step follows from

    k = (TOL / (C N S r)) ** (1 / p),   p = q (cG) or q + 1 (dG),

and is smoothed against the previous step by a weighted harmonic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, DegenerateStepError
from .methods import lagrange_basis, lagrange_derivative
from .timeslab import _local_tau, _locate, _node_time, create_time_slab

__all__ = [
    "StepState",
    "element_residuals",
    "residual",
    "step_from_residual",
    "controller",
    "initial_step",
    "accept_or_reject",
    "Decision",
    "adaptive_solve",
    "AdaptiveResult",
]

MAX_HALVINGS = 16


@dataclass
class StepState:
    """Per-component step control data.

    ``C`` and ``S`` may be scalars or length-N arrays.  ``safety`` is the
    factor by which an element indicator may exceed its share of TOL
    before the slab is rejected.
    """

    N: int
    TOL: float
    k_max: float
    w: float = 5.0
    theta: float = 0.5
    C: object = 1.0
    S: object = 1.0
    safety: float = 2.0
    k_prev: np.ndarray = None
    r: np.ndarray = None

    def __post_init__(self):
        if not (self.TOL > 0 and self.k_max > 0 and self.w > 0 and self.safety >= 1):
            raise ConfigurationError("TOL, k_max and w must be positive and safety >= 1")
        self.C = np.broadcast_to(np.asarray(self.C, dtype=np.float64), (self.N,)).copy()
        self.S = np.broadcast_to(np.asarray(self.S, dtype=np.float64), (self.N,)).copy()
        if np.any(self.C <= 0) or np.any(self.S < 0):
            raise ConfigurationError("C must be positive and S nonnegative")
        if self.k_prev is None:
            self.k_prev = np.full(self.N, self.k_max)
        if self.r is None:
            self.r = np.zeros(self.N)

    def share(self):
        """TOL / (N S_i): the indicator budget of each component."""
        with np.errstate(divide="ignore"):
            return self.TOL / (self.N * self.S)


def _element_residuals(sa, sb, ei, es, ee, jx, u_start, comp_ptr, comp_elems, sp_ptr, sp_idx,
                       nodes, samples, B, D, left, is_cg, t0, rhs, params, x):
    ne = ei.shape[0]
    Q = nodes.shape[0]
    ns = samples.shape[0]
    out = np.zeros(ne)
    vals = np.empty(Q)
    for e in range(ne):
        i = ei[e]
        s = es[e]
        a = sa[s]
        b = sb[s]
        k = b - a
        base = e * Q
        r = 0.0
        for si in range(ns):
            t = _node_time(a, b, samples[si])
            for p in range(sp_ptr[i], sp_ptr[i + 1]):
                j = sp_idx[p]
                d = _locate(comp_ptr, comp_elems, sa, sb, es, j, t, t0)
                if d < 0:
                    x[j] = u_start[j]
                else:
                    sd = es[d]
                    lagrange_basis(nodes, _local_tau(sa[sd], sb[sd], t), vals)
                    v = 0.0
                    for m in range(Q):
                        v += jx[d * Q + m] * vals[m]
                    x[j] = v
            du = 0.0
            for m in range(Q):
                du += jx[base + m] * D[si, m]
            dv = abs(du / k - rhs(i, x, t, params))
            if not dv <= r:
                r = dv
        if not is_cg:
            prev = jx[ee[e] * Q + Q - 1] if ee[e] >= 0 else u_start[i]
            u_plus = 0.0
            for m in range(Q):
                u_plus += jx[base + m] * left[m]
            dv = abs(u_plus - prev) / k
            if not dv <= r:
                r = dv
        out[e] = r
    return out


_element_residuals_jit = numba.njit(_element_residuals)


def _sample_tables(table):
    samples = np.unique(np.concatenate((table.nodes, [0.5])))
    B = np.empty((samples.size, table.n_dofs))
    D = np.empty_like(B)
    for s, tau in enumerate(samples):
        lagrange_basis(table.nodes, tau, B[s])
        lagrange_derivative(table.nodes, tau, D[s])
    left = np.empty(table.n_dofs)
    lagrange_basis(table.nodes, 0.0, left)
    return samples, B, D, left


def element_residuals(slab, sys, table):
    """Sampled max |R| on every element of a solved slab."""
    samples, B, D, left = _sample_tables(table)
    if sys.kernel is not None:
        fn, rhs = _element_residuals_jit, sys.kernel
    else:
        f = sys.rhs
        fn, rhs = _element_residuals, (lambda i, x, t, p: f(i, x, t))
    return fn(slab.sa, slab.sb, slab.ei, slab.es, slab.ee, slab.jx, slab.u_start, slab.comp_ptr,
              slab.comp_elems, sys.sparsity.indptr, sys.sparsity.indices, table.nodes, samples, B, D,
              left, table.is_cg, slab.t0, rhs, sys.params, np.zeros(sys.N))


def residual(slab, sys, table, i, e=None):
    """Max residual of component i on element ``e`` (default: its last element)."""
    elems = slab.component_elements(i)
    if e is None:
        e = elems[-1]
    elif slab.ei[e] != i:
        raise ConfigurationError(f"element {e} does not belong to component {i}")
    return float(element_residuals(slab, sys, table)[e])


def step_from_residual(state, i, p):
    """The step law for component i with residual ``state.r[i]`` and power p."""
    r = float(state.r[i])
    if r < 0:
        raise ConfigurationError("residual must be nonnegative")
    denom = state.C[i] * state.N * state.S[i] * r
    if denom == 0.0:
        return float(state.k_max)
    return float((state.TOL / denom) ** (1.0 / p))


def controller(k_new, k_old, k_max, w=5.0):
    """Weighted harmonic mean of the previous and the proposed step, capped at k_max."""
    if np.any(np.asarray(k_new) <= 0) or np.any(np.asarray(k_old) <= 0):
        raise ConfigurationError("steps must be positive")
    k_new = np.asarray(k_new, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        mean = (1.0 + w) * k_old * k_new / (k_old + w * k_new)
    # k_new -> inf: the mean tends to (1 + w) k_old / w
    mean = np.where(np.isinf(k_new), (1.0 + w) * np.asarray(k_old, dtype=np.float64) / w, mean)
    out = np.minimum(mean, k_max)
    return float(out) if out.ndim == 0 else out


def _implied_steps(state, res, p):
    with np.errstate(divide="ignore"):
        k = (state.share() / (state.C * res)) ** (1.0 / p)
    return np.where(res > 0, k, state.k_max)


def initial_step(sys, table, TOL, k_max, solver_cfg=None, C=1.0, S=1.0):
    """Common first step: start at min(k_max, T/100) and halve until accepted.

    A trial slab of equal steps is solved from u0; the step is halved while
    the solver fails or any component's residual implies a step below half
    the trial step.
    """
    from .solver import solve_slab

    K = min(float(k_max), sys.T / 100.0)
    state = StepState(sys.N, TOL, k_max, C=C, S=S)
    p = table.residual_power
    for _ in range(MAX_HALVINGS + 1):
        slab, _ = create_time_slab(np.full(sys.N, K), 0.0, sys.T, n_dofs=table.n_dofs)
        slab.seed(sys.u0)
        report = solve_slab(slab, sys, table, solver_cfg)
        if report.converged:
            res = _component_residuals(slab, element_residuals(slab, sys, table))
            if np.all(_implied_steps(state, res, p) >= 0.5 * K):
                return K
        K *= 0.5
    raise DegenerateStepError(f"no acceptable initial step after {MAX_HALVINGS} halvings")


def _component_residuals(slab, res):
    """Largest element residual of each component on the slab."""
    out = np.zeros(slab.u_start.shape[0])
    np.maximum.at(out, slab.ei, res)
    return out


@dataclass
class Decision:
    accept: bool
    offenders: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    indicators: np.ndarray = None


def accept_or_reject(slab, res, state, p, solver_ok=True):
    """Accept the slab unless the solver failed or an indicator exceeds its budget.

    The indicator of an element is C_i k^p r; the budget is
    safety * TOL / (N S_i).  On rejection ``offenders`` lists the
    components whose steps should be halved (all of them after a solver
    failure).
    """
    if not solver_ok:
        return Decision(False, np.arange(state.N))
    k = slab.steps()
    ind = state.C[slab.ei] * k ** p * res
    bad = ind > state.safety * state.share()[slab.ei]
    if np.any(bad):
        return Decision(False, np.unique(slab.ei[bad]), ind)
    return Decision(True, indicators=ind)


@dataclass
class AdaptiveResult:
    trace: object
    report: object
    error_bound: float
    converged: bool
    rounds: int
    stability: np.ndarray
    history: list


def adaptive_solve(sys, psi, TOL, config=None, max_outer=10, dual_tol=None):
    """Adapt until the error bound of the linear functional (psi, e(T)) is below TOL.

    Each round integrates the primal problem with the current stability
    factors, solves the dual problem linearized around it, and evaluates
    E = sum_i S_i max_j (C_i k_ij^p |R_i|).  When E > TOL the tolerance
    used for step selection is reduced by TOL / E before the next round.
    """
    from dataclasses import replace

    from .dual import solve_dual, stability_factors
    from .integrator import IntegratorConfig, integrate

    cfg = config or IntegratorConfig(TOL=TOL)
    cfg = replace(cfg, TOL=TOL, S=np.ones(sys.N))
    tol_sel = TOL
    best = None
    history = []
    for rnd in range(1, max_outer + 1):
        trace, report = integrate(sys, replace(cfg, TOL=tol_sel))
        dual_trace, _ = solve_dual(trace, sys, psi, replace(cfg, TOL=dual_tol or TOL, S=None))
        S = stability_factors(dual_trace)
        E = float(np.sum(S * report.indicators))
        history.append((tol_sel, E))
        if best is None or E < best.error_bound:
            best = AdaptiveResult(trace, report, E, E <= TOL, rnd, S, history)
        if E <= TOL:
            break
        tol_sel *= 0.8 * TOL / E if E > 0 else 1.0
        cfg = replace(cfg, S=np.maximum(S, 1e-12))
    best.rounds = len(history)
    best.history = history
    return best
