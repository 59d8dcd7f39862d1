"""Forward integration over [0, T], one time slab at a time."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .adaptivity import (MAX_HALVINGS, StepState, _component_residuals, accept_or_reject,
                         _implied_steps, controller, element_residuals, initial_step)
from .errors import ConfigurationError, IntegrationFailure
from .methods import build_table
from .solver import SolverConfig, solve_slab
from .timeslab import SlabWorkspace, build_dependencies, build_plan, create_time_slab
from .trace import SlabRecord, SolutionTrace

__all__ = ["IntegratorConfig", "RunReport", "SlabStats", "integrate", "efficiency_index", "MODES"]

MODES = ("multi-adaptive", "mono-adaptive", "fixed-steps", "mono-fixed")


@dataclass
class IntegratorConfig:
    """Settings of one integration.

    ``mode`` is one of ``multi-adaptive``, ``mono-adaptive``, ``fixed-steps``
    (per-component constant steps ``steps``) and ``mono-fixed`` (a single
    step, the smallest entry of ``steps``).  ``method`` is ``cg`` or ``dg``.
    """

    method: str = "cg"
    q: int = 1
    mode: str = "multi-adaptive"
    TOL: float = 1e-4
    theta: float = 0.5
    w: float = 5.0
    k_max: float = None
    steps: object = None
    C: object = 1.0
    S: object = None
    safety: float = 2.0
    retain_trace: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_rejections: int = MAX_HALVINGS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode in ("fixed-steps", "mono-fixed") and self.steps is None:
            raise ConfigurationError(f"mode {self.mode} needs fixed steps")
        if not 0.0 < self.theta < 1.0:
            raise ConfigurationError("theta must lie in (0, 1)")
        if self.adaptive and not self.TOL > 0:
            raise ConfigurationError("TOL must be positive")

    @property
    def adaptive(self):
        return self.mode in ("multi-adaptive", "mono-adaptive")

    @property
    def mono(self):
        return self.mode in ("mono-adaptive", "mono-fixed")

    @classmethod
    def from_method(cls, method, q=1, adaptive=True, **kwargs):
        """Map the names mcg/mdg (per-component steps) and cg/dg (common step) to a config."""
        m = str(method).lower()
        if m not in ("mcg", "mdg", "cg", "dg"):
            raise ConfigurationError(f"unknown method {method!r}")
        multi = m.startswith("m")
        if adaptive:
            mode = "multi-adaptive" if multi else "mono-adaptive"
        else:
            mode = "fixed-steps" if multi else "mono-fixed"
        return cls(method=m[-2:], q=q, mode=mode, **kwargs)


@dataclass
class SlabStats:
    t0: float
    t1: float
    n_elements: int
    mu: float
    sweeps: int
    strategy: str


@dataclass
class RunReport:
    """Summary of an integration.

    ``iters_global`` is the mean number of sweeps per accepted slab and
    ``iters_local`` the mean number of local iterations per element visit.
    ``indicators`` holds, per component, the largest C k^p |R| over the
    accepted elements (adaptive modes only).
    """

    M: int = 0
    rejected: int = 0
    iters_global: float = 0.0
    iters_local: float = 0.0
    n_elements: int = 0
    k_min: float = np.inf
    k_max: float = 0.0
    mu: float = 1.0
    walltime: float = 0.0
    t_final: float = 0.0
    converged: bool = True
    escalations: int = 0
    indicators: np.ndarray = None
    slabs: list = field(default_factory=list)
    u_end: np.ndarray = None


def efficiency_index(obj):
    """Per-slab index (k_max / k_min) N / n_elements, or the element-weighted mean of a trace."""
    return obj.efficiency_index()


def _mono(steps):
    return np.full(steps.shape, steps.min())


def integrate(sys, cfg=None):
    """Integrate ``sys`` from 0 to T; returns (SolutionTrace or None, RunReport)."""
    cfg = cfg or IntegratorConfig()
    table = build_table(cfg.method, cfg.q)
    N, T = sys.N, sys.T
    p = table.residual_power
    k_max = float(cfg.k_max) if cfg.k_max is not None else T
    clock = time.monotonic()

    state = None
    if cfg.adaptive:
        S = 1.0 if cfg.S is None else cfg.S
        state = StepState(N, cfg.TOL, k_max, w=cfg.w, theta=cfg.theta, C=cfg.C, S=S,
                          safety=cfg.safety)
        desired = np.full(N, initial_step(sys, table, cfg.TOL, k_max, cfg.solver, state.C, state.S))
        state.k_prev[:] = desired
    else:
        desired = np.broadcast_to(np.asarray(cfg.steps, dtype=np.float64), (N,)).copy()
        if np.any(~np.isfinite(desired)) or np.any(desired <= 0):
            raise ConfigurationError("fixed steps must be positive")
    if cfg.mono:
        desired = _mono(desired)

    trace = SolutionTrace(table, sys.u0, T) if cfg.retain_trace else None
    report = RunReport(indicators=np.zeros(N))
    workspace = SlabWorkspace(N)
    u = sys.u0.copy()
    t = 0.0
    start = "direct"
    sweeps = local = visits = 0
    weighted_mu = 0.0
    while t < T:
        steps = desired.copy()
        for attempt in range(cfg.max_rejections + 1):
            slab, t1 = create_time_slab(steps, t, T, cfg.theta, table.n_dofs, workspace)
            build_dependencies(slab, sys.sparsity, table)
            plan = build_plan(slab, sys.sparsity, table)
            slab.seed(u)
            solved = solve_slab(slab, sys, table, cfg.solver, plan, start=start)
            report.escalations += len(solved.escalations) - 1
            if cfg.adaptive:
                res = element_residuals(slab, sys, table) if solved.converged else None
                decision = accept_or_reject(slab, res, state, p, solved.converged)
            else:
                decision = None
            if solved.converged and (decision is None or decision.accept):
                break
            report.rejected += 1
            offenders = decision.offenders if decision is not None else np.arange(N)
            steps[offenders] *= 0.5
            if cfg.mono:
                steps = _mono(steps)
        else:
            report.converged = False
            report.walltime = time.monotonic() - clock
            report.t_final = t
            report.u_end = u
            raise IntegrationFailure(f"slab at t={t} rejected {cfg.max_rejections + 1} times")

        if solved.strategy != "newton":
            start = solved.strategy
        k = slab.steps()
        mu = slab.efficiency_index()
        ne = slab.n_elements
        report.M += 1
        report.n_elements += ne
        report.k_min = min(report.k_min, float(k.min()))
        report.k_max = max(report.k_max, float(k.max()))
        weighted_mu += mu * ne
        sweeps += solved.sweeps
        local += solved.local_iterations
        visits += solved.sweeps * ne
        report.slabs.append(SlabStats(slab.t0, t1, ne, mu, solved.sweeps, solved.strategy))
        if trace is not None:
            trace.append(SlabRecord.from_slab(slab))

        if cfg.adaptive:
            np.maximum.at(report.indicators, slab.ei, decision.indicators)
            state.r[:] = _component_residuals(slab, res)
            k_new = _implied_steps(state, state.r, p)
            # smooth against the previous desired step: the element may have
            # been shortened to match a smaller step sharing its group
            desired = controller(k_new, state.k_prev, k_max, cfg.w)
            if cfg.mono:
                desired = _mono(desired)
            state.k_prev[:] = desired
        u = slab.end_values()
        t = t1

    report.t_final = t
    report.u_end = u
    report.mu = weighted_mu / report.n_elements
    report.iters_global = sweeps / report.M
    report.iters_local = local / visits if visits else 0.0
    report.walltime = time.monotonic() - clock
    return trace, report
