"""Linearized dual problems and stability factors.

The dual of u' = f(u, t) for the functional (psi, e(T)) is solved forward in
reversed time s = T - t:

    w'(s) = J(U(T - s), T - s)^T w(s),   w(0) = psi,

so that phi(t) = w(T - t).  The stability factor of component i is taken
as S_i = integral over [0, T] of |phi_i|, evaluated with the trapezoidal rule
over the nodal points of the dual solution.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ConfigurationError
from .problems import ODESystem

__all__ = ["make_dual_system", "solve_dual", "stability_factors", "DualRun"]


class _ReversedState:
    """U(T - s) with the last evaluated time cached."""

    def __init__(self, primal):
        self.primal = primal
        self.T = primal.T
        self._s = None
        self._u = np.empty(primal.N)

    def __call__(self, s):
        if s != self._s:
            self.primal.state(max(self.T - s, 0.0), self._u)
            self._s = s
        return self._u


def make_dual_system(primal, sys, psi):
    """The forward-in-s dual system of ``sys`` linearized around the trace ``primal``."""
    primal.check_complete()
    psi = np.asarray(psi, dtype=np.float64).reshape(-1)
    if psi.shape[0] != sys.N:
        raise ConfigurationError(f"psi must have length {sys.N}")
    T = sys.T
    pattern = sys.sparsity.transpose()
    cols = [np.asarray(pattern.row(i)) for i in range(sys.N)]
    state = _ReversedState(primal)
    if sys.jacobian is not None:
        jac = sys.jacobian
    else:
        def jac(i, j, u, t):
            x = u.copy()
            d = 1e-6 * (1.0 + abs(x[j]))
            x[j] += d
            fp = sys.rhs(i, x, t)
            x[j] -= 2.0 * d
            fm = sys.rhs(i, x, t)
            return (fp - fm) / (2.0 * d)

    def rhs(i, x, s):
        u = state(s)
        t = T - s
        acc = 0.0
        for j in cols[i]:
            acc += jac(j, i, u, t) * x[j]
        return acc

    dual = ODESystem(N=sys.N, u0=psi, T=T, rhs=rhs, sparsity=pattern, name=f"dual-{sys.name}",
                     jacobian=lambda i, j, x, s: jac(j, i, state(s), T - s))
    return dual


class DualRun:
    def __init__(self, primal, psi, system, trace, report):
        self.primal = primal
        self.psi = psi
        self.system = system
        self.trace = trace
        self.report = report

    def phi(self, t):
        """Dual solution at original time t."""
        return self.trace.state(self.system.T - t)


def solve_dual(primal, sys, psi, config=None):
    """Integrate the dual problem with the primal method; returns (dual trace, DualRun)."""
    from .integrator import IntegratorConfig, integrate

    cfg = config or IntegratorConfig(method=primal.table.variant.lower(), q=primal.table.q)
    cfg = replace(cfg, method=primal.table.variant.lower(), q=primal.table.q, retain_trace=True)
    dual = make_dual_system(primal, sys, psi)
    trace, report = integrate(dual, cfg)
    return trace, DualRun(primal, dual.u0, dual, trace, report)


def stability_factors(dual_trace):
    """S_i = integral of |phi_i| over [0, T] by the trapezoidal rule on nodal points."""
    S = np.empty(dual_trace.N)
    for i in range(dual_trace.N):
        t, v = dual_trace.nodal_points(i)
        S[i] = np.trapezoid(np.abs(v), t)
    return S
