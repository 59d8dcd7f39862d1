"""Plain-array cG(q)/dG(q) time stepping with one common step.

This solver works on the full state vector with ``sys.evaluate`` and
shares no code with the slab machinery, which makes it a reference for
the integrator run with equal steps for all components.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegrationFailure
from .methods import build_table
from .timeslab import SNAP

__all__ = ["solve_fixed"]


def solve_fixed(sys, method, q, k, max_iter=500):
    """Integrate with constant step ``k`` (last step clipped at T).

    Returns ``(times, values)`` where ``times`` has shape (M, Q) with the
    nodal times of each step and ``values`` has shape (M, Q, N).
    """
    table = build_table(method, q)
    nodes, W = table.nodes, table.weights
    Q = table.n_dofs
    T = sys.T
    u = sys.u0.copy()
    t = 0.0
    times, values = [], []
    while t < T:
        t1 = t + k
        if t1 >= T or T - t1 <= SNAP * k:
            t1 = T
        h = t1 - t
        tn = np.array([t if s == 0.0 else (t1 if s == 1.0 else t + h * s) for s in nodes])
        xi = np.tile(u, (Q, 1))
        prev = np.inf
        for _ in range(max_iter):
            F = np.array([sys.evaluate(xi[n], tn[n]) for n in range(Q)])
            new = u[None, :] + h * (W @ F)
            if table.is_cg:
                new[0] = u
            delta = np.max(np.abs(new - xi))
            xi = new
            scale = 1.0 + np.max(np.abs(xi))
            # iterate to rounding level: stop once the increment stops shrinking
            if delta <= 1e-15 * scale or (delta <= 1e-12 * scale and delta >= prev):
                break
            prev = delta
        else:
            raise IntegrationFailure(f"fixed-point iteration stalled at t={t}")
        times.append(tn)
        values.append(xi)
        u = xi[-1].copy()
        t = t1
    return np.array(times), np.array(values)
