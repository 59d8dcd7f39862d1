"""Nodal bases, quadrature points and element update weights for cG(q) / dG(q).

On the reference interval [0, 1] an element carries q + 1 nodal values
xi_m at the quadrature points s_m.  One element update reads

    xi_m = xi0_minus + k * sum_n w[m, n] * f(s_n),

where w[m, n] is the integral of the n-th Lagrange basis function over
[0, s_m].  cG(q) uses Gauss-Lobatto points (s_0 = 0, so row 0 vanishes and
xi_0 is the continuity value); dG(q) uses right Radau points (s_q = 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from numpy.polynomial import legendre

from .errors import ConfigurationError

__all__ = ["MethodTable", "build_table", "update_element", "eval_local", "MAX_ORDER"]

MAX_ORDER = 8


@numba.njit(cache=True)
def lagrange_basis(nodes, tau, out):
    """Values of the Lagrange basis on ``nodes`` at ``tau`` (written to ``out``)."""
    n = nodes.shape[0]
    for m in range(n):
        v = 1.0
        for j in range(n):
            if j != m:
                v *= (tau - nodes[j]) / (nodes[m] - nodes[j])
        out[m] = v


@numba.njit(cache=True)
def lagrange_derivative(nodes, tau, out):
    n = nodes.shape[0]
    for m in range(n):
        total = 0.0
        for j in range(n):
            if j == m:
                continue
            v = 1.0 / (nodes[m] - nodes[j])
            for l in range(n):
                if l != m and l != j:
                    v *= (tau - nodes[l]) / (nodes[m] - nodes[l])
            total += v
        out[m] = total


def _polish_roots(coef, roots):
    # a few Newton steps on the Legendre-series polynomial
    dcoef = legendre.legder(coef)
    for _ in range(3):
        roots = roots - legendre.legval(roots, coef) / legendre.legval(roots, dcoef)
    return roots


def _lobatto_nodes(q):
    if q == 1:
        return np.array([0.0, 1.0])
    coef = legendre.legder(np.eye(q + 1)[q])
    inner = np.sort(_polish_roots(coef, np.real(legendre.legroots(coef))))
    x = np.concatenate(([-1.0], inner, [1.0]))
    s = 0.5 * (x + 1.0)
    s[0], s[-1] = 0.0, 1.0
    return s


def _radau_right_nodes(q):
    if q == 0:
        return np.array([1.0])
    n = q + 1
    coef = np.eye(n + 1)[n] - np.eye(n + 1)[n - 1]
    roots = np.sort(np.real(legendre.legroots(coef)))
    inner = _polish_roots(coef, roots[:-1])
    s = 0.5 * (np.concatenate((inner, [1.0])) + 1.0)
    s[-1] = 1.0
    return s


def _integration_weights(nodes):
    q1 = nodes.shape[0]
    gx, gw = legendre.leggauss(q1)
    w = np.zeros((q1, q1))
    vals = np.empty(q1)
    for m, sm in enumerate(nodes):
        if sm == 0.0:
            continue
        pts = 0.5 * sm * (gx + 1.0)
        for p, wt in zip(pts, gw):
            lagrange_basis(nodes, p, vals)
            w[m] += 0.5 * sm * wt * vals
    return w


@dataclass(frozen=True)
class MethodTable:
    """Nodes and weights of one (variant, q) pair.

    ``order`` is the nodal convergence order (2q for cG, 2q + 1 for dG);
    ``residual_power`` is the step exponent of the local error indicator
    (q for cG, q + 1 for dG).
    """

    variant: str
    q: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_dofs(self):
        return self.q + 1

    @property
    def is_cg(self):
        return self.variant == "cG"

    @property
    def order(self):
        return 2 * self.q if self.is_cg else 2 * self.q + 1

    @property
    def residual_power(self):
        return self.q if self.is_cg else self.q + 1

    def basis(self, tau):
        out = np.empty(self.n_dofs)
        lagrange_basis(self.nodes, float(tau), out)
        return out

    def basis_derivative(self, tau):
        out = np.empty(self.n_dofs)
        lagrange_derivative(self.nodes, float(tau), out)
        return out

    def __repr__(self):
        return f"MethodTable({self.variant}({self.q}))"


def _normalize_variant(variant):
    v = str(variant).lower()
    if v in ("cg", "mcg"):
        return "cG"
    if v in ("dg", "mdg"):
        return "dG"
    raise ConfigurationError(f"unknown method variant {variant!r}")


@lru_cache(maxsize=None)
def _build(variant, q):
    nodes = _lobatto_nodes(q) if variant == "cG" else _radau_right_nodes(q)
    weights = _integration_weights(nodes)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return MethodTable(variant, q, nodes, weights)


def build_table(variant, q):
    """Return the (cached) table for cG(q), q >= 1, or dG(q), q >= 0."""
    variant = _normalize_variant(variant)
    q = int(q)
    lowest = 1 if variant == "cG" else 0
    if not lowest <= q <= MAX_ORDER:
        raise ConfigurationError(f"{variant}({q}) unsupported; need {lowest} <= q <= {MAX_ORDER}")
    return _build(variant, q)


def update_element(table, xi0_minus, k, samples):
    """One element update from right-hand side samples at the mapped nodes."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (table.n_dofs,):
        raise ConfigurationError(f"expected {table.n_dofs} samples, got {samples.shape}")
    xi = xi0_minus + k * (table.weights @ samples)
    if table.is_cg:
        xi[0] = xi0_minus
    return xi


def eval_local(table, xi, tau):
    """Value of the element polynomial with nodal values ``xi`` at tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"local coordinate {tau} outside [0, 1]")
    return float(np.dot(xi, table.basis(tau)))
