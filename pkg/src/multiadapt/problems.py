"""Initial value problems u' = f(u, t) with component-wise right-hand sides.

A system is evaluated one component at a time: ``rhs(i, x, t)`` returns
f_i, reading ``x[j]`` only for ``j`` in the sparsity row of ``i``.  The
built-in benchmark problems also carry a numba kernel with the signature
``kernel(i, x, t, params)`` so that time slab sweeps can run compiled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from scipy.special import expit

from .errors import ConfigurationError

__all__ = [
    "SparsityPattern",
    "ODESystem",
    "BenchmarkProblem",
    "evaluate_component",
    "detect_sparsity",
    "make_reaction_diffusion",
    "make_wave_1d",
    "make_exponential_decay",
    "make_harmonic_oscillator",
    "make_linear_system",
    "make_problem",
    "cfl_steps",
    "wave_energy",
    "PROBLEM_KINDS",
]


class SparsityPattern:
    """Row-wise dependency sets stored in CSR form (``indptr``, ``indices``)."""

    def __init__(self, indptr, indices):
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        n = indptr.shape[0] - 1
        if n < 0 or indptr[0] != 0 or indptr[-1] != indices.shape[0]:
            raise ConfigurationError("malformed sparsity pointer array")
        if np.any(np.diff(indptr) < 0):
            raise ConfigurationError("sparsity pointer array must be nondecreasing")
        for i in range(n):
            row = indices[indptr[i]:indptr[i + 1]]
            if row.size and (row[0] < 0 or row[-1] >= n or np.any(np.diff(row) <= 0)):
                raise ConfigurationError(f"sparsity row {i} must be strictly increasing in [0, {n})")
        self.indptr = indptr
        self.indices = indices
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_rows(cls, rows):
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, row in enumerate(rows):
            indptr[i + 1] = indptr[i] + len(row)
        indices = np.array([j for row in rows for j in row], dtype=np.int64)
        return cls(indptr, indices)

    @classmethod
    def full(cls, n):
        return cls.from_rows([range(n)] * n)

    @classmethod
    def diagonal(cls, n):
        return cls(np.arange(n + 1), np.arange(n))

    @property
    def N(self):
        return self.indptr.shape[0] - 1

    @property
    def nnz(self):
        return int(self.indices.shape[0])

    def row(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def rows(self):
        return [self.row(i).tolist() for i in range(self.N)]

    def transpose(self):
        rows = [[] for _ in range(self.N)]
        for i in range(self.N):
            for j in self.row(i):
                rows[j].append(i)
        return SparsityPattern.from_rows(rows)

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)

    def __repr__(self):
        return f"SparsityPattern(N={self.N}, nnz={self.nnz})"


def _row_function(kernel, params):
    def rhs(i, x, t):
        return kernel(i, np.asarray(x, dtype=np.float64), float(t), params)
    return rhs


@dataclass(frozen=True)
class ODESystem:
    """The initial value problem u' = f(u, t), u(0) = u0 on (0, T].

    ``rhs(i, x, t)`` evaluates one component.  ``jacobian(i, j, x, t)``
    optionally returns df_i/du_j.  ``f(u, t)`` optionally evaluates the full
    vector at once (used by the plain-array baseline).  ``coords`` and
    ``local_h`` carry mesh data for the semidiscretized PDE benchmarks.
    """

    N: int
    u0: np.ndarray
    T: float
    rhs: Optional[Callable] = None
    sparsity: Optional[SparsityPattern] = None
    jacobian: Optional[Callable] = None
    kernel: Optional[Callable] = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    f: Optional[Callable] = None
    name: str = "ode"
    coords: Optional[np.ndarray] = None
    local_h: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        u0 = np.array(self.u0, dtype=np.float64).reshape(-1)
        if self.N < 1 or u0.shape[0] != self.N:
            raise ConfigurationError(f"u0 must have length N={self.N}, got {u0.shape[0]}")
        if not self.T > 0:
            raise ConfigurationError("final time T must be positive")
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "T", float(self.T))
        params = np.ascontiguousarray(self.params, dtype=np.float64)
        object.__setattr__(self, "params", params)
        if self.rhs is None:
            if self.kernel is None:
                raise ConfigurationError("either rhs or kernel is required")
            object.__setattr__(self, "rhs", _row_function(self.kernel, params))
        if self.sparsity is None:
            object.__setattr__(self, "sparsity", detect_sparsity(self.rhs, self.N, u0, self.T, seed=self.seed))
        elif self.sparsity.N != self.N:
            raise ConfigurationError("sparsity pattern size does not match N")

    def evaluate(self, u, t):
        """Full right-hand side vector f(u, t)."""
        u = np.asarray(u, dtype=np.float64)
        if self.f is not None:
            return np.asarray(self.f(u, t), dtype=np.float64)
        return np.array([self.rhs(i, u, t) for i in range(self.N)])

    def jacobian_entry(self, i, j, u, t):
        """df_i/du_j, analytic when available, else a central difference."""
        if self.jacobian is not None:
            return float(self.jacobian(i, j, u, t))
        x = np.array(u, dtype=np.float64)
        d = 1e-6 * (1.0 + abs(x[j]))
        x[j] += d
        fp = self.rhs(i, x, t)
        x[j] -= 2 * d
        fm = self.rhs(i, x, t)
        return (fp - fm) / (2 * d)


def evaluate_component(sys, i, state, t):
    """Evaluate f_i at time t, fetching only the components in its sparsity row.

    ``state`` is either a callable ``state(j) -> U_j(t)`` or an indexable
    vector.  Components outside the row are passed to the right-hand side
    as NaN, so an evaluator that reads them produces a non-finite result.
    """
    if not 0 <= i < sys.N:
        raise IndexError(f"component {i} out of range for N={sys.N}")
    fetch = state if callable(state) else state.__getitem__
    x = np.full(sys.N, np.nan)
    for j in sys.sparsity.row(i):
        x[j] = fetch(int(j))
    return float(sys.rhs(i, x, t))


def detect_sparsity(rhs, N, u0, T=1.0, seed=0):
    """Probe ``rhs`` for the components each f_i depends on.

    Each component j is perturbed by 1e-6 (1 + |u_j|) at u0 (t = 0) and at
    one random state; j enters row i when f_i changes at either probe.
    ``rhs`` may also be an ODESystem.
    """
    if isinstance(rhs, ODESystem):
        sys = rhs
        rhs, N, u0, T = sys.rhs, sys.N, sys.u0, sys.T
    rng = np.random.default_rng(seed)
    u0 = np.asarray(u0, dtype=np.float64)
    probes = [(u0.copy(), 0.0), (rng.uniform(0.1, 0.9, size=N), float(rng.uniform(0.0, T)))]
    depends = np.zeros((N, N), dtype=bool)
    for u, t in probes:
        base = np.array([rhs(i, u, t) for i in range(N)])
        for j in range(N):
            up = u.copy()
            up[j] += 1e-6 * (1.0 + abs(u[j]))
            moved = np.array([rhs(i, up, t) for i in range(N)])
            depends[:, j] |= moved != base
    return SparsityPattern.from_rows([np.flatnonzero(depends[i]) for i in range(N)])


# --- reaction-diffusion -----------------------------------------------------

@numba.njit(cache=True)
def _reaction_diffusion_kernel(i, x, t, p):
    eps, gamma, h = p[0], p[1], p[2]
    n = int(p[3])
    left = x[i - 1] if i > 0 else x[1]
    right = x[i + 1] if i < n - 1 else x[n - 2]
    u = x[i]
    return eps * (left - 2.0 * u + right) / (h * h) + gamma * u * u * (1.0 - u)


def _stencil_pattern(n):
    return SparsityPattern.from_rows([range(max(i - 1, 0), min(i + 2, n)) for i in range(n)])


def make_reaction_diffusion(eps=0.01, gamma=1000.0, L=5.0, N=1000, T=1.0, lam=100.0):
    """Lumped cG(1) semidiscretization of u_t - eps u_xx = gamma u^2 (1 - u).

    Uniform mesh of N points on [0, L], homogeneous Neumann ends through
    reflected ghost values, initial front u0 = 1 / (1 + exp(lam (x - 1))).
    """
    if not (eps > 0 and gamma >= 0 and L > 0 and lam > 0 and T > 0) or N < 3:
        raise ConfigurationError("reaction-diffusion needs eps>0, gamma>=0, L>0, lam>0, T>0, N>=3")
    N = int(N)
    h = L / (N - 1)
    x = np.linspace(0.0, L, N)
    params = np.array([eps, gamma, h, N], dtype=np.float64)

    def f(u, t):
        ext = np.concatenate(([u[1]], u, [u[-2]]))
        return eps * (ext[:-2] - 2.0 * u + ext[2:]) / h**2 + gamma * u**2 * (1.0 - u)

    def jacobian(i, j, u, t):
        d = eps / h**2
        if j == i:
            return -2.0 * d + gamma * (2.0 * u[i] - 3.0 * u[i] ** 2)
        if abs(i - j) == 1:
            return 2.0 * d if i in (0, N - 1) else d
        return 0.0

    return ODESystem(
        N=N, u0=expit(-lam * (x - 1.0)), T=T, kernel=_reaction_diffusion_kernel,
        params=params, sparsity=_stencil_pattern(N), jacobian=jacobian, f=f,
        name="reaction-diffusion-1d", coords=x, local_h=np.full(N, h),
    )


# --- wave equation on a locally refined mesh --------------------------------

@numba.njit(cache=True)
def _wave_kernel(i, x, t, p):
    n = int(p[0])
    if i < n:
        return x[n + i]
    j = i - n
    # p[1:n] cell sizes, p[n:2n] lumped masses
    flux = 0.0
    if j < n - 1:
        flux += (x[j + 1] - x[j]) / p[1 + j]
    if j > 0:
        flux -= (x[j] - x[j - 1]) / p[j]
    return flux / p[n + j]


def wave_mesh(length=1.0, n_base=40, refine_ratio=16, window=0.1):
    """Node coordinates of a uniform mesh refined by ``refine_ratio`` in a central window."""
    if length <= 0 or n_base < 2 or refine_ratio < 1 or not 0 <= window < length:
        raise ConfigurationError("invalid wave mesh parameters")
    hbar = length / n_base
    lo, hi = 0.5 * (length - window), 0.5 * (length + window)
    nodes = [0.0]
    for c in range(n_base):
        a, b = c * hbar, (c + 1) * hbar
        mid = 0.5 * (a + b)
        sub = refine_ratio if lo <= mid <= hi else 1
        nodes.extend(a + (b - a) * np.arange(1, sub + 1) / sub)
    x = np.array(nodes)
    x[-1] = length
    return x


def make_wave_1d(length=1.0, n_base=40, refine_ratio=16, window=0.1, T=0.5,
                 center=0.75, width=0.1):
    """First-order form u' = v, v' = D_h u of the 1D wave equation.

    Lumped cG(1) in space on ``wave_mesh``; Neumann ends.  Initial data is a
    Gaussian pulse travelling towards x = 0.  Components are ordered
    (u_0..u_{n-1}, v_0..v_{n-1}); ``local_h`` gives each component the
    smaller of its node's adjacent cell sizes.
    """
    if T <= 0 or width <= 0:
        raise ConfigurationError("wave problem needs T > 0 and width > 0")
    x = wave_mesh(length, n_base, refine_ratio, window)
    n = x.shape[0]
    cells = np.diff(x)
    if np.any(cells <= 0):
        raise ConfigurationError("mesh spacing must be positive")
    mass = np.zeros(n)
    mass[:-1] += 0.5 * cells
    mass[1:] += 0.5 * cells
    node_h = np.empty(n)
    node_h[0], node_h[-1] = cells[0], cells[-1]
    node_h[1:-1] = np.minimum(cells[:-1], cells[1:])
    params = np.concatenate(([n], cells, mass)).astype(np.float64)

    g = np.exp(-(((x - center) / width) ** 2))
    dg = -2.0 * (x - center) / width**2 * g
    u0 = np.concatenate((g, dg))

    def f(w, t):
        u, v = w[:n], w[n:]
        flux = np.diff(u) / cells
        acc = np.zeros(n)
        acc[:-1] += flux
        acc[1:] -= flux
        return np.concatenate((v, acc / mass))

    rows = [[n + j] for j in range(n)] + [list(range(max(j - 1, 0), min(j + 2, n))) for j in range(n)]
    return ODESystem(
        N=2 * n, u0=u0, T=T, kernel=_wave_kernel, params=params,
        sparsity=SparsityPattern.from_rows(rows), f=f, name="wave-1d-refined",
        coords=x, local_h=np.concatenate((node_h, node_h)),
    )


def cfl_steps(sys, factor=0.1):
    """Per-component fixed steps k = factor * h(x)."""
    if sys.local_h is None:
        raise ConfigurationError(f"problem {sys.name} has no mesh size")
    return factor * np.asarray(sys.local_h, dtype=np.float64)


def wave_energy(sys, w):
    """Discrete energy 1/2 (sum m_j v_j^2 + sum (u_{j+1} - u_j)^2 / h_j)."""
    n = int(sys.params[0])
    cells, mass = sys.params[1:n], sys.params[n:2 * n]
    u, v = np.asarray(w[:n]), np.asarray(w[n:])
    return 0.5 * (np.sum(mass * v**2) + np.sum(np.diff(u) ** 2 / cells))


# --- small model problems ---------------------------------------------------

@numba.njit(cache=True)
def _linear_kernel(i, x, t, p):
    n = int(p[0])
    acc = 0.0
    row = 1 + i * n
    for j in range(n):
        a = p[row + j]
        if a != 0.0:
            acc += a * x[j]
    return acc


def make_linear_system(A, u0, T=1.0, name="linear"):
    """u' = A u with analytic Jacobian A."""
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("A must be square")
    n = A.shape[0]
    params = np.concatenate(([n], A.reshape(-1)))
    pattern = SparsityPattern.from_rows([np.flatnonzero(A[i]) for i in range(n)])
    return ODESystem(
        N=n, u0=u0, T=T, kernel=_linear_kernel, params=params, sparsity=pattern,
        jacobian=lambda i, j, u, t: A[i, j], f=lambda u, t: A @ u, name=name,
    )


def make_exponential_decay(rate=1.0, N=1, T=1.0, u0=1.0):
    """Decoupled decay u_i' = -rate u_i."""
    if N < 1:
        raise ConfigurationError("N must be positive")
    return make_linear_system(-rate * np.eye(N), np.full(N, u0, dtype=np.float64), T,
                              name="exponential-decay")


def make_harmonic_oscillator(omega=1.0, T=2 * math.pi):
    """u1' = u2, u2' = -omega^2 u1 starting from (1, 0)."""
    A = np.array([[0.0, 1.0], [-omega**2, 0.0]])
    return make_linear_system(A, [1.0, 0.0], T, name="harmonic-oscillator")


PROBLEM_KINDS = {
    "reaction-diffusion-1d": make_reaction_diffusion,
    "wave-1d-refined": make_wave_1d,
    "exponential-decay": make_exponential_decay,
    "harmonic-oscillator": make_harmonic_oscillator,
}


@dataclass
class BenchmarkProblem:
    kind: str
    parameters: dict = field(default_factory=dict)

    def build(self):
        return make_problem(self.kind, **self.parameters)


def make_problem(kind, **parameters):
    try:
        factory = PROBLEM_KINDS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown problem {kind!r}; choose from {sorted(PROBLEM_KINDS)}") from None
    try:
        return factory(**parameters)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
