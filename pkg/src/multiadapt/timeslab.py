"""Multi-adaptive time slabs stored as flat arrays.

A slab between two synchronized time levels is built recursively: the
components with large desired steps get one element spanning the current
sub-slab, the rest are handled by nested sub-slabs.  The result is kept in
the arrays

    sa, sb   left/right end-points of each sub-slab
    jx       q + 1 nodal values per element, in creation order
    ei       component of each element
    es       sub-slab of each element
    ee       previous element of the same component (-1 if none)
    ed, de   CSR list of dependencies on elements with smaller steps

plus the scratch array ``elast`` (last visited element per component).
Element intervals are half-open, (a, b]; a query at the slab start time
returns the slab's initial value ``u_start`` (the end state of the
previous slab), which for cG is also the left value of the first element.
"""

from __future__ import annotations

import json

import numba
import numpy as np

from .errors import ConfigurationError, DegenerateStepError, InterpolationError
from .methods import lagrange_basis

__all__ = [
    "TimeSlab",
    "SlabWorkspace",
    "partition",
    "create_time_slab",
    "build_dependencies",
    "build_plan",
    "interpolate",
    "locate",
    "locate_bruteforce",
    "begin_sweep",
    "visit",
    "DEFAULT_MAX_DEPTH",
    "slab_tree",
]

DEFAULT_MAX_DEPTH = 64
SNAP = 1e-7


# --- array kernels ----------------------------------------------------------

@numba.njit(cache=True)
def _grow(a, n):
    if n < a.shape[0]:
        return a
    b = np.empty(2 * a.shape[0] + 16, a.dtype)
    b[:a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _build_slab(kdes, t0, T, theta, max_depth, snap, region, last, sa, sb, ei, es, ee):
    n_comp = kdes.shape[0]
    for c in range(n_comp):
        last[c] = -1
        region[0, c] = c
    count = np.zeros(max_depth + 2, np.int64)
    lo = np.zeros(max_depth + 2)
    hi = np.zeros(max_depth + 2)
    tn = np.zeros(max_depth + 2)
    child_t = np.zeros(max_depth + 2)
    sid = np.zeros(max_depth + 2, np.int64)
    count[0] = n_comp
    lo[0] = t0
    hi[0] = T
    ns = 0
    ne = 0
    level = 0
    entering = True
    while True:
        if entering:
            n = count[level]
            kmax = 0.0
            for j in range(n):
                kmax = max(kmax, kdes[region[level, j]])
            thr = theta * kmax
            kbar = np.inf
            n0 = 0
            for j in range(n):
                c = region[level, j]
                if kdes[c] < thr:
                    if level + 1 > max_depth:
                        return ns, ne, 0.0, 1, sa, sb, ei, es, ee
                    region[level + 1, n0] = c
                    n0 += 1
                elif kdes[c] < kbar:
                    kbar = kdes[c]
            count[level + 1] = n0
            t_end = lo[level] + kbar
            if t_end >= hi[level] or hi[level] - t_end <= snap * kbar:
                t_end = hi[level]
            elif level > 0 and hi[level] - t_end < theta * kbar:
                # split the rest of the parent evenly instead of leaving a sliver
                t_end = lo[level] + 0.5 * (hi[level] - lo[level])
            if not t_end > lo[level]:
                return ns, ne, 0.0, 2, sa, sb, ei, es, ee
            if level > 0 and lo[level] == lo[level - 1] and t_end == tn[level - 1]:
                # same interval as the parent: join its group rather than nest
                sid[level] = sid[level - 1]
            else:
                sa = _grow(sa, ns)
                sb = _grow(sb, ns)
                sa[ns] = lo[level]
                sb[ns] = t_end
                sid[level] = ns
                ns += 1
            for j in range(n):
                c = region[level, j]
                if kdes[c] >= thr:
                    ei = _grow(ei, ne)
                    es = _grow(es, ne)
                    ee = _grow(ee, ne)
                    ei[ne] = c
                    es[ne] = sid[level]
                    ee[ne] = last[c]
                    last[c] = ne
                    ne += 1
            tn[level] = t_end
            child_t[level] = lo[level]
            entering = False
        if count[level + 1] > 0 and child_t[level] < tn[level]:
            lo[level + 1] = child_t[level]
            hi[level + 1] = tn[level]
            level += 1
            entering = True
            continue
        if level == 0:
            break
        level -= 1
        child_t[level] = tn[level + 1]
    return ns, ne, tn[0], 0, sa, sb, ei, es, ee


@numba.njit(cache=True)
def _node_time(a, b, s):
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    return a + (b - a) * s


@numba.njit(cache=True)
def _local_tau(a, b, t):
    if t == a:
        return 0.0
    if t == b:
        return 1.0
    tau = (t - a) / (b - a)
    return min(max(tau, 0.0), 1.0)


@numba.njit(cache=True)
def _covers(sa, sb, es, ee, e, t, t0):
    s = es[e]
    return sa[s] < t <= sb[s]


@numba.njit(cache=True)
def _locate(comp_ptr, comp_elems, sa, sb, es, i, t, t0):
    lo = comp_ptr[i]
    end = comp_ptr[i + 1]
    if lo == end or t <= t0:
        return -1
    hi = end
    while lo < hi:
        mid = (lo + hi) // 2
        if sb[es[comp_elems[mid]]] < t:
            lo = mid + 1
        else:
            hi = mid
    if lo == end:
        return -1
    e = comp_elems[lo]
    return e if sa[es[e]] < t else -1


@numba.njit(cache=True)
def _register_group(e, ei, es, elast):
    s = es[e]
    j = e
    while j < ei.shape[0] and es[j] == s:
        elast[ei[j]] = j
        j += 1


@numba.njit(cache=True)
def _resolve_recent(sa, sb, es, ee, elast, i, t, t0):
    c = elast[i]
    if c < 0:
        return -1
    if _covers(sa, sb, es, ee, c, t, t0):
        return c
    p = ee[c]
    if p >= 0 and t == sa[es[c]]:
        return p
    return -1


@numba.njit(cache=True)
def _resolve(sa, sb, ei, es, ee, ed, de, elast, e, i, t, t0):
    c = _resolve_recent(sa, sb, es, ee, elast, i, t, t0)
    if c >= 0:
        return c
    for p in range(ed[e], ed[e + 1]):
        d = de[p]
        if ei[d] == i and _covers(sa, sb, es, ee, d, t, t0):
            return d
    return -1


@numba.njit(cache=True)
def _build_dependencies(sa, sb, ei, es, ee, comp_ptr, comp_elems, sp_ptr, sp_idx, nodes, t0):
    ne = ei.shape[0]
    n_comp = comp_ptr.shape[0] - 1
    elast = -np.ones(n_comp, np.int64)
    ed = np.zeros(ne + 1, np.int64)
    de = np.empty(16, np.int64)
    nd = 0
    cur = -1
    for e in range(ne):
        if es[e] != cur:
            _register_group(e, ei, es, elast)
            cur = es[e]
        i = ei[e]
        a = sa[es[e]]
        b = sb[es[e]]
        start = nd
        for n in range(nodes.shape[0]):
            t = _node_time(a, b, nodes[n])
            if t == t0:
                continue
            for p in range(sp_ptr[i], sp_ptr[i + 1]):
                j = sp_idx[p]
                if _resolve_recent(sa, sb, es, ee, elast, j, t, t0) >= 0:
                    continue
                d = _locate(comp_ptr, comp_elems, sa, sb, es, j, t, t0)
                if d < 0:
                    return ed, de[:nd], e
                seen = False
                for r in range(start, nd):
                    if de[r] == d:
                        seen = True
                        break
                if not seen:
                    de = _grow(de, nd)
                    de[nd] = d
                    nd += 1
        de[start:nd] = np.sort(de[start:nd])
        ed[e + 1] = nd
    return ed, de[:nd], -1


@numba.njit(cache=True)
def _build_plan(sa, sb, ei, es, ee, ed, de, sp_ptr, sp_idx, nodes, t0):
    ne = ei.shape[0]
    Q = nodes.shape[0]
    n_comp = sp_ptr.shape[0] - 1
    elast = -np.ones(n_comp, np.int64)
    ptr = np.zeros(ne * Q + 1, np.int64)
    total = 0
    for e in range(ne):
        total += Q * (sp_ptr[ei[e] + 1] - sp_ptr[ei[e]])
    comp = np.empty(total, np.int64)
    src = np.empty(total, np.int64)
    basis = np.empty(total * Q)
    vals = np.empty(Q)
    k = 0
    cur = -1
    for e in range(ne):
        if es[e] != cur:
            _register_group(e, ei, es, elast)
            cur = es[e]
        i = ei[e]
        a = sa[es[e]]
        b = sb[es[e]]
        for n in range(Q):
            t = _node_time(a, b, nodes[n])
            for p in range(sp_ptr[i], sp_ptr[i + 1]):
                j = sp_idx[p]
                if t == t0:
                    # slab start: the initial value, no element needed
                    d = -1
                    vals[:] = 0.0
                else:
                    d = _resolve(sa, sb, ei, es, ee, ed, de, elast, e, j, t, t0)
                    if d < 0:
                        return ptr, comp, src, basis, e
                    s = es[d]
                    lagrange_basis(nodes, _local_tau(sa[s], sb[s], t), vals)
                comp[k] = j
                src[k] = d
                for m in range(Q):
                    basis[k * Q + m] = vals[m]
                k += 1
            ptr[e * Q + n + 1] = k
    return ptr, comp, src, basis, -1


# --- Python surface ---------------------------------------------------------

class SlabWorkspace:
    """Scratch buffers reused across macro steps (grown by doubling)."""

    def __init__(self, n_comp, max_depth=DEFAULT_MAX_DEPTH):
        self.max_depth = int(max_depth)
        self.region = np.empty((self.max_depth + 2, n_comp), np.int64)
        self.last = np.empty(n_comp, np.int64)
        cap = 4 * n_comp + 16
        self.sa = np.empty(cap)
        self.sb = np.empty(cap)
        self.ei = np.empty(cap, np.int64)
        self.es = np.empty(cap, np.int64)
        self.ee = np.empty(cap, np.int64)


class TimeSlab:
    """One macro step [t0, t1] in flat-array form (see module docstring)."""

    def __init__(self, t0, t1, sa, sb, ei, es, ee, n_dofs, n_comp):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.sa = sa
        self.sb = sb
        self.ei = ei
        self.es = es
        self.ee = ee
        self.n_dofs = int(n_dofs)
        self.N = int(n_comp)
        self.jx = np.zeros(self.n_elements * self.n_dofs)
        self.u_start = np.zeros(self.N)
        self.ed = np.zeros(self.n_elements + 1, np.int64)
        self.de = np.zeros(0, np.int64)
        self.elast = -np.ones(self.N, np.int64)
        self.current = -1
        self._group = -1
        order = np.argsort(ei, kind="stable")
        self.comp_elems = order.astype(np.int64)
        self.comp_ptr = np.zeros(self.N + 1, np.int64)
        np.cumsum(np.bincount(ei, minlength=self.N), out=self.comp_ptr[1:])

    @property
    def n_elements(self):
        return int(self.ei.shape[0])

    @property
    def n_subslabs(self):
        return int(self.sa.shape[0])

    @property
    def K(self):
        return self.t1 - self.t0

    def steps(self):
        """Length of every element."""
        return self.sb[self.es] - self.sa[self.es]

    def interval(self, e):
        s = self.es[e]
        return float(self.sa[s]), float(self.sb[s])

    def dofs(self, e):
        q1 = self.n_dofs
        return self.jx[e * q1:(e + 1) * q1]

    def component_elements(self, i):
        return self.comp_elems[self.comp_ptr[i]:self.comp_ptr[i + 1]]

    def seed(self, u_start):
        """Set the initial value and fill every element with it."""
        self.u_start = np.array(u_start, dtype=np.float64)
        self.jx.reshape(self.n_elements, self.n_dofs)[:] = self.u_start[self.ei][:, None]

    def end_values(self):
        """Nodal value at t1 of every component (last dof of its last element)."""
        last = self.comp_elems[self.comp_ptr[1:] - 1]
        return self.jx[last * self.n_dofs + self.n_dofs - 1].copy()

    def efficiency_index(self):
        k = self.steps()
        return float(k.max() / k.min() * self.N / self.n_elements)

    def groups(self):
        """(first, stop) element ranges of each element group in creation order."""
        starts = np.flatnonzero(np.diff(self.es, prepend=-1))
        return list(zip(starts.tolist(), np.append(starts[1:], self.n_elements).tolist()))

    def compact(self):
        """Independent copy holding only the solution arrays."""
        out = TimeSlab.__new__(TimeSlab)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return out

    def to_dict(self):
        """Nested sub-slab tree with element intervals (debug dump)."""
        return slab_tree(self)

    def dump_json(self):
        return json.dumps(self.to_dict())

    def __repr__(self):
        return (f"TimeSlab([{self.t0:.6g}, {self.t1:.6g}], subslabs={self.n_subslabs}, "
                f"elements={self.n_elements})")


def slab_tree(slab):
    """Nested dict of sub-slabs and their elements for any object holding the slab arrays."""
    ns = slab.sa.shape[0]
    nodes = [{"interval": [float(slab.sa[s]), float(slab.sb[s])], "elements": [], "children": []}
             for s in range(ns)]
    for e in range(slab.ei.shape[0]):
        nodes[slab.es[e]]["elements"].append({"element": e, "component": int(slab.ei[e])})
    # parent of s: the closest earlier sub-slab whose interval contains it
    stack = [0]
    for s in range(1, ns):
        while not (slab.sa[stack[-1]] <= slab.sa[s] and slab.sb[s] <= slab.sb[stack[-1]]):
            stack.pop()
        nodes[stack[-1]]["children"].append(nodes[s])
        stack.append(s)
    return {"t0": slab.t0, "t1": slab.t1, "root": nodes[0]}


def partition(components, theta=0.5):
    """Split (index, step) pairs by the threshold theta * max step.

    Returns (I0, I1, K_bar): the small-step indices, the large-step indices
    and the smallest step among the large ones.
    """
    components = list(components)
    if not components:
        raise ConfigurationError("cannot partition an empty component list")
    if not 0.0 < theta < 1.0:
        raise ConfigurationError("theta must lie in (0, 1)")
    K = max(k for _, k in components)
    small = [i for i, k in components if k < theta * K]
    large = [(i, k) for i, k in components if k >= theta * K]
    return small, [i for i, _ in large], min(k for _, k in large)


def _desired_steps(steps, n_comp):
    if callable(steps):
        steps = [steps(i) for i in range(n_comp)]
    k = np.array(steps, dtype=np.float64).reshape(-1)
    if k.shape[0] != n_comp:
        raise ConfigurationError(f"expected {n_comp} desired steps, got {k.shape[0]}")
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ConfigurationError("desired time steps must be positive and finite")
    return k


def create_time_slab(steps, t0, T, theta=0.5, n_dofs=2, workspace=None, max_depth=None):
    """Build the slab starting at ``t0`` for the given desired steps.

    ``steps`` is an array of per-component steps or a callable oracle
    ``steps(i)``.  Returns ``(slab, t1)`` with t1 = min(t0 + K_bar, T).
    """
    if not t0 < T:
        raise ConfigurationError(f"slab start {t0} must precede end time {T}")
    if not 0.0 < theta < 1.0:
        raise ConfigurationError("theta must lie in (0, 1)")
    if workspace is None:
        n_comp = len(steps) if not callable(steps) else None
        if n_comp is None:
            raise ConfigurationError("an oracle needs a workspace sized to the system")
        workspace = SlabWorkspace(n_comp, DEFAULT_MAX_DEPTH if max_depth is None else max_depth)
    n_comp = workspace.last.shape[0]
    k = _desired_steps(steps, n_comp)
    ws = workspace
    ns, ne, t1, err, ws.sa, ws.sb, ws.ei, ws.es, ws.ee = _build_slab(
        k, float(t0), float(T), float(theta), ws.max_depth, SNAP, ws.region, ws.last,
        ws.sa, ws.sb, ws.ei, ws.es, ws.ee)
    if err == 1:
        raise DegenerateStepError(f"slab recursion deeper than {ws.max_depth} levels at t={t0}")
    if err == 2:
        raise DegenerateStepError(f"time step underflow at t={t0}")
    slab = TimeSlab(t0, t1, ws.sa[:ns].copy(), ws.sb[:ns].copy(), ws.ei[:ne].copy(),
                    ws.es[:ne].copy(), ws.ee[:ne].copy(), n_dofs, n_comp)
    return slab, float(t1)


def build_dependencies(slab, sparsity, table):
    """Fill ``ed``/``de`` with the smaller-step elements each element reads.

    A dry run of the in-order sweep decides which lookups the recently
    visited elements (``elast`` and their predecessors) already resolve;
    every remaining quadrature-point lookup is recorded in ``de``.
    """
    ed, de, bad = _build_dependencies(slab.sa, slab.sb, slab.ei, slab.es, slab.ee, slab.comp_ptr,
                                      slab.comp_elems, sparsity.indptr, sparsity.indices,
                                      table.nodes, slab.t0)
    if bad >= 0:
        raise InterpolationError(f"element {bad}: a dependency lies outside the slab")
    slab.ed = ed
    slab.de = de.copy()
    return slab


class GatherPlan:
    """Resolved interpolation sources for every (element, node, dependency)."""

    def __init__(self, ptr, comp, src, basis):
        self.ptr = ptr
        self.comp = comp
        self.src = src
        self.basis = basis


def build_plan(slab, sparsity, table):
    """Resolve every quadrature-point lookup of the sweep once per slab."""
    ptr, comp, src, basis, bad = _build_plan(slab.sa, slab.sb, slab.ei, slab.es, slab.ee, slab.ed,
                                             slab.de, sparsity.indptr, sparsity.indices,
                                             table.nodes, slab.t0)
    if bad >= 0:
        raise InterpolationError(f"element {bad}: unresolved dependency (run build_dependencies first)")
    return GatherPlan(ptr, comp, src, basis)


def begin_sweep(slab):
    """Reset the last-visited array at the start of a sweep."""
    slab.elast[:] = -1
    slab.current = -1
    slab._group = -1


def visit(slab, e):
    """Mark element ``e`` as the current element of an in-order sweep."""
    if slab.es[e] != slab._group:
        _register_group(e, slab.ei, slab.es, slab.elast)
        slab._group = slab.es[e]
    slab.current = e


def _value(slab, table, e, t):
    s = slab.es[e]
    tau = _local_tau(slab.sa[s], slab.sb[s], t)
    vals = np.empty(table.n_dofs)
    lagrange_basis(table.nodes, tau, vals)
    xi = slab.dofs(e)
    total = 0.0
    for m in range(table.n_dofs):
        total += xi[m] * vals[m]
    return total


def interpolate(slab, i, t, table):
    """U_i(t) during a sweep, through ``elast`` or the current element's ``de`` list."""
    e = slab.current
    if e < 0:
        raise InterpolationError("interpolate called outside a sweep (visit an element first)")
    if t == slab.t0:
        return float(slab.u_start[i])
    d = _resolve(slab.sa, slab.sb, slab.ei, slab.es, slab.ee, slab.ed, slab.de, slab.elast,
                 e, i, float(t), slab.t0)
    if d < 0:
        raise InterpolationError(f"no element of component {i} covering t={t} from element {e}")
    return _value(slab, table, d, t)


def locate(slab, i, t):
    """Element of component i covering t (binary search), or -1."""
    return int(_locate(slab.comp_ptr, slab.comp_elems, slab.sa, slab.sb, slab.es, i, float(t), slab.t0))


def locate_bruteforce(slab, i, t):
    """Reference lookup: scan every element of the slab."""
    t = float(t)
    hit = np.flatnonzero((slab.ei == i) & (slab.sa[slab.es] < t) & (t <= slab.sb[slab.es]))
    return int(hit[0]) if hit.size else -1


def evaluate_bruteforce(slab, i, t, table):
    if t == slab.t0:
        return float(slab.u_start[i])
    e = locate_bruteforce(slab, i, t)
    if e < 0:
        raise InterpolationError(f"component {i} has no element covering t={t}")
    return _value(slab, table, e, t)
