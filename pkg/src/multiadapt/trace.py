"""Storage and evaluation of a computed solution on [0, T].

A trace keeps the solution arrays of every accepted time slab.  Values are
left-continuous: at a slab boundary T_n the slab ending at T_n is used,
which for cG is the continuous value and for dG the nodal end value.
Traces can be written to and read from a little-endian binary checkpoint.
"""

from __future__ import annotations

import bisect
import struct

import numba
import numpy as np

from .errors import InterpolationError, TraceError
from .methods import build_table, lagrange_basis
from .timeslab import _local_tau, _locate

__all__ = ["SlabRecord", "SolutionTrace", "write_checkpoint", "read_checkpoint", "MAGIC"]

MAGIC = b"MADGTRC\x00"
VERSION = 1


@numba.njit(cache=True)
def _slab_state(sa, sb, es, jx, comp_ptr, comp_elems, u_start, nodes, t, t0, out):
    Q = nodes.shape[0]
    vals = np.empty(Q)
    for i in range(out.shape[0]):
        e = _locate(comp_ptr, comp_elems, sa, sb, es, i, t, t0)
        if e < 0:
            out[i] = u_start[i]
            continue
        s = es[e]
        lagrange_basis(nodes, _local_tau(sa[s], sb[s], t), vals)
        v = 0.0
        for m in range(Q):
            v += jx[e * Q + m] * vals[m]
        out[i] = v


class SlabRecord:
    """Solution arrays of one accepted slab (no solver scratch data)."""

    __slots__ = ("t0", "t1", "sa", "sb", "ei", "es", "ee", "jx", "u_start", "comp_ptr", "comp_elems")

    def __init__(self, t0, t1, sa, sb, ei, es, ee, jx, u_start):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.sa, self.sb = sa, sb
        self.ei, self.es, self.ee = ei, es, ee
        self.jx = jx
        self.u_start = u_start
        n = u_start.shape[0]
        self.comp_elems = np.argsort(ei, kind="stable").astype(np.int64)
        self.comp_ptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(ei, minlength=n), out=self.comp_ptr[1:])

    @classmethod
    def from_slab(cls, slab):
        rec = cls.__new__(cls)
        rec.t0, rec.t1 = slab.t0, slab.t1
        rec.sa, rec.sb = slab.sa.copy(), slab.sb.copy()
        rec.ei, rec.es, rec.ee = slab.ei.copy(), slab.es.copy(), slab.ee.copy()
        rec.jx = slab.jx.copy()
        rec.u_start = slab.u_start.copy()
        rec.comp_ptr, rec.comp_elems = slab.comp_ptr.copy(), slab.comp_elems.copy()
        return rec

    @property
    def n_elements(self):
        return int(self.ei.shape[0])

    def steps(self):
        return self.sb[self.es] - self.sa[self.es]

    def efficiency_index(self):
        k = self.steps()
        return float(k.max() / k.min() * self.u_start.shape[0] / self.n_elements)


class SolutionTrace:
    """Piecewise polynomial solution built from consecutive slab records."""

    def __init__(self, table, u0, T, records=None):
        self.table = table
        self.u0 = np.array(u0, dtype=np.float64)
        self.T = float(T)
        self.records = []
        self._ends = []
        for rec in records or ():
            self.append(rec)

    @property
    def N(self):
        return self.u0.shape[0]

    def append(self, rec):
        if not isinstance(rec, SlabRecord):
            rec = SlabRecord.from_slab(rec)
        expected = self._ends[-1] if self._ends else 0.0
        if rec.t0 != expected:
            raise TraceError(f"slab starts at {rec.t0}, expected {expected}")
        self.records.append(rec)
        self._ends.append(rec.t1)

    def __len__(self):
        return len(self.records)

    @property
    def end_time(self):
        return self._ends[-1] if self._ends else 0.0

    def boundaries(self):
        return np.array([0.0] + self._ends)

    def check_complete(self):
        if not self.records or self.end_time != self.T:
            raise TraceError(f"trace covers [0, {self.end_time}], not [0, {self.T}]")

    def _record(self, t):
        t = float(t)
        if not 0.0 <= t <= self.end_time or not self.records:
            raise InterpolationError(f"t={t} outside the trace interval [0, {self.end_time}]")
        return self.records[min(bisect.bisect_left(self._ends, t), len(self.records) - 1)]

    def state(self, t, out=None):
        """U(t) for all components."""
        rec = self._record(t)
        out = np.empty(self.N) if out is None else out
        _slab_state(rec.sa, rec.sb, rec.es, rec.jx, rec.comp_ptr, rec.comp_elems, rec.u_start,
                    self.table.nodes, float(t), rec.t0, out)
        return out

    def evaluate(self, i, t):
        return float(self.state(t)[i])

    def end_values(self):
        return self.state(self.end_time)

    def local_steps(self, t):
        """Step of the element covering t, per component (first slab at t = 0)."""
        rec = self._record(t)
        t = max(float(t), np.nextafter(rec.t0, np.inf))
        k = np.empty(self.N)
        for i in range(self.N):
            e = _locate(rec.comp_ptr, rec.comp_elems, rec.sa, rec.sb, rec.es, i, t, rec.t0)
            s = rec.es[e]
            k[i] = rec.sb[s] - rec.sa[s]
        return k

    def nodal_points(self, i):
        """(times, values) of every nodal point of component i, starting at t = 0."""
        nodes = self.table.nodes
        keep = np.flatnonzero(nodes > 0.0)
        Q = nodes.shape[0]
        times, values = [np.zeros(1)], [self.u0[i:i + 1]]
        for rec in self.records:
            elems = rec.comp_elems[rec.comp_ptr[i]:rec.comp_ptr[i + 1]]
            a = rec.sa[rec.es[elems]]
            b = rec.sb[rec.es[elems]]
            t = a[:, None] + (b - a)[:, None] * nodes[keep][None, :]
            t[:, -1] = b
            times.append(t.reshape(-1))
            values.append(rec.jx[(elems[:, None] * Q + keep[None, :])].reshape(-1))
        return np.concatenate(times), np.concatenate(values)

    def n_elements(self):
        return sum(r.n_elements for r in self.records)

    def efficiency_index(self):
        """Element-weighted mean of the per-slab efficiency indices."""
        counts = np.array([r.n_elements for r in self.records], dtype=np.float64)
        mus = np.array([r.efficiency_index() for r in self.records])
        return float(np.sum(counts * mus) / np.sum(counts))


def write_checkpoint(trace, path):
    """Write ``trace`` as a binary checkpoint file."""
    table = trace.table
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIBdQ", VERSION, trace.N, table.q, 1 if table.is_cg else 0,
                             trace.T, len(trace.records)))
        fh.write(trace.u0.astype("<f8").tobytes())
        for rec in trace.records:
            fh.write(struct.pack("<ddQQ", rec.t0, rec.t1, rec.sa.shape[0], rec.ei.shape[0]))
            for arr, dt in ((rec.sa, "<f8"), (rec.sb, "<f8"), (rec.jx, "<f8"),
                            (rec.ei, "<i8"), (rec.es, "<i8"), (rec.ee, "<i8")):
                fh.write(np.ascontiguousarray(arr).astype(dt).tobytes())


def _take(buf, pos, n, dt):
    size = n * np.dtype(dt).itemsize
    if pos + size > len(buf):
        raise TraceError("checkpoint file is truncated")
    return np.frombuffer(buf, dtype=dt, count=n, offset=pos).astype(dt[1:]), pos + size


def read_checkpoint(path):
    """Load a trace written by :func:`write_checkpoint`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(MAGIC)] != MAGIC:
        raise TraceError(f"{path}: not a solution checkpoint")
    pos = len(MAGIC)
    head = struct.Struct("<IIIBdQ")
    if len(buf) < pos + head.size:
        raise TraceError("checkpoint file is truncated")
    version, n, q, is_cg, T, n_slabs = head.unpack_from(buf, pos)
    if version != VERSION:
        raise TraceError(f"unsupported checkpoint version {version}")
    pos += head.size
    table = build_table("cg" if is_cg else "dg", q)
    u0, pos = _take(buf, pos, n, "<f8")
    trace = SolutionTrace(table, u0, T)
    rec_head = struct.Struct("<ddQQ")
    u_start = u0
    for _ in range(n_slabs):
        if len(buf) < pos + rec_head.size:
            raise TraceError("checkpoint file is truncated")
        t0, t1, ns, ne = rec_head.unpack_from(buf, pos)
        pos += rec_head.size
        sa, pos = _take(buf, pos, ns, "<f8")
        sb, pos = _take(buf, pos, ns, "<f8")
        jx, pos = _take(buf, pos, ne * table.n_dofs, "<f8")
        ei, pos = _take(buf, pos, ne, "<i8")
        es, pos = _take(buf, pos, ne, "<i8")
        ee, pos = _take(buf, pos, ne, "<i8")
        rec = SlabRecord(t0, t1, sa, sb, ei, es, ee, jx, u_start.copy())
        trace.append(rec)
        last = rec.comp_elems[rec.comp_ptr[1:] - 1]
        u_start = jx[last * table.n_dofs + table.n_dofs - 1]
    return trace
