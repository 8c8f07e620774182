"""Parallel MTTKRP fabric: PE state machines, address layout, partitioning.

The fabric walks the nonzeros of a mode-0 sorted COO tensor.  For each element
it fetches the 16-byte element record, then one row of each side factor, and
accumulates val * D[j, :] * C[k, :] into a per-row temporary.  When the output
row index changes (or the partition ends) the temporary is flushed as a row
write.  Two arrangements are modeled:

  type1  one shared stream of elements with three memory ports (element loads,
         row loads, row stores), each port holding up to `max_outstanding`
         requests in flight;
  type2  `pe_count` independent machines, each owning a contiguous slice of
         elements and a single memory port.

The same machine logic runs under an instant-responder harness (functional
results, request traces) and under the cycle engine (timing).  Both therefore
produce identical numerics: per-row sums are carried in float64 and rounded to
float32 once per flush.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ProtocolError
from .tensor import ELEMENT_BYTES, VALUE_BYTES, CooTensor, FactorMatrix

ADDRESS_LIMIT_BITS = 48


class ReqKind(enum.IntEnum):
    ELEM = 0   # 16-byte tensor element
    ROW_D = 1  # factor row, rank * 4 bytes
    ROW_C = 2
    WRITE = 3  # output row store, rank * 4 bytes


class MemoryRequest:
    __slots__ = ("kind", "addr", "nbytes", "pe", "lmb", "tag", "issue_cycle", "sem")

    def __init__(self, kind, addr, nbytes, pe, tag, issue_cycle, sem):
        self.kind = kind
        self.addr = addr
        self.nbytes = nbytes
        self.pe = pe
        self.lmb = 0
        self.tag = tag
        self.issue_cycle = issue_cycle
        self.sem = sem  # semantic payload key, e.g. ("drow", j)

    def __repr__(self):
        return (f"MemoryRequest({self.kind.name}, addr={self.addr:#x}, "
                f"nbytes={self.nbytes}, pe={self.pe}, tag={self.tag})")


def _align_up(x, a):
    return (x + a - 1) // a * a


@dataclass(frozen=True)
class AddressMap:
    """Byte layout of the four flat segments, each 64-byte aligned.

    tensor elements | D rows | C rows | output rows
    """

    rank: int
    nnz: int
    dims: tuple
    tensor_base: int
    d_base: int
    c_base: int
    out_base: int
    end: int

    @classmethod
    def build(cls, nnz, dims, rank, align=64):
        row_bytes = rank * VALUE_BYTES
        tensor_base = 0
        d_base = _align_up(tensor_base + nnz * ELEMENT_BYTES, align)
        c_base = _align_up(d_base + dims[1] * row_bytes, align)
        out_base = _align_up(c_base + dims[2] * row_bytes, align)
        end = _align_up(out_base + dims[0] * row_bytes, align)
        if end >= 1 << ADDRESS_LIMIT_BITS:
            raise ConfigurationError(
                f"address space {end} bytes exceeds {ADDRESS_LIMIT_BITS}-bit limit")
        return cls(rank, nnz, tuple(int(d) for d in dims), tensor_base, d_base,
                   c_base, out_base, end)

    @property
    def row_bytes(self):
        return self.rank * VALUE_BYTES

    def element_addr(self, z):
        return self.tensor_base + z * ELEMENT_BYTES

    def d_row_addr(self, j):
        return self.d_base + j * self.row_bytes

    def c_row_addr(self, k):
        return self.c_base + k * self.row_bytes

    def out_row_addr(self, i):
        return self.out_base + i * self.row_bytes


def partition_nonzeros(i_arr, parts):
    """Split [0, len(i_arr)) into `parts` contiguous ranges on row boundaries.

    Starts from an even split (first len % parts ranges get one extra) and
    advances each boundary forward while it would cut a run of equal row
    indices, so no output row is shared by two ranges.
    """
    if parts < 1:
        raise ConfigurationError(f"need at least one partition, got {parts}")
    m = len(i_arr)
    q, r = divmod(m, parts)
    bounds = [0]
    for p in range(parts):
        bounds.append(bounds[-1] + q + (1 if p < r else 0))
    for t in range(1, parts):
        b = max(bounds[t], bounds[t - 1])
        while 0 < b < m and i_arr[b - 1] == i_arr[b]:
            b += 1
        bounds[t] = b
    for t in range(1, parts + 1):
        bounds[t] = max(bounds[t], bounds[t - 1])
    return [(bounds[t], bounds[t + 1]) for t in range(parts)]


@dataclass(frozen=True)
class FabricConfig:
    fabric_type: str = "type2"  # type1: shared units, type2: per-PE ports
    pe_count: int = 8
    max_outstanding: int = 16   # in-flight requests per port
    accumulate_cycles: int = 1  # accumulator occupancy per element
    rank: int = 32

    def __post_init__(self):
        if self.fabric_type not in ("type1", "type2"):
            raise ConfigurationError(f"unknown fabric type {self.fabric_type!r}")
        if self.pe_count < 1:
            raise ConfigurationError("pe_count must be positive")
        if self.max_outstanding < 1:
            raise ConfigurationError("max_outstanding must be positive")
        if self.accumulate_cycles < 1:
            raise ConfigurationError("accumulate_cycles must be positive")
        if self.rank < 1:
            raise ConfigurationError("rank must be positive")


class _Slot:
    __slots__ = ("z", "i", "j", "k", "val", "elem_here", "d_issued", "c_issued",
                 "d_row", "c_row")

    def __init__(self, z):
        self.z = z
        self.i = self.j = self.k = -1
        self.val = 0.0
        self.elem_here = False
        self.d_issued = False
        self.c_issued = False
        self.d_row = None
        self.c_row = None

    def complete(self):
        return self.elem_here and self.d_row is not None and self.c_row is not None


# Port issue categories in fixed priority order.
_CAT_WRITE, _CAT_FIBER, _CAT_ELEM = 0, 1, 2


class PeMachine:
    """One element-stream state machine with in-order row accumulation.

    `ports` maps category -> (port index, pe id on requests).  type2 uses one
    port for all categories; type1 splits element loads, row loads, and row
    stores onto three ports.  Each port issues at most one request per cycle
    and holds at most `max_outstanding` in flight.
    """

    __slots__ = ("cfg", "amap", "lo", "hi", "next_z", "slots", "slot_cap",
                 "cur_i", "temp_y", "acc_busy_until", "pending_flush",
                 "inflight", "outstanding", "ports", "port_ids", "_next_tag",
                 "issue_count", "accum_busy_cycles", "first_cycle", "last_cycle",
                 "want_step", "final_flush_done")

    def __init__(self, cfg: FabricConfig, lo, hi, amap: AddressMap, ports,
                 tag_base=0):
        self.cfg = cfg
        self.amap = amap
        self.lo = lo
        self.hi = hi
        self.next_z = lo
        self.slots = deque()
        self.slot_cap = cfg.max_outstanding * (2 if cfg.fabric_type == "type1" else 1)
        self.cur_i = None
        self.temp_y = np.zeros(cfg.rank, dtype=np.float64)
        self.acc_busy_until = 0
        self.pending_flush = None
        self.inflight = {}
        self.ports = ports  # {category: (port, pe_id)}
        self.port_ids = sorted({p for p, _ in ports.values()})
        self.outstanding = {p: 0 for p in self.port_ids}
        self._next_tag = tag_base
        self.issue_count = 0
        self.accum_busy_cycles = 0
        self.first_cycle = None
        self.last_cycle = 0
        self.want_step = hi > lo
        self.final_flush_done = hi <= lo

    # -- response side -------------------------------------------------

    def deliver(self, tag, payload):
        """Apply one memory response; order within a cycle does not matter."""
        try:
            purpose, target, port = self.inflight.pop(tag)
        except KeyError:
            raise ProtocolError(f"response for unknown tag {tag}") from None
        self.outstanding[port] -= 1
        self.want_step = True
        if purpose == "elem":
            target.i, target.j, target.k = payload.i, payload.j, payload.k
            target.val = payload.val
            target.elem_here = True
        elif purpose == "drow":
            target.d_row = payload
        elif purpose == "crow":
            target.c_row = payload
        # writes need no payload; dropping the tag releases the port slot

    # -- compute side ----------------------------------------------------

    def _commit(self, now):
        if now < self.acc_busy_until:
            return
        if self.slots:
            head = self.slots[0]
            if not head.complete():
                return
            if self.cur_i is not None and head.i != self.cur_i:
                if self.pending_flush is not None:
                    return  # previous row still waiting for the store port
                self.pending_flush = (self.cur_i, self.temp_y.astype(np.float32))
                self.temp_y[:] = 0.0
            self.cur_i = head.i
            self.temp_y += head.val * (head.d_row.astype(np.float64)
                                       * head.c_row.astype(np.float64))
            self.slots.popleft()
            self.acc_busy_until = now + self.cfg.accumulate_cycles
            self.accum_busy_cycles += self.cfg.accumulate_cycles
        elif (self.next_z >= self.hi and self.cur_i is not None
              and self.pending_flush is None):
            self.pending_flush = (self.cur_i, self.temp_y.astype(np.float32))
            self.temp_y[:] = 0.0
            self.cur_i = None
            self.final_flush_done = True

    # -- request side ----------------------------------------------------

    def _make_req(self, kind, addr, nbytes, pe, now, sem):
        tag = self._next_tag
        self._next_tag += 1
        return MemoryRequest(kind, addr, nbytes, pe, tag, now, sem)

    def _issue_on_port(self, port, now):
        cat_write = self.ports.get(_CAT_WRITE)
        if (cat_write and cat_write[0] == port and self.pending_flush is not None
                and self.outstanding[port] < self.cfg.max_outstanding):
            i, row = self.pending_flush
            self.pending_flush = None
            req = self._make_req(ReqKind.WRITE, self.amap.out_row_addr(i),
                                 self.amap.row_bytes, cat_write[1], now,
                                 ("out", i, row))
            self.inflight[req.tag] = ("write", None, port)
            self.outstanding[port] += 1
            return req
        cat_fiber = self.ports.get(_CAT_FIBER)
        if (cat_fiber and cat_fiber[0] == port
                and self.outstanding[port] < self.cfg.max_outstanding):
            for slot in self.slots:
                if not slot.elem_here:
                    continue
                if not slot.d_issued:
                    slot.d_issued = True
                    req = self._make_req(ReqKind.ROW_D, self.amap.d_row_addr(slot.j),
                                         self.amap.row_bytes, cat_fiber[1], now,
                                         ("drow", slot.j))
                    self.inflight[req.tag] = ("drow", slot, port)
                    self.outstanding[port] += 1
                    return req
                if not slot.c_issued:
                    slot.c_issued = True
                    req = self._make_req(ReqKind.ROW_C, self.amap.c_row_addr(slot.k),
                                         self.amap.row_bytes, cat_fiber[1], now,
                                         ("crow", slot.k))
                    self.inflight[req.tag] = ("crow", slot, port)
                    self.outstanding[port] += 1
                    return req
        cat_elem = self.ports.get(_CAT_ELEM)
        if (cat_elem and cat_elem[0] == port and self.next_z < self.hi
                and len(self.slots) < self.slot_cap
                and self.outstanding[port] < self.cfg.max_outstanding):
            z = self.next_z
            self.next_z += 1
            slot = _Slot(z)
            self.slots.append(slot)
            req = self._make_req(ReqKind.ELEM, self.amap.element_addr(z),
                                 ELEMENT_BYTES, cat_elem[1], now, ("elem", z))
            self.inflight[req.tag] = ("elem", slot, port)
            self.outstanding[port] += 1
            return req
        return None

    def step(self, now, sink):
        """Commit at most one element, then issue at most one request per port."""
        self._commit(now)
        issued_any = False
        for port in self.port_ids:
            req = self._issue_on_port(port, now)
            if req is not None:
                sink(req)
                self.issue_count += 1
                issued_any = True
                if self.first_cycle is None:
                    self.first_cycle = now
                self.last_cycle = now
        # Backlog that needs no external event to make progress next cycle.
        # Ports at max outstanding cannot act; deliver() re-arms want_step.
        w = self.cfg.max_outstanding
        out = self.outstanding
        cw = self.ports.get(_CAT_WRITE)
        cf = self.ports.get(_CAT_FIBER)
        ce = self.ports.get(_CAT_ELEM)
        self.want_step = (
            (self.pending_flush is not None and cw is not None
             and out[cw[0]] < w)
            or (ce is not None and self.next_z < self.hi
                and len(self.slots) < self.slot_cap and out[ce[0]] < w)
            or (cf is not None and out[cf[0]] < w
                and any(s.elem_here and not (s.d_issued and s.c_issued)
                        for s in self.slots))
            or (self.slots and self.slots[0].complete())
            or (self.next_z >= self.hi and not self.slots
                and self.cur_i is not None))
        return issued_any

    def next_event(self, now):
        if self.want_step:
            return now + 1
        if now < self.acc_busy_until and (self.slots or self.cur_i is not None):
            return self.acc_busy_until
        return float("inf")

    def idle(self):
        """True once every element is committed, flushed, and acknowledged."""
        return (self.next_z >= self.hi and not self.slots
                and self.pending_flush is None and self.cur_i is None
                and not self.inflight)


def build_machines(cfg: FabricConfig, tensor: CooTensor, amap: AddressMap):
    """Instantiate the PE machines and their element ranges."""
    if not tensor.mode_sorted():
        raise ConfigurationError("fabric requires elements sorted by (i, j, k); "
                                 "sort the tensor first")
    machines = []
    if cfg.fabric_type == "type1":
        ports = {_CAT_ELEM: (0, 0), _CAT_FIBER: (1, 1), _CAT_WRITE: (2, 2)}
        machines.append(PeMachine(cfg, 0, tensor.nnz, amap, ports, tag_base=0))
    else:
        ranges = partition_nonzeros(tensor.i, cfg.pe_count)
        for m, (lo, hi) in enumerate(ranges):
            ports = {_CAT_ELEM: (0, m), _CAT_FIBER: (0, m), _CAT_WRITE: (0, m)}
            machines.append(PeMachine(cfg, lo, hi, amap, ports,
                                      tag_base=m << 32))
    return machines


class MemoryImage:
    """Semantic backing store: serves payloads by meaning, not by address.

    The timing models move addressed bytes; payload content rides along via
    each request's `sem` key.  Writes land whole rows, each output row exactly
    once per run.
    """

    def __init__(self, tensor: CooTensor, d: FactorMatrix, c: FactorMatrix):
        self.tensor = tensor
        self.d = d
        self.c = c
        self.out = np.zeros((tensor.dims[0], d.rank), dtype=np.float32)
        self._written = set()

    def read(self, sem):
        kind = sem[0]
        if kind == "elem":
            return self.tensor.element(sem[1])
        if kind == "drow":
            return self.d.values[sem[1]].copy()
        if kind == "crow":
            return self.c.values[sem[1]].copy()
        raise ProtocolError(f"read of non-readable payload {sem!r}")

    def write(self, sem):
        if sem[0] != "out":
            raise ProtocolError(f"write of non-writable payload {sem!r}")
        i = sem[1]
        if i in self._written:
            raise ProtocolError(f"output row {i} written twice")
        self._written.add(i)
        self.out[i] = sem[2]

    def result(self, rank):
        return FactorMatrix(self.tensor.dims[0], rank, self.out)


class RequestTrace:
    """Flat record of issued requests: (cycle, kind, lmb, pe, addr, nbytes, tag)."""

    COLUMNS = ("cycle", "kind", "lmb", "pe", "addr", "len", "tag")

    def __init__(self):
        self.records = []

    def add(self, cycle, req):
        self.records.append((cycle, req.kind.name.lower(), req.lmb, req.pe,
                             req.addr, req.nbytes, req.tag))

    def dump(self, fh):
        fh.write("# " + " ".join(self.COLUMNS) + "\n")
        for rec in self.records:
            fh.write(" ".join(str(x) for x in rec) + "\n")

    def __len__(self):
        return len(self.records)


def run_functional(tensor: CooTensor, d: FactorMatrix, c: FactorMatrix,
                   cfg: FabricConfig, trace: RequestTrace | None = None):
    """Drive the machines against an instant (1-cycle) memory.

    Returns the MTTKRP output.  Numerics and request streams are identical to
    the timed run; only response latencies differ.
    """
    if cfg.rank != d.rank or cfg.rank != c.rank:
        raise ConfigurationError("fabric rank differs from factor rank")
    amap = AddressMap.build(tensor.nnz, tensor.dims, cfg.rank)
    image = MemoryImage(tensor, d, c)
    machines = build_machines(cfg, tensor, amap)
    pending = deque()  # (ready_cycle, machine, tag, payload)
    now = 0
    guard = 0
    while True:
        while pending and pending[0][0] <= now:
            _, mach, tag, payload = pending.popleft()
            mach.deliver(tag, payload)
        active = False
        for mach in machines:
            def sink(req, mach=mach):
                if trace is not None:
                    trace.add(now, req)
                if req.kind == ReqKind.WRITE:
                    image.write(req.sem)
                    payload = None
                else:
                    payload = image.read(req.sem)
                pending.append((now + 1, mach, req.tag, payload))
            if mach.step(now, sink):
                active = True
        if all(m.idle() for m in machines) and not pending:
            break
        if not active and not pending:
            # no requests moving and machines not idle: acc busy or stalled
            nxt = min(m.next_event(now) for m in machines)
            if nxt == float("inf"):
                raise ProtocolError("functional run stalled with work remaining")
            now = int(nxt)
        else:
            now += 1
        guard += 1
        if guard > 100 * max(tensor.nnz, 1) + 10000:
            raise ProtocolError("functional run exceeded cycle guard")
    return image.result(cfg.rank)


def fabric_mttkrp_kernel(cfg: FabricConfig):
    """Adapter for cp_als: sorts each mode view, then runs functionally."""

    def kernel(tensor, d, c):
        t = tensor if tensor.mode_sorted() else tensor.sorted_mode0()
        fc = cfg if cfg.rank == d.rank else FabricConfig(
            cfg.fabric_type, cfg.pe_count, cfg.max_outstanding,
            cfg.accumulate_cycles, d.rank)
        return run_functional(t, d, c, fc)

    return kernel
