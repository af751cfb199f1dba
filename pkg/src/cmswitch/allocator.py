"""Per-segment allocation of dual-mode arrays.

Every array serves one operator in one role (compute, memory-in, memory-out),
except reuse pairs where an output buffer of O_a is the input buffer of its
consumer O_b. The pipelined segment latency is the slowest operator.

Solving happens on counts (arrays are interchangeable in the objective); a
deterministic placement step then turns counts into (x, y) assignments.
"""

from __future__ import annotations

import time
from collections import namedtuple
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import ceil

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .deha import HardwareAbstraction
from .graph import ComputationGraph, OperatorNode


class Role(str, Enum):
    MEM_IN = "min"
    MEM_OUT = "mout"
    COMPUTE = "c"


class PlanError(ValueError):
    pass


def effective_op_per_cycle(op: OperatorNode, hw: HardwareAbstraction) -> Fraction:
    """MACs per cycle one compute array delivers for this operator.

    With ragged tiling the weight matrix is spread evenly over the tiles, so an
    array holds N*K/tiles weights instead of array_h*array_w.
    """
    tiles = op.weight_tiles(hw.array_h, hw.array_w)
    return Fraction(hw.op_per_cycle * op.N * op.K, tiles * hw.array_cells)


def op_latency(op: OperatorNode, com: int, mem: int, hw: HardwareAbstraction) -> int:
    if com < op.weight_tiles(hw.array_h, hw.array_w):
        raise ValueError(f"{op.id}: {com} compute arrays cannot hold its weights")
    if mem < 0:
        raise ValueError("negative memory array count")
    c = com * effective_op_per_cycle(op, hw)
    m = (mem * hw.mem_data_per_cycle + hw.main_data_per_cycle) * op.arithmetic_intensity
    return ceil(op.total_ops / min(c, m))


def reuse_bound(src: OperatorNode, dst: OperatorNode, hw: HardwareAbstraction) -> int:
    # shared volume taken as min(OUT_src, IN_dst)
    return ceil(min(src.output_volume, dst.input_volume) / hw.array_cells)


@dataclass(frozen=True)
class OpAlloc:
    op_id: str
    com: int
    mem_in: int
    mem_out: int

    @property
    def mem(self) -> int:
        return self.mem_in + self.mem_out


@dataclass(frozen=True)
class AllocationPlan:
    segment: tuple[int, int]
    ops: tuple[OpAlloc, ...]
    reuse: tuple[tuple[str, str, int], ...]
    assignments: tuple[tuple[str, tuple[int, int], Role], ...]
    kind: str = "dual"
    optimal: bool = True

    @property
    def lam(self) -> dict[tuple[str, int, int], Role]:
        return {(op, x, y): r for op, (x, y), r in self.assignments}

    def counts(self, op_id: str) -> OpAlloc:
        for a in self.ops:
            if a.op_id == op_id:
                return a
        raise KeyError(op_id)

    @property
    def reuse_pairs(self) -> list[tuple[tuple[str, int, int], tuple[str, int, int]]]:
        outs: dict[tuple[int, int], str] = {}
        ins: dict[tuple[int, int], list[str]] = {}
        for op, addr, r in self.assignments:
            if r is Role.MEM_OUT:
                outs[addr] = op
            elif r is Role.MEM_IN:
                ins.setdefault(addr, []).append(op)
        pairs = []
        for addr in sorted(outs):
            for b in ins.get(addr, []):
                pairs.append(((outs[addr], *addr), (b, *addr)))
        return pairs

    def array_modes(self) -> dict[tuple[int, int], str]:
        """(x, y) -> 'C' or 'M' for every array the segment uses."""
        modes = {}
        for _, addr, r in self.assignments:
            modes[addr] = "C" if r is Role.COMPUTE else "M"
        return modes

    @property
    def compute_arrays(self) -> set[tuple[int, int]]:
        return {a for _, a, r in self.assignments if r is Role.COMPUTE}

    @property
    def memory_arrays(self) -> set[tuple[int, int]]:
        return {a for _, a, r in self.assignments if r is not Role.COMPUTE}

    @property
    def arrays_used(self) -> int:
        return len({a for _, a, _ in self.assignments})

    def arrays_of(self, op_id: str, role: Role) -> list[tuple[int, int]]:
        return sorted(a for op, a, r in self.assignments if op == op_id and r is role)


@dataclass(frozen=True)
class SegmentCost:
    per_op_latency: dict[str, int] = field(hash=False)
    intra_latency: int

    @classmethod
    def of(cls, plan: AllocationPlan, g: ComputationGraph, hw: HardwareAbstraction) -> SegmentCost:
        lat = {a.op_id: op_latency(g.node(a.op_id), a.com, a.mem, hw) for a in plan.ops}
        return cls(lat, max(lat.values()))


# ---------------------------------------------------------------- count solver

def _max_reuse(need: tuple[int, ...], edges: tuple[tuple[int, int, int], ...]) -> tuple[int, ...]:
    """Largest total reuse: capacitated b-matching over segment edges.

    Each op k may take part in at most need[k] reuse arrays (its memory
    requirement); edge e=(a, b, cap) carries at most cap. Trees are solved by
    leaf elimination; graphs with undirected cycles (skip edges) go to MILP.
    """
    if not edges:
        return ()
    live = [i for i, (a, b, cap) in enumerate(edges) if cap > 0 and need[a] > 0 and need[b] > 0]
    r = [0] * len(edges)
    if not live:
        return tuple(r)
    if _is_forest([edges[i] for i in live]):
        rem = list(need)
        pending = set(live)
        while pending:
            deg: dict[int, int] = {}
            for i in pending:
                a, b, _ = edges[i]
                deg[a] = deg.get(a, 0) + 1
                deg[b] = deg.get(b, 0) + 1
            leaf_edge = min(i for i in pending if deg[edges[i][0]] == 1 or deg[edges[i][1]] == 1)
            a, b, cap = edges[leaf_edge]
            x = min(cap, rem[a], rem[b])
            r[leaf_edge] = x
            rem[a] -= x
            rem[b] -= x
            pending.discard(leaf_edge)
        return tuple(r)

    n_ops = len(need)
    a_ub = np.zeros((n_ops, len(live)))
    for col, i in enumerate(live):
        a, b, _ = edges[i]
        a_ub[a, col] = 1
        a_ub[b, col] = 1
    caps = np.array([edges[i][2] for i in live], dtype=float)
    res = milp(c=-np.ones(len(live)),
               constraints=LinearConstraint(a_ub, -np.inf, np.array(need, dtype=float)),
               integrality=np.ones(len(live)),
               bounds=Bounds(np.zeros(len(live)), caps))
    if res.x is None:
        raise RuntimeError(f"reuse matching failed: {res.message}")
    for col, i in enumerate(live):
        r[i] = int(round(res.x[col]))
    return tuple(r)


def _is_forest(edges: list[tuple[int, int, int]]) -> bool:
    parent: dict[int, int] = {}

    def find(v: int) -> int:
        while parent.setdefault(v, v) != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b, _ in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


@dataclass(frozen=True)
class _OpModel:
    ops: int
    ai: int
    tiles: int
    eff: Fraction  # MACs/cycle per compute array


@dataclass(frozen=True)
class _CountSolution:
    latency: int
    com: tuple[int, ...]
    mem: tuple[int, ...]
    reuse: tuple[int, ...]
    optimal: bool


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def _requirements(m: _OpModel, target: int, d_cim: int, d_main: int) -> tuple[int, int]:
    """Fewest (compute, memory) arrays for which the op finishes within `target` cycles."""
    # integer forms of ceil(ops / (target * eff)) and ceil((ops / (target * ai) - d_main) / d_cim)
    com = max(m.tiles, _cdiv(m.ops * m.eff.denominator, target * m.eff.numerator))
    mem = max(0, _cdiv(m.ops - d_main * target * m.ai, target * m.ai * d_cim))
    return com, mem


def _solve_counts(models: tuple[_OpModel, ...], edges: tuple[tuple[int, int, int], ...],
                  n_cim: int, d_cim: int, d_main: int, allow_memory: bool,
                  timeout_s: float | None) -> _CountSolution | None:
    if sum(m.tiles for m in models) > n_cim:
        return None

    def attempt(target: int):
        com, mem = [], []
        for m in models:
            c, k = _requirements(m, target, d_cim, d_main)
            com.append(c)
            mem.append(k)
        if not allow_memory and any(mem):
            return None
        if sum(com) + sum(mem) - sum(min(mem[a], mem[b], cap) for a, b, cap in edges) > n_cim:
            return None  # even a per-edge upper bound on reuse cannot make it fit
        # reuse is maximised even when not needed to fit: fewest arrays wins ties
        r = _max_reuse(tuple(mem), edges)
        if sum(com) + sum(mem) - sum(r) <= n_cim:
            return com, mem, r
        return None

    # upper end: every op at its minimum compute footprint, fed from main memory only
    hi = max(ceil(Fraction(m.ops) / min(m.tiles * m.eff, d_main * m.ai)) for m in models)
    best = attempt(hi)
    assert best is not None
    lo = 1
    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    optimal = True
    # feasibility is monotone in the target latency
    while lo < hi:
        if deadline is not None and time.monotonic() > deadline:
            optimal = False
            break
        mid = (lo + hi) // 2
        got = attempt(mid)
        if got is None:
            lo = mid + 1
        else:
            hi, best = mid, got
    com, mem, r = best
    return _CountSolution(hi, tuple(com), tuple(mem), tuple(r), optimal)


CacheInfo = namedtuple("CacheInfo", "hits misses maxsize currsize")


class _SolverCache:
    """Count solutions keyed by dimension data only, so repeated blocks share them.

    Timed-out (non-optimal) results are never stored.
    """

    def __init__(self, maxsize: int = 65536):
        self.maxsize = maxsize
        self._data: dict = {}
        self.hits = self.misses = 0

    def solve(self, args: tuple, timeout_s: float | None) -> _CountSolution | None:
        if args in self._data:
            self.hits += 1
            return self._data[args]
        self.misses += 1
        sol = _solve_counts(*args, timeout_s)
        if (sol is None or sol.optimal) and len(self._data) < self.maxsize:
            self._data[args] = sol
        return sol

    def info(self) -> CacheInfo:
        return CacheInfo(self.hits, self.misses, self.maxsize, len(self._data))

    def clear(self) -> None:
        self._data.clear()
        self.hits = self.misses = 0


_CACHE = _SolverCache()


def solver_cache_info() -> CacheInfo:
    return _CACHE.info()


def clear_solver_cache() -> None:
    _CACHE.clear()


# ------------------------------------------------------------------ placement

def _layout(g: ComputationGraph, rng: tuple[int, int], sol: _CountSolution,
            local_edges: list[tuple[int, int]]):
    i, j = rng
    ops = g.nodes[i:j + 1]
    reuse_in = [0] * len(ops)
    reuse_out = [0] * len(ops)
    for (a, b), r in zip(local_edges, sol.reuse):
        reuse_out[a] += r
        reuse_in[b] += r
    allocs = []
    for k, op in enumerate(ops):
        mem_out = reuse_out[k]
        allocs.append(OpAlloc(op.id, sol.com[k], sol.mem[k] - mem_out, mem_out))
    reuse = tuple((ops[a].id, ops[b].id, r) for (a, b), r in zip(local_edges, sol.reuse) if r)
    return allocs, reuse, reuse_in, reuse_out


def place(g: ComputationGraph, plan_ops: tuple[OpAlloc, ...], reuse: tuple[tuple[str, str, int], ...],
          hw: HardwareAbstraction, order: list[int] | None = None):
    """Assign concrete arrays: reuse pairs first, then compute, then memory.

    `order` lists array indices (row-major numbering) in the sequence they are
    handed out; the default is 0..n_cim-1.
    """
    slots = iter(order if order is not None else range(hw.n_cim))
    out = []
    for a, b, r in reuse:
        for _ in range(r):
            addr = hw.coord(next(slots))
            out.append((a, addr, Role.MEM_OUT))
            out.append((b, addr, Role.MEM_IN))
    for alloc in plan_ops:
        for _ in range(alloc.com):
            out.append((alloc.op_id, hw.coord(next(slots)), Role.COMPUTE))
    for alloc in plan_ops:
        shared_in = sum(r for _, b, r in reuse if b == alloc.op_id)
        shared_out = sum(r for a, _, r in reuse if a == alloc.op_id)
        for _ in range(alloc.mem_in - shared_in):
            out.append((alloc.op_id, hw.coord(next(slots)), Role.MEM_IN))
        for _ in range(alloc.mem_out - shared_out):
            out.append((alloc.op_id, hw.coord(next(slots)), Role.MEM_OUT))
    return tuple(out)


def _local_edges(g: ComputationGraph, rng: tuple[int, int], hw: HardwareAbstraction):
    i, j = rng
    local = [(a - i, b - i) for a, b in g.edges_within(i, j)]
    with_caps = tuple((a, b, reuse_bound(g.nodes[i + a], g.nodes[i + b], hw)) for a, b in local)
    return local, with_caps


def _models(g: ComputationGraph, rng: tuple[int, int], hw: HardwareAbstraction) -> tuple[_OpModel, ...]:
    i, j = rng
    return tuple(_OpModel(op.total_ops, op.arithmetic_intensity,
                          op.weight_tiles(hw.array_h, hw.array_w),
                          effective_op_per_cycle(op, hw))
                 for op in g.nodes[i:j + 1])


def min_tile_demand(g: ComputationGraph, rng: tuple[int, int], hw: HardwareAbstraction) -> int:
    i, j = rng
    return sum(op.weight_tiles(hw.array_h, hw.array_w) for op in g.nodes[i:j + 1])


def _solve(g, rng, hw, allow_memory, timeout_s, memoize, kind):
    i, j = rng
    if not (0 <= i <= j < len(g)):
        raise ValueError(f"bad segment range {rng}")
    models = _models(g, rng, hw)
    local, caps = _local_edges(g, rng, hw)
    args = (models, caps, hw.n_cim, hw.mem_data_per_cycle, hw.main_data_per_cycle, allow_memory)
    if memoize:
        sol = _CACHE.solve(args, timeout_s)
    else:
        sol = _solve_counts(*args, timeout_s)
    if sol is None:
        return None
    allocs, reuse, _, _ = _layout(g, rng, sol, local)
    plan = AllocationPlan(rng, tuple(allocs), reuse, place(g, tuple(allocs), reuse, hw),
                          kind=kind, optimal=sol.optimal)
    cost = SegmentCost.of(plan, g, hw)
    return plan, cost


def solve_segment(g: ComputationGraph, rng: tuple[int, int], hw: HardwareAbstraction,
                  timeout_s: float | None = 10.0, memoize: bool = True):
    """Optimal dual-mode allocation for operators rng[0]..rng[1] (inclusive, 0-based).

    Returns (plan, cost), or None when the weight tiles alone exceed the chip.
    The result minimises the slowest operator's latency; ties go to the fewest
    arrays, then the fewest memory arrays. If `timeout_s` runs out the best
    feasible plan found is returned with ``plan.optimal == False``.
    """
    return _solve(g, rng, hw, True, timeout_s, memoize, "dual")


def static_baseline(g: ComputationGraph, rng: tuple[int, int], hw: HardwareAbstraction,
                    timeout_s: float | None = 10.0, memoize: bool = True):
    """All arrays in compute mode; operands stream from main memory only."""
    return _solve(g, rng, hw, False, timeout_s, memoize, "baseline")


def replace_placement(plan: AllocationPlan, g: ComputationGraph, hw: HardwareAbstraction,
                      order: list[int]) -> AllocationPlan:
    return AllocationPlan(plan.segment, plan.ops, plan.reuse, place(g, plan.ops, plan.reuse, hw, order),
                          kind=plan.kind, optimal=plan.optimal)


# ------------------------------------------------------------------ validation

def validate_plan(plan: AllocationPlan, g: ComputationGraph, hw: HardwareAbstraction) -> list[str]:
    """Return every constraint the plan breaks (empty list when valid)."""
    errors = []
    i, j = plan.segment
    seg_ids = {n.id: k for k, n in enumerate(g.nodes) if i <= k <= j}
    seen: set[tuple[str, tuple[int, int]]] = set()
    by_addr: dict[tuple[int, int], list[tuple[str, Role]]] = {}
    for op, addr, role in plan.assignments:
        if op not in seg_ids:
            errors.append(f"{op} is not in segment {plan.segment}")
            continue
        if not hw.in_grid(addr):
            errors.append(f"array {addr} outside grid {hw.grid}")
        if (op, addr) in seen:
            errors.append(f"array {addr} holds more than one role for {op}")
        seen.add((op, addr))
        by_addr.setdefault(addr, []).append((op, role))

    shared: dict[tuple[str, str], int] = {}
    for addr, users in sorted(by_addr.items()):
        if len(users) == 1:
            continue
        ok = False
        if len(users) == 2:
            (o1, r1), (o2, r2) = users
            if r1 is Role.MEM_IN and r2 is Role.MEM_OUT:
                (o1, r1), (o2, r2) = (o2, r2), (o1, r1)
            if r1 is Role.MEM_OUT and r2 is Role.MEM_IN and (seg_ids[o1], seg_ids[o2]) in g.edges:
                ok = True
                shared[(o1, o2)] = shared.get((o1, o2), 0) + 1
        if not ok:
            errors.append(f"array {addr} shared by {users} without an output->input dependency")

    for (a, b), n in shared.items():
        bound = reuse_bound(g.node(a), g.node(b), hw)
        if n > bound:
            errors.append(f"reuse {a}->{b} uses {n} arrays, bound is {bound}")

    if len(by_addr) > hw.n_cim:
        errors.append(f"{len(by_addr)} arrays used, chip has {hw.n_cim}")

    for k in range(i, j + 1):
        op = g.nodes[k]
        com = sum(1 for o, _, r in plan.assignments if o == op.id and r is Role.COMPUTE)
        need = op.weight_tiles(hw.array_h, hw.array_w)
        if com < need:
            errors.append(f"{op.id}: {com} compute arrays, weights need {need}")
    return errors


def check_plan(plan: AllocationPlan, g: ComputationGraph, hw: HardwareAbstraction) -> None:
    errors = validate_plan(plan, g, hw)
    if errors:
        raise PlanError("; ".join(errors))
