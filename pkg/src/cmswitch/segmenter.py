"""Cut the operator chain into serially executed segments.

The DP state is the last segment (i, j) together with which candidate plan it
runs (the dual-mode optimum or the all-compute plan), so the transition into the
next segment can be priced exactly against the realised predecessor.

Chip-state convention used throughout (compiler, code generator, simulator):
the chip boots with every array in memory mode; an array the current segment
does not use sits in memory mode. Hence a transition switches exactly the
arrays whose compute membership differs between the two segments.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import ceil, inf

from .allocator import (AllocationPlan, Role, SegmentCost, min_tile_demand,
                        replace_placement, solve_segment, static_baseline)
from .deha import HardwareAbstraction
from .graph import ComputationGraph

log = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """Some operator cannot be placed on the chip even on its own."""


@dataclass(frozen=True)
class TransitionCost:
    wb_cycles: int
    switch_cycles: int
    rewrite_cycles: int
    switch_m_to_c: int = 0
    switch_c_to_m: int = 0
    writeback_elements: int = 0

    @property
    def total(self) -> int:
        return self.wb_cycles + self.switch_cycles + self.rewrite_cycles


@dataclass(frozen=True)
class Segment:
    range: tuple[int, int]
    plan: AllocationPlan
    cost: SegmentCost
    transition: TransitionCost


@dataclass
class SegmentationResult:
    segments: list[Segment]
    total_cycles: int
    dp_table_stats: dict[str, int] = field(default_factory=dict)

    def ranges(self) -> list[tuple[int, int]]:
        return [s.range for s in self.segments]


def writeback_items(prev: AllocationPlan | None, nxt: AllocationPlan, g: ComputationGraph,
                    hw: HardwareAbstraction) -> list[tuple[str, int]]:
    """(op_id, elements) that must go to main memory before `nxt` starts.

    An output of `prev` is live when a consumer lies past `prev`'s last op and
    that edge is not flagged consume-in-place. When every such consumer sits in
    `nxt`, the part of the output resident in arrays that `nxt` reuses directly
    as its consumer's input buffer stays on chip.
    """
    if prev is None:
        return []
    i, j = prev.segment
    ni, nj = nxt.segment
    next_in = {}
    for op, addr, role in nxt.assignments:
        if role is Role.MEM_IN:
            next_in.setdefault(addr, set()).add(op)
    items = []
    for a in range(i, j + 1):
        src = g.nodes[a]
        consumers = [b for b in g.successors(a) if b > j and g.nodes[b].id not in src.consume_in_place]
        if not consumers:
            continue
        volume = src.output_volume
        if all(ni <= b <= nj for b in consumers):
            consumer_ids = {g.nodes[b].id for b in consumers}
            kept = sum(1 for addr in prev.arrays_of(src.id, Role.MEM_OUT)
                       if next_in.get(addr, set()) & consumer_ids)
            volume = max(0, volume - kept * hw.array_cells)
        if volume:
            items.append((src.id, volume))
    return items


def transition_cost(prev: AllocationPlan | None, nxt: AllocationPlan, g: ComputationGraph,
                    hw: HardwareAbstraction) -> TransitionCost:
    """Write-back + mode switches + weight rewrite on entry to `nxt`.

    ``prev=None`` is the boot state: all arrays in memory mode, nothing live.
    """
    before = prev.compute_arrays if prev is not None else set()
    after = nxt.compute_arrays
    m2c = len(after - before)
    c2m = len(before - after)
    swc = hw.switch_m_to_c_cycles * m2c + hw.switch_c_to_m_cycles * c2m
    rw = max(a.com for a in nxt.ops) * hw.weight_write_cycles
    elements = sum(v for _, v in writeback_items(prev, nxt, g, hw))
    wb = ceil(elements / hw.main_data_per_cycle)
    return TransitionCost(wb, swc, rw, m2c, c2m, elements)


class _Candidates:
    """Lazily solved candidate plans per segment range."""

    def __init__(self, g: ComputationGraph, hw: HardwareAbstraction, baseline_only: bool,
                 timeout_s: float | None, memoize: bool):
        self.g, self.hw = g, hw
        self.baseline_only = baseline_only
        self.timeout_s = timeout_s
        self.memoize = memoize
        self._cache: dict[tuple[int, int], list[tuple[AllocationPlan, SegmentCost]]] = {}
        self.pruned = 0
        self.solved = 0

    def __call__(self, rng: tuple[int, int]) -> list[tuple[AllocationPlan, SegmentCost]]:
        if rng in self._cache:
            return self._cache[rng]
        out = []
        if min_tile_demand(self.g, rng, self.hw) > self.hw.n_cim:
            self.pruned += 1
        else:
            self.solved += 1
            base = static_baseline(self.g, rng, self.hw, self.timeout_s, self.memoize)
            if not self.baseline_only:
                dual = solve_segment(self.g, rng, self.hw, self.timeout_s, self.memoize)
                out.append(dual)
                if base[0].ops != dual[0].ops:
                    out.append(base)
            else:
                out.append(base)
            for plan, _ in out:
                if not plan.optimal:
                    log.warning("segment %s: solver timed out, using best incumbent", rng)
        self._cache[rng] = out
        return out


def segment(g: ComputationGraph, hw: HardwareAbstraction, *, baseline: bool = False,
            timeout_s: float | None = 10.0, memoize: bool = True,
            max_segment_len: int | None = None) -> SegmentationResult:
    """Minimum-latency contiguous segmentation.

    ``baseline=True`` restricts every segment to the all-compute plan; otherwise
    each segment may run its dual-mode optimum or the all-compute plan,
    whichever gives the cheaper total once transitions are priced.
    """
    m = len(g)
    if m == 0:
        return SegmentationResult([], 0, {"cells": 0, "pruned": 0, "transitions": 0})
    cands = _Candidates(g, hw, baseline, timeout_s, memoize)
    # best[(i, j, c)] = (cost of ops 0..j with last segment (i, j) on candidate c, back-pointer)
    best: dict[tuple[int, int, int], tuple[float, tuple[int, int, int] | None, TransitionCost | None]] = {}
    ends_at: dict[int, list[tuple[int, int, int]]] = {}
    transitions = 0
    for j in range(m):
        for i in range(j, -1, -1):
            if max_segment_len is not None and j - i + 1 > max_segment_len:
                break
            options = cands((i, j))
            if not options:
                # growing the segment leftwards only adds tiles
                break
            for c, (plan, cost) in enumerate(options):
                if i == 0:
                    tr = transition_cost(None, plan, g, hw)
                    best[(i, j, c)] = (cost.intra_latency + tr.total, None, tr)
                    transitions += 1
                    continue
                top: tuple[float, tuple[int, int, int] | None, TransitionCost | None] = (inf, None, None)
                for key in ends_at.get(i - 1, []):
                    prev_total = best[key][0]
                    prev_plan = cands((key[0], key[1]))[key[2]][0]
                    tr = transition_cost(prev_plan, plan, g, hw)
                    transitions += 1
                    total = prev_total + cost.intra_latency + tr.total
                    if total < top[0]:
                        top = (total, key, tr)
                if top[1] is not None:
                    best[(i, j, c)] = top
            for c in range(len(options)):
                if (i, j, c) in best:
                    ends_at.setdefault(j, []).append((i, j, c))
    finals = ends_at.get(m - 1, [])
    if not finals:
        raise InfeasibleError("graph cannot be segmented: some operator exceeds the chip")
    key = min(finals, key=lambda k: (best[k][0], k))
    chain = []
    while key is not None:
        chain.append(key)
        key = best[key][1]
    chain.reverse()
    segs = []
    for i, j, c in chain:
        plan, cost = cands((i, j))[c]
        segs.append(Segment((i, j), plan, cost, best[(i, j, c)][2]))
    total = sum(s.cost.intra_latency + s.transition.total for s in segs)
    stats = {"cells": cands.solved + cands.pruned, "solved": cands.solved, "pruned": cands.pruned,
             "transitions": transitions}
    return SegmentationResult(segs, total, stats)


def price(g: ComputationGraph, hw: HardwareAbstraction,
          chosen: list[tuple[AllocationPlan, SegmentCost]]) -> SegmentationResult:
    """Cost a fixed sequence of segment plans under the transition model."""
    segs = []
    prev = None
    for plan, cost in chosen:
        tr = transition_cost(prev, plan, g, hw)
        segs.append(Segment(plan.segment, plan, cost, tr))
        prev = plan
    total = sum(s.cost.intra_latency + s.transition.total for s in segs)
    return SegmentationResult(segs, total, {})


def contiguous_splits(m: int):
    """All 2^(m-1) ways to cut 0..m-1 into contiguous ranges."""
    for cuts in itertools.product((False, True), repeat=m - 1):
        ranges, start = [], 0
        for k, cut in enumerate(cuts):
            if cut:
                ranges.append((start, k))
                start = k + 1
        ranges.append((start, m - 1))
        yield ranges


def refine(result: SegmentationResult, g: ComputationGraph, hw: HardwareAbstraction) -> SegmentationResult:
    """Re-place each segment so its compute arrays overlap the predecessor's.

    A new placement is kept only if it does not raise the cost of the two
    transitions it touches, so the total never increases.
    """
    plans = [s.plan for s in result.segments]
    costs = [s.cost for s in result.segments]
    for k in range(1, len(plans)):
        prev, cur = plans[k - 1], plans[k]
        prev_c = sorted(i for i in range(hw.n_cim) if hw.coord(i) in prev.compute_arrays)
        rest = [i for i in range(hw.n_cim) if hw.coord(i) not in prev.compute_arrays]
        n_com = sum(a.com for a in cur.ops)
        n_reuse = sum(r for _, _, r in cur.reuse)
        comp = prev_c[:n_com]
        comp += rest[:n_com - len(comp)]
        taken = set(comp)
        mem = [i for i in rest if i not in taken] + [i for i in prev_c if i not in taken]
        order = mem[:n_reuse] + comp + mem[n_reuse:]
        cand = replace_placement(cur, g, hw, order)

        def local(p: AllocationPlan) -> int:
            t = transition_cost(prev, p, g, hw).total
            if k + 1 < len(plans):
                t += transition_cost(p, plans[k + 1], g, hw).total
            return t

        if local(cand) <= local(cur):
            plans[k] = cand
    out = price(g, hw, list(zip(plans, costs)))
    out.dp_table_stats = dict(result.dp_table_stats, refined=1)
    return out
