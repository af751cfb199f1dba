"""Analytic replay of a meta-operator program against the hardware abstraction.

Cycle accounting mirrors the compiler's cost model, so for any compiled
program the simulated total must equal the predicted total exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import ceil
from pathlib import Path
from typing import Any

from .allocator import op_latency
from .codegen import (Compute, Load, MetaProgram, ParallelBegin, ParallelEnd, Store,
                      Switch, WriteWeights, format_op)
from .deha import HardwareAbstraction
from .graph import ComputationGraph
from .segmenter import SegmentationResult


class LegalityError(RuntimeError):
    def __init__(self, msg: str, op_index: int):
        super().__init__(f"op {op_index}: {msg}")
        self.op_index = op_index


@dataclass
class ChipState:
    compute: set[tuple[int, int]] = field(default_factory=set)
    weights_loaded: dict[tuple[int, int], str] = field(default_factory=dict)
    cycle_count: int = 0

    def mode(self, addr: tuple[int, int]) -> str:
        return "Compute" if addr in self.compute else "Memory"


@dataclass
class OpReport:
    id: str
    cycles: int
    com: int
    mem: int


@dataclass
class SegmentReport:
    range: list[int]
    intra: int
    wb: int
    swc: int
    rw: int
    mem_ratio: float
    ops: list[OpReport]


@dataclass
class LatencyReport:
    total_cycles: int
    segments: list[SegmentReport]
    baseline_total: int | None = None
    speedup: float | None = None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if self.baseline_total is None:
            d.pop("baseline_total")
            d.pop("speedup")
        return d

    def with_baseline(self, baseline_total: int) -> LatencyReport:
        return LatencyReport(self.total_cycles, self.segments, baseline_total,
                             round(baseline_total / self.total_cycles, 6))


def run(prog: MetaProgram, g: ComputationGraph, hw: HardwareAbstraction,
        trace: list[tuple[int, int]] | None = None) -> LatencyReport:
    """Replay `prog` and return its latency breakdown.

    Raises LegalityError on compute against a memory-mode array, missing or
    stale weights, or memory traffic through a compute-mode array. If `trace`
    is given, (op index, cycle count after the op) pairs are appended to it.
    """
    state = ChipState()
    segments = []
    wb_elems = m2c = c2m = 0
    writes: dict[str, int] = {}
    body: dict[str, dict[str, Any]] | None = None
    eb = hw.element_bytes

    def in_grid(addr, idx):
        if not hw.in_grid(addr):
            raise LegalityError(f"array {addr} outside grid {hw.grid}", idx)

    for idx, op in enumerate(prog.ops):
        if isinstance(op, Switch):
            in_grid(op.addr, idx)
            if op.to == "TOC":
                state.compute.add(op.addr)
                m2c += 1
            else:
                state.compute.discard(op.addr)
                c2m += 1
            state.weights_loaded.pop(op.addr, None)
        elif isinstance(op, WriteWeights):
            in_grid(op.addr, idx)
            if op.addr not in state.compute:
                raise LegalityError(f"weight write to memory-mode array {op.addr}", idx)
            state.weights_loaded[op.addr] = op.op_id
            writes[op.op_id] = writes.get(op.op_id, 0) + 1
        elif isinstance(op, (Load, Store)):
            end = op.src if isinstance(op, Load) else op.dst
            if end != "main":
                in_grid(end, idx)
                if end in state.compute:
                    raise LegalityError(f"{format_op(op)} touches compute-mode array {end}", idx)
                if body is not None:
                    body.setdefault(op.op_id, {"com": None, "mem": set()})["mem"].add(end)
            elif body is None:
                if isinstance(op, Load):
                    raise LegalityError("main-memory load outside a parallel block", idx)
                wb_elems += op.nbytes // eb
        elif isinstance(op, Compute):
            if body is None:
                raise LegalityError("compute outside a parallel block", idx)
            for a in op.arrays:
                in_grid(a, idx)
                if a not in state.compute:
                    raise LegalityError(f"compute on memory-mode array {a}", idx)
                if state.weights_loaded.get(a) != op.op_id:
                    raise LegalityError(
                        f"array {a} holds weights of {state.weights_loaded.get(a)}, not {op.op_id}", idx)
            entry = body.setdefault(op.op_id, {"com": None, "mem": set()})
            if entry["com"] is not None:
                raise LegalityError(f"{op.op_id} computed twice in one block", idx)
            entry["com"] = len(op.arrays)
        elif isinstance(op, ParallelBegin):
            if body is not None:
                raise LegalityError("nested parallel block", idx)
            wb = ceil(wb_elems / hw.main_data_per_cycle)
            swc = hw.switch_m_to_c_cycles * m2c + hw.switch_c_to_m_cycles * c2m
            rw = max(writes.values(), default=0) * hw.weight_write_cycles
            state.cycle_count += wb + swc + rw
            pending = (wb, swc, rw)
            body = {}
        elif isinstance(op, ParallelEnd):
            if body is None:
                raise LegalityError("'}' without parallel block", idx)
            rows = []
            idxs = []
            mem_arrays: set = set()
            com_arrays = 0
            for op_id, entry in body.items():
                if entry["com"] is None:
                    continue
                try:
                    k = g.index(op_id)
                except KeyError:
                    raise LegalityError(f"unknown operator {op_id!r}", idx) from None
                try:
                    cyc = op_latency(g.nodes[k], entry["com"], len(entry["mem"]), hw)
                except ValueError as exc:
                    raise LegalityError(str(exc), idx) from None
                rows.append(OpReport(op_id, cyc, entry["com"], len(entry["mem"])))
                idxs.append(k)
                mem_arrays |= entry["mem"]
                com_arrays += entry["com"]
            intra = max((r.cycles for r in rows), default=0)
            state.cycle_count += intra
            used = len(mem_arrays) + com_arrays
            ratio = round(len(mem_arrays) / used, 6) if used else 0.0
            wb, swc, rw = pending
            segments.append(SegmentReport([min(idxs, default=-1), max(idxs, default=-1)],
                                          intra, wb, swc, rw, ratio, rows))
            wb_elems = m2c = c2m = 0
            writes = {}
            body = None
        if trace is not None:
            trace.append((idx, state.cycle_count))
    # trailing transition work with no block after it
    tail = ceil(wb_elems / hw.main_data_per_cycle) + hw.switch_m_to_c_cycles * m2c \
        + hw.switch_c_to_m_cycles * c2m + max(writes.values(), default=0) * hw.weight_write_cycles
    state.cycle_count += tail
    return LatencyReport(state.cycle_count, segments)


def predicted_report(result: SegmentationResult, g: ComputationGraph,
                     hw: HardwareAbstraction) -> LatencyReport:
    """The compiler's own view of the schedule, in report form."""
    segments = []
    for s in result.segments:
        rows = [OpReport(a.op_id, s.cost.per_op_latency[a.op_id], a.com, a.mem) for a in s.plan.ops]
        mem = len(s.plan.memory_arrays)
        used = s.plan.arrays_used
        segments.append(SegmentReport(list(s.range), s.cost.intra_latency, s.transition.wb_cycles,
                                      s.transition.switch_cycles, s.transition.rewrite_cycles,
                                      round(mem / used, 6) if used else 0.0, rows))
    return LatencyReport(result.total_cycles, segments)


def emit_report(rep: LatencyReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
