"""End-to-end compile: load, split oversized ops, segment, emit, simulate, report."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from . import codegen, sim
from .deha import HardwareAbstraction, load_hw
from .graph import ComputationGraph, load_graph, partition_oversized
from .segmenter import SegmentationResult, refine, segment

log = logging.getLogger(__name__)


class CompileError(RuntimeError):
    pass


@dataclass(frozen=True)
class CompileOptions:
    baseline: bool = False
    timeout_s: float | None = 10.0
    refine: bool = False
    memoize: bool = True


@dataclass
class Compiled:
    program: codegen.MetaProgram
    result: SegmentationResult
    report: sim.LatencyReport
    graph: ComputationGraph
    hw: HardwareAbstraction


def compile_graph(g: ComputationGraph, hw: HardwareAbstraction,
                  opts: CompileOptions = CompileOptions()) -> Compiled:
    g = partition_oversized(g, hw)
    result = segment(g, hw, timeout_s=opts.timeout_s, memoize=opts.memoize)
    if opts.refine:
        result = refine(result, g, hw)
    program = codegen.emit(result, g, hw)
    report = sim.run(program, g, hw)
    if report.total_cycles != result.total_cycles:
        raise CompileError(
            f"simulated {report.total_cycles} cycles but compiler predicted {result.total_cycles}")
    if opts.baseline:
        base = segment(g, hw, baseline=True, timeout_s=opts.timeout_s, memoize=opts.memoize)
        report = report.with_baseline(base.total_cycles)
    log.info("compiled %d ops into %d segments, %d cycles", len(g), len(result.segments),
             result.total_cycles)
    return Compiled(program, result, report, g, hw)


def compile(graph_path: str | Path, hw_path: str | Path,
            opts: CompileOptions = CompileOptions()) -> Compiled:
    return compile_graph(load_graph(graph_path), load_hw(hw_path), opts)


def write_outputs(c: Compiled, out_dir: str | Path, emit_report: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "program.cms"]
    written[0].write_text(codegen.to_text(c.program), encoding="utf-8")
    if emit_report:
        written.append(out / "report.json")
        sim.emit_report(c.report, written[-1])
    return written
