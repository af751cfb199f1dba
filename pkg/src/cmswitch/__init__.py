"""Compiler for dual-mode (compute/memory) compute-in-memory accelerators."""

from .allocator import AllocationPlan, SegmentCost, op_latency, solve_segment, static_baseline
from .codegen import MetaProgram, check, emit, parse, to_text
from .deha import HardwareAbstraction, load_hw
from .graph import ComputationGraph, OperatorNode, load_graph, partition_oversized
from .pipeline import CompileOptions, compile, compile_graph
from .segmenter import SegmentationResult, segment, transition_cost
from .sim import LatencyReport, run

__all__ = [
    "AllocationPlan", "SegmentCost", "op_latency", "solve_segment", "static_baseline",
    "MetaProgram", "check", "emit", "parse", "to_text",
    "HardwareAbstraction", "load_hw",
    "ComputationGraph", "OperatorNode", "load_graph", "partition_oversized",
    "CompileOptions", "compile", "compile_graph",
    "SegmentationResult", "segment", "transition_cost",
    "LatencyReport", "run",
]
