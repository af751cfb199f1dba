"""Meta-operator flow: emission, parsing and static mode checking.

Text format, one op per line (``#`` starts a comment)::

    #! hw=<hash> graph=<hash>
    mem.store op=<id> n=<bytes> dst=main
    CM.switch TOM (x,y)
    CM.switch TOC (x,y)
    CM.write_w op=<id> (x,y)
    parallel {
        mem.load op=<id> n=<bytes> src=main|arr(x,y)
        cim.compute op=<id> arrays=[(x,y),...]
        mem.store op=<id> n=<bytes> dst=main|arr(x,y)
    }
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Union

from .allocator import Role
from .deha import HardwareAbstraction
from .graph import ComputationGraph
from .segmenter import SegmentationResult, writeback_items

Addr = tuple[int, int]
Endpoint = Union[str, Addr]  # "main" or an array address

INDENT = "    "


@dataclass(frozen=True)
class Switch:
    addr: Addr
    to: str  # "TOM" | "TOC"


@dataclass(frozen=True)
class WriteWeights:
    op_id: str
    addr: Addr


@dataclass(frozen=True)
class Load:
    op_id: str
    nbytes: int
    src: Endpoint


@dataclass(frozen=True)
class Store:
    op_id: str
    nbytes: int
    dst: Endpoint


@dataclass(frozen=True)
class Compute:
    op_id: str
    arrays: tuple[Addr, ...]


@dataclass(frozen=True)
class ParallelBegin:
    segment_idx: int


@dataclass(frozen=True)
class ParallelEnd:
    pass


MetaOp = Union[Switch, WriteWeights, Load, Store, Compute, ParallelBegin, ParallelEnd]


@dataclass(frozen=True)
class MetaProgram:
    hw_hash: str | None
    graph_hash: str | None
    ops: tuple[MetaOp, ...]

    def blocks(self) -> list[tuple[list[MetaOp], list[MetaOp]]]:
        """Split into (transition ops, parallel-block body) pairs, in order."""
        out = []
        pre: list[MetaOp] = []
        body: list[MetaOp] | None = None
        for op in self.ops:
            if isinstance(op, ParallelBegin):
                body = []
            elif isinstance(op, ParallelEnd):
                out.append((pre, body or []))
                pre, body = [], None
            elif body is not None:
                body.append(op)
            else:
                pre.append(op)
        if pre:
            out.append((pre, []))
        return out


class ProgramSyntaxError(ValueError):
    def __init__(self, msg: str, line: int, col: int = 1):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


def graph_fingerprint(g: ComputationGraph) -> str:
    return hashlib.sha256(json.dumps(g.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------- emit

def emit(result: SegmentationResult, g: ComputationGraph, hw: HardwareAbstraction) -> MetaProgram:
    ops: list[MetaOp] = []
    eb = hw.element_bytes
    cap_bytes = hw.array_cells * eb
    prev = None
    for k, seg in enumerate(result.segments):
        plan = seg.plan
        for _, addr, _ in plan.assignments:
            if not hw.in_grid(addr):
                raise ValueError(f"segment {k} references array {addr} outside grid {hw.grid}")
        for op_id, elems in writeback_items(prev, plan, g, hw):
            ops.append(Store(op_id, elems * eb, "main"))
        before = prev.compute_arrays if prev is not None else set()
        after = plan.compute_arrays
        ops.extend(Switch(a, "TOM") for a in sorted(before - after))
        ops.extend(Switch(a, "TOC") for a in sorted(after - before))
        for alloc in plan.ops:
            ops.extend(WriteWeights(alloc.op_id, a) for a in plan.arrays_of(alloc.op_id, Role.COMPUTE))
        ops.append(ParallelBegin(k))
        for alloc in plan.ops:
            node = g.node(alloc.op_id)
            ops.append(Load(node.id, node.input_volume * eb, "main"))
            ops.extend(Load(node.id, cap_bytes, a) for a in plan.arrays_of(node.id, Role.MEM_IN))
            ops.append(Compute(node.id, tuple(plan.arrays_of(node.id, Role.COMPUTE))))
            ops.extend(Store(node.id, cap_bytes, a) for a in plan.arrays_of(node.id, Role.MEM_OUT))
            if not g.successors(g.index(node.id)):
                ops.append(Store(node.id, node.output_volume * eb, "main"))
        ops.append(ParallelEnd())
        prev = plan
    return MetaProgram(hw.fingerprint(), graph_fingerprint(g), tuple(ops))


def _addr(a: Addr) -> str:
    return f"({a[0]},{a[1]})"


def _end(e: Endpoint) -> str:
    return "main" if e == "main" else f"arr{_addr(e)}"


def format_op(op: MetaOp) -> str:
    if isinstance(op, Switch):
        return f"CM.switch {op.to} {_addr(op.addr)}"
    if isinstance(op, WriteWeights):
        return f"CM.write_w op={op.op_id} {_addr(op.addr)}"
    if isinstance(op, Load):
        return f"mem.load op={op.op_id} n={op.nbytes} src={_end(op.src)}"
    if isinstance(op, Store):
        return f"mem.store op={op.op_id} n={op.nbytes} dst={_end(op.dst)}"
    if isinstance(op, Compute):
        return f"cim.compute op={op.op_id} arrays=[{','.join(_addr(a) for a in op.arrays)}]"
    if isinstance(op, ParallelBegin):
        return "parallel {"
    if isinstance(op, ParallelEnd):
        return "}"
    raise TypeError(op)


def to_text(prog: MetaProgram) -> str:
    lines = []
    if prog.hw_hash is not None or prog.graph_hash is not None:
        lines.append(f"#! hw={prog.hw_hash} graph={prog.graph_hash}")
    inside = False
    for op in prog.ops:
        if isinstance(op, ParallelEnd):
            inside = False
        lines.append((INDENT if inside else "") + format_op(op))
        if isinstance(op, ParallelBegin):
            inside = True
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- parse

_ID = r"[A-Za-z0-9_.:\-]+"
_ADDR = r"\(\s*(\d+)\s*,\s*(\d+)\s*\)"
_RE = {
    "switch": re.compile(rf"CM\.switch\s+(TOM|TOC)\s+{_ADDR}$"),
    "write_w": re.compile(rf"CM\.write_w\s+op=({_ID})\s+{_ADDR}$"),
    "load": re.compile(rf"mem\.load\s+op=({_ID})\s+n=(\d+)\s+src=(main|arr{_ADDR})$"),
    "store": re.compile(rf"mem\.store\s+op=({_ID})\s+n=(\d+)\s+dst=(main|arr{_ADDR})$"),
    "compute": re.compile(rf"cim\.compute\s+op=({_ID})\s+arrays=\[(.*)\]$"),
}
_HEADER = re.compile(r"#!\s*hw=(\S+)\s+graph=(\S+)\s*$")
_ADDR_RE = re.compile(_ADDR)


def parse(text: str, hw: HardwareAbstraction | None = None) -> MetaProgram:
    """Parse program text; with `hw`, addresses are also checked against the grid."""
    hw_hash = graph_hash = None
    ops: list[MetaOp] = []
    depth = 0
    block = 0
    open_line = 0

    def addr_at(lineno: int, line: str, x: str, y: str, pos: int) -> Addr:
        a = (int(x), int(y))
        if hw is not None and not hw.in_grid(a):
            raise ProgramSyntaxError(f"address {a} outside grid {hw.grid}", lineno, pos + 1)
        return a

    for lineno, raw in enumerate(text.split("\n"), start=1):
        if lineno == 1 and raw.startswith("#!"):
            m = _HEADER.match(raw)
            if not m:
                raise ProgramSyntaxError("malformed header", 1)
            hw_hash, graph_hash = m.group(1), m.group(2)
            continue
        code = raw.split("#", 1)[0].rstrip()
        stripped = code.lstrip()
        if not stripped:
            continue
        col = len(code) - len(stripped) + 1
        base = col - 1

        if stripped == "parallel {":
            if depth:
                raise ProgramSyntaxError("nested parallel block", lineno, col)
            depth, open_line = 1, lineno
            ops.append(ParallelBegin(block))
            block += 1
            continue
        if stripped == "}":
            if not depth:
                raise ProgramSyntaxError("'}' without open parallel block", lineno, col)
            depth = 0
            ops.append(ParallelEnd())
            continue

        if m := _RE["switch"].match(stripped):
            if depth:
                raise ProgramSyntaxError("CM.switch inside parallel block", lineno, col)
            ops.append(Switch(addr_at(lineno, raw, m.group(2), m.group(3), base + m.start(2)), m.group(1)))
        elif m := _RE["write_w"].match(stripped):
            if depth:
                raise ProgramSyntaxError("CM.write_w inside parallel block", lineno, col)
            ops.append(WriteWeights(m.group(1), addr_at(lineno, raw, m.group(2), m.group(3), base + m.start(2))))
        elif m := _RE["load"].match(stripped):
            src = "main" if m.group(3) == "main" else addr_at(lineno, raw, m.group(4), m.group(5), base + m.start(4))
            ops.append(Load(m.group(1), int(m.group(2)), src))
        elif m := _RE["store"].match(stripped):
            dst = "main" if m.group(3) == "main" else addr_at(lineno, raw, m.group(4), m.group(5), base + m.start(4))
            ops.append(Store(m.group(1), int(m.group(2)), dst))
        elif m := _RE["compute"].match(stripped):
            if not depth:
                raise ProgramSyntaxError("cim.compute outside parallel block", lineno, col)
            body = m.group(2)
            start = base + m.start(2)
            arrays = []
            rest = _ADDR_RE.sub("", body).replace(",", "").strip()
            if rest:
                raise ProgramSyntaxError(f"bad array list [{body}]", lineno, start + 1)
            for am in _ADDR_RE.finditer(body):
                arrays.append(addr_at(lineno, raw, am.group(1), am.group(2), start + am.start()))
            ops.append(Compute(m.group(1), tuple(arrays)))
        else:
            word = stripped.split()[0]
            raise ProgramSyntaxError(f"unknown meta-operator {word!r}", lineno, col)
    if depth:
        raise ProgramSyntaxError("unclosed parallel block", open_line)
    return MetaProgram(hw_hash, graph_hash, tuple(ops))


# --------------------------------------------------------------- static check

def check(prog: MetaProgram, hw: HardwareAbstraction) -> list[str]:
    """Mode-coverage check: every array access happens in the right mode.

    Starts from the boot state (all arrays in memory mode, no weights) and
    replays switches and weight writes; returns a list of violations.
    """
    compute: set[Addr] = set()
    weights: dict[Addr, str] = {}
    errors = []
    for idx, op in enumerate(prog.ops):
        where = f"op {idx} ({format_op(op)})"
        addrs = []
        if isinstance(op, (Switch, WriteWeights)):
            addrs = [op.addr]
        elif isinstance(op, Compute):
            addrs = list(op.arrays)
        elif isinstance(op, Load) and op.src != "main":
            addrs = [op.src]
        elif isinstance(op, Store) and op.dst != "main":
            addrs = [op.dst]
        bad = [a for a in addrs if not hw.in_grid(a)]
        if bad:
            errors.append(f"{where}: address {bad[0]} outside grid {hw.grid}")
            continue

        if isinstance(op, Switch):
            if op.to == "TOC":
                compute.add(op.addr)
            else:
                compute.discard(op.addr)
            weights.pop(op.addr, None)
        elif isinstance(op, WriteWeights):
            if op.addr not in compute:
                errors.append(f"{where}: weight write to memory-mode array {op.addr}")
            else:
                weights[op.addr] = op.op_id
        elif isinstance(op, Compute):
            if not op.arrays:
                errors.append(f"{where}: compute with no arrays")
            for a in op.arrays:
                if a not in compute:
                    errors.append(f"{where}: compute on memory-mode array {a}")
                elif weights.get(a) != op.op_id:
                    errors.append(f"{where}: array {a} holds weights of {weights.get(a)}, not {op.op_id}")
        elif isinstance(op, (Load, Store)):
            for a in addrs:
                if a in compute:
                    errors.append(f"{where}: memory access to compute-mode array {a}")
    return errors
