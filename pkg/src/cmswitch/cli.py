from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import codegen, sim
from .deha import HardwareConfigError, load_hw
from .graph import GraphError, load_graph, partition_oversized
from .pipeline import CompileOptions, compile, write_outputs
from .segmenter import InfeasibleError

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmswitch", description="Dual-mode CIM compiler")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("compile", help="compile a graph for a chip config")
    c.add_argument("--graph", required=True)
    c.add_argument("--hw", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--baseline", action="store_true", help="also compile the all-compute baseline")
    c.add_argument("--timeout-s", type=float, default=10.0)
    c.add_argument("--refine", action="store_true", help="re-place segments to cut mode switches")
    c.add_argument("--emit-report", action="store_true")

    s = sub.add_parser("simulate", help="replay a program and print its latency report")
    s.add_argument("--program", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--hw", required=True)

    k = sub.add_parser("check", help="static mode-coverage check")
    k.add_argument("--program", required=True)
    k.add_argument("--hw", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "compile":
            opts = CompileOptions(baseline=args.baseline, timeout_s=args.timeout_s, refine=args.refine)
            c = compile(args.graph, args.hw, opts)
            for path in write_outputs(c, args.out, emit_report=args.emit_report):
                print(path)
            line = f"total_cycles={c.report.total_cycles} segments={len(c.result.segments)}"
            if c.report.speedup is not None:
                line += f" baseline={c.report.baseline_total} speedup={c.report.speedup:.3f}"
            print(line)
        elif args.cmd == "simulate":
            hw = load_hw(args.hw)
            # programs refer to the split operators the compiler produced
            g = partition_oversized(load_graph(args.graph), hw)
            prog = codegen.parse(Path(args.program).read_text(encoding="utf-8"), hw)
            rep = sim.run(prog, g, hw)
            print(json.dumps(rep.to_dict(), indent=2))
        else:
            hw = load_hw(args.hw)
            prog = codegen.parse(Path(args.program).read_text(encoding="utf-8"), hw)
            errors = codegen.check(prog, hw)
            for e in errors:
                print(e)
            if errors:
                return EXIT_INPUT
            print("ok")
    except (GraphError, HardwareConfigError, codegen.ProgramSyntaxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except sim.LegalityError as exc:
        print(f"illegal program: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
