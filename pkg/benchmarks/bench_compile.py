"""Compile wall time against operator count on repeated-block chains.

Each block is a small transformer layer (QKV, scores, context, projection,
two FFN matmuls). Identical blocks hit the segment-solver cache, so time per
operator should stay roughly flat as the chain grows.

    python benchmarks/bench_compile.py --blocks 4 8 16 32 64
"""

import argparse
import math
import time
from pathlib import Path

from cmswitch.allocator import clear_solver_cache, solver_cache_info
from cmswitch.deha import load_hw
from cmswitch.graph import chain
from cmswitch.pipeline import CompileOptions, compile_graph

ROOT = Path(__file__).resolve().parent.parent


def block_dims(seq: int, d: int) -> list[tuple[int, int, int]]:
    return [(seq, d, 3 * d), (seq, d, seq), (seq, seq, d), (seq, d, d), (seq, d, 4 * d), (seq, 4 * d, d)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    ap.add_argument("--seq", type=int, default=128)
    ap.add_argument("--d", type=int, default=768)
    ap.add_argument("--hw", default=str(ROOT / "configs" / "dynaplasia.toml"))
    ap.add_argument("--no-memo", action="store_true", help="disable the solver cache")
    args = ap.parse_args()

    hw = load_hw(args.hw)
    opts = CompileOptions(memoize=not args.no_memo)
    rows = []
    print(f"{'blocks':>6} {'ops':>5} {'seconds':>9} {'ms/op':>8} {'cache hits':>10} {'segments':>8}")
    for b in args.blocks:
        clear_solver_cache()
        g = chain(block_dims(args.seq, args.d) * b)
        t0 = time.perf_counter()
        c = compile_graph(g, hw, opts)
        dt = time.perf_counter() - t0
        hits = solver_cache_info().hits
        rows.append((len(c.graph), dt))
        print(f"{b:>6} {len(c.graph):>5} {dt:>9.3f} {1000 * dt / len(c.graph):>8.2f} {hits:>10} "
              f"{len(c.result.segments):>8}")
    if len(rows) >= 2:
        (n0, t0), (n1, t1) = rows[len(rows) // 2], rows[-1]
        if n1 > n0:
            print(f"log-log slope over {n0}..{n1} ops: {math.log(t1 / t0) / math.log(n1 / n0):.2f} (1.0 = linear)")


if __name__ == "__main__":
    main()
