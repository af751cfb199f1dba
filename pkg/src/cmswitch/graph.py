"""Operator-chain IR: loading, validation and greedy splitting of oversized operators."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import ceil
from pathlib import Path
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .deha import HardwareAbstraction

KINDS = ("MMM", "MVM")
_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")


class GraphError(ValueError):
    """Malformed or invalid graph description."""


@dataclass(frozen=True)
class OperatorNode:
    id: str
    kind: str
    M: int
    N: int
    K: int
    weight_bits: int = 8
    # destination ids whose edge from this node needs no write-back
    consume_in_place: frozenset[str] = field(default_factory=frozenset)

    @property
    def total_ops(self) -> int:
        return self.M * self.N * self.K

    @property
    def arithmetic_intensity(self) -> int:
        # N input elements feed N*K MACs
        return self.K

    @property
    def input_volume(self) -> int:
        return self.M * self.N

    @property
    def output_volume(self) -> int:
        return self.M * self.K

    def weight_tiles(self, array_h: int, array_w: int) -> int:
        return ceil(self.N / array_h) * ceil(self.K / array_w)

    def dims_key(self) -> tuple[str, int, int, int]:
        return (self.kind, self.M, self.N, self.K)


@dataclass(frozen=True)
class ComputationGraph:
    nodes: tuple[OperatorNode, ...]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        _validate(self.nodes, self.edges)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @cached_property
    def _pos(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def _adj(self) -> tuple[list[list[int]], list[list[int]]]:
        succ: list[list[int]] = [[] for _ in self.nodes]
        pred: list[list[int]] = [[] for _ in self.nodes]
        for a, b in sorted(self.edges):
            succ[a].append(b)
            pred[b].append(a)
        return succ, pred

    def index(self, op_id: str) -> int:
        try:
            return self._pos[op_id]
        except KeyError:
            raise KeyError(op_id) from None

    def node(self, op_id: str) -> OperatorNode:
        return self.nodes[self.index(op_id)]

    def successors(self, i: int) -> list[int]:
        return list(self._adj[0][i])

    def predecessors(self, j: int) -> list[int]:
        return list(self._adj[1][j])

    def edges_within(self, lo: int, hi: int) -> list[tuple[int, int]]:
        """Edges with both endpoints in the inclusive index range [lo, hi]."""
        succ = self._adj[0]
        return [(a, b) for a in range(lo, hi + 1) for b in succ[a] if b <= hi]

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for n in self.nodes:
            d: dict[str, Any] = {"id": n.id, "kind": n.kind, "M": n.M, "N": n.N, "K": n.K,
                                 "weight_bits": n.weight_bits}
            if n.consume_in_place:
                d["consume_in_place"] = sorted(n.consume_in_place)
            nodes.append(d)
        edges = [[self.nodes[a].id, self.nodes[b].id] for a, b in sorted(self.edges)]
        return {"nodes": nodes, "edges": edges}


def _validate(nodes: tuple[OperatorNode, ...], edges: frozenset[tuple[int, int]]) -> None:
    seen: set[str] = set()
    for n in nodes:
        if not _ID_RE.match(n.id):
            raise GraphError(f"invalid operator id {n.id!r}")
        if n.id in seen:
            raise GraphError(f"duplicate operator id {n.id!r}")
        seen.add(n.id)
        if n.kind not in KINDS:
            raise GraphError(f"operator {n.id!r}: unsupported kind {n.kind!r}")
        for name in ("M", "N", "K", "weight_bits"):
            v = getattr(n, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise GraphError(f"operator {n.id!r}: {name} must be a positive integer, got {v!r}")
        if n.kind == "MVM" and n.M != 1:
            raise GraphError(f"operator {n.id!r}: MVM requires M=1")
    for a, b in edges:
        if not (0 <= a < len(nodes) and 0 <= b < len(nodes)):
            raise GraphError(f"dangling edge ({a}, {b})")
        if a >= b:
            raise GraphError(
                f"order violates dependency: edge {nodes[a].id!r} -> {nodes[b].id!r}")
    for i, n in enumerate(nodes):
        dests = {nodes[b].id for (a, b) in edges if a == i}
        extra = n.consume_in_place - dests
        if extra:
            raise GraphError(
                f"operator {n.id!r}: consume_in_place names non-successors {sorted(extra)}")


def graph_from_dict(data: Any) -> ComputationGraph:
    if not isinstance(data, dict) or "nodes" not in data:
        raise GraphError("graph must be an object with a 'nodes' list")
    raw_nodes = data["nodes"]
    raw_edges = data.get("edges", [])
    if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise GraphError("'nodes' and 'edges' must be lists")
    nodes = []
    for rn in raw_nodes:
        if not isinstance(rn, dict):
            raise GraphError(f"node entry must be an object, got {rn!r}")
        missing = [k for k in ("id", "kind", "M", "N", "K") if k not in rn]
        if missing:
            raise GraphError(f"node {rn.get('id', '?')!r} missing fields {missing}")
        cip = rn.get("consume_in_place", [])
        if not isinstance(cip, list) or not all(isinstance(c, str) for c in cip):
            raise GraphError(f"node {rn['id']!r}: consume_in_place must be a list of ids")
        nodes.append(OperatorNode(
            id=str(rn["id"]), kind=rn["kind"], M=rn["M"], N=rn["N"], K=rn["K"],
            weight_bits=rn.get("weight_bits", 8), consume_in_place=frozenset(cip)))
    pos = {}
    for i, n in enumerate(nodes):
        if n.id in pos:
            raise GraphError(f"duplicate operator id {n.id!r}")
        pos[n.id] = i
    edges = set()
    for e in raw_edges:
        if not (isinstance(e, list) and len(e) == 2):
            raise GraphError(f"edge must be a [src, dst] pair, got {e!r}")
        src, dst = e
        if src not in pos or dst not in pos:
            raise GraphError(f"dangling edge {e!r}")
        edges.add((pos[src], pos[dst]))
    return ComputationGraph(tuple(nodes), frozenset(edges))


def load_graph(path: str | Path) -> ComputationGraph:
    """Read a JSON operator graph; the node list must already be in topological order."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: malformed JSON: {exc}") from exc
    return graph_from_dict(data)


def chain(dims: list[tuple[int, int, int]], kind: str = "MMM", prefix: str = "op") -> ComputationGraph:
    """Build a straight chain of operators from (M, N, K) triples."""
    nodes = tuple(OperatorNode(f"{prefix}{i + 1}", kind, m, n, k) for i, (m, n, k) in enumerate(dims))
    return ComputationGraph(nodes, frozenset((i, i + 1) for i in range(len(nodes) - 1)))


def _split_sizes(total: int, unit: int, units_per_part: int) -> list[int]:
    """Cut `total` into parts of `units_per_part` whole units, remainder last."""
    step = unit * units_per_part
    sizes = [step] * (total // step)
    if total % step:
        sizes.append(total % step)
    return sizes


def partition_oversized(g: ComputationGraph, hw: HardwareAbstraction) -> ComputationGraph:
    """Split operators whose weights exceed the chip into sub-operators that fit.

    Splits along N first (keeping AI = K for every piece); K is split only when a
    single row of tiles is already too wide. Each piece takes as many whole tiles
    as fit, the remainder goes last. Sub-operators replace their parent in place
    and inherit all of its in- and out-edges.
    """
    h, w, n_cim = hw.array_h, hw.array_w, hw.n_cim
    if n_cim < 1:
        raise GraphError("infeasible: chip has no arrays")

    pieces: list[list[OperatorNode]] = []
    for n in g.nodes:
        if n.weight_tiles(h, w) <= n_cim:
            pieces.append([n])
            continue
        col_tiles = ceil(n.K / w)
        if col_tiles <= n_cim:
            n_sizes = _split_sizes(n.N, h, n_cim // col_tiles)
            k_sizes = [n.K]
        else:
            n_sizes = _split_sizes(n.N, h, 1)
            k_sizes = _split_sizes(n.K, w, n_cim)
        subs = []
        for ni, n_sz in enumerate(n_sizes):
            for ki, k_sz in enumerate(k_sizes):
                tag = f"{n.id}.p{len(subs)}"
                subs.append(replace(n, id=tag, N=n_sz, K=k_sz))
        pieces.append(subs)

    if all(len(p) == 1 for p in pieces):
        return g

    new_nodes: list[OperatorNode] = []
    first: list[int] = []
    for p in pieces:
        first.append(len(new_nodes))
        new_nodes.extend(p)

    def span(i: int) -> range:
        return range(first[i], first[i] + len(pieces[i]))

    new_edges = set()
    cip: dict[int, set[str]] = {}
    for a, b in g.edges:
        keep = g.nodes[b].id in g.nodes[a].consume_in_place
        for na in span(a):
            for nb in span(b):
                new_edges.add((na, nb))
                if keep:
                    cip.setdefault(na, set()).add(new_nodes[nb].id)
    final = tuple(replace(n, consume_in_place=frozenset(cip.get(i, ()))) for i, n in enumerate(new_nodes))
    return ComputationGraph(final, frozenset(new_edges))
