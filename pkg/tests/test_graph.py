import json

import pytest
from hypothesis import given, settings, strategies as st

from cmswitch.graph import (ComputationGraph, GraphError, OperatorNode, chain, graph_from_dict,
                            load_graph, partition_oversized)

from conftest import ROOT, make_hw


def write(tmp_path, data, name="g.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return p


def test_chain_of_mmm_derived_fields(tmp_path):
    nodes = [{"id": f"n{i}", "kind": "MMM", "M": 64, "N": 320, "K": 320} for i in range(3)]
    g = load_graph(write(tmp_path, {"nodes": nodes, "edges": [["n0", "n1"], ["n1", "n2"]]}))
    assert len(g) == 3
    for n in g.nodes:
        assert n.total_ops == 6_553_600
        assert n.arithmetic_intensity == 320
        assert n.input_volume == 64 * 320
        assert n.output_volume == 64 * 320


def test_single_mvm():
    g = graph_from_dict({"nodes": [{"id": "v", "kind": "MVM", "M": 1, "N": 320, "K": 320}]})
    n = g.nodes[0]
    assert (n.total_ops, n.arithmetic_intensity, n.input_volume, n.output_volume) == (102_400, 320, 320, 320)
    assert n.weight_bits == 8


def test_order_violation_rejected(tmp_path):
    nodes = [{"id": str(i), "kind": "MMM", "M": 1, "N": 2, "K": 2} for i in (1, 2, 3)]
    p = write(tmp_path, {"nodes": nodes, "edges": [["3", "1"]]})
    with pytest.raises(GraphError, match="order violates dependency"):
        load_graph(p)


@pytest.mark.parametrize("data, msg", [
    ("{not json", "malformed JSON"),
    ({"nodes": [{"id": "a", "kind": "CONV", "M": 1, "N": 1, "K": 1}]}, "unsupported kind"),
    ({"nodes": [{"id": "a", "kind": "MMM", "M": 0, "N": 1, "K": 1}]}, "positive integer"),
    ({"nodes": [{"id": "a", "kind": "MMM", "M": 1, "N": 1, "K": 1}], "edges": [["a", "b"]]}, "dangling"),
    ({"nodes": [{"id": "a", "kind": "MMM", "M": 1, "N": 1, "K": 1}] * 2}, "duplicate"),
    ({"nodes": [{"id": "a", "kind": "MVM", "M": 2, "N": 1, "K": 1}]}, "M=1"),
    ({"nodes": [{"id": "a", "kind": "MMM", "M": 1, "N": 1, "K": 1}], "edges": [["a", "a"]]}, "order violates"),
    ({"nodes": [{"id": "a", "kind": "MMM", "M": 1, "N": 1, "K": 1, "consume_in_place": ["z"]}]}, "non-successors"),
])
def test_invalid_graphs(tmp_path, data, msg):
    with pytest.raises(GraphError, match=msg):
        load_graph(write(tmp_path, data))


def test_cycle_is_an_order_violation():
    data = {"nodes": [{"id": x, "kind": "MMM", "M": 1, "N": 1, "K": 1} for x in "ab"],
            "edges": [["a", "b"], ["b", "a"]]}
    with pytest.raises(GraphError, match="order violates"):
        graph_from_dict(data)


def test_bundled_graphs_load():
    for p in sorted((ROOT / "graphs").glob("*.json")):
        g = load_graph(p)
        assert len(g) > 0
        assert all(a < b for a, b in g.edges)


def test_roundtrip_dict():
    g = load_graph(ROOT / "graphs" / "attention_block.json")
    assert graph_from_dict(g.to_dict()) == g
    assert g.node("scores").consume_in_place == frozenset({"context"})


# ------------------------------------------------------------- partitioning

def test_fitting_operator_unchanged():
    hw = make_hw()
    g = chain([(64, 640, 320)])
    assert partition_oversized(g, hw) is g


def test_split_along_n_greedy():
    hw = make_hw()
    g = chain([(64, 320 * 200, 320)])
    out = partition_oversized(g, hw)
    tiles = [n.weight_tiles(320, 320) for n in out.nodes]
    assert tiles == [96, 96, 8]
    assert sum(tiles) == 200
    assert all(n.K == 320 for n in out.nodes)
    assert all(n.arithmetic_intensity == 320 for n in out.nodes)


def test_split_along_k_when_row_too_wide():
    hw = make_hw(n_cim=4, grid=[2, 2])
    g = chain([(2, 320, 320 * 10)])
    out = partition_oversized(g, hw)
    assert [n.weight_tiles(320, 320) for n in out.nodes] == [4, 4, 2]
    assert sum(n.K for n in out.nodes) == 3200


def test_edges_rewired_around_split():
    hw = make_hw()
    g = chain([(4, 320, 320), (4, 320 * 150, 320), (4, 320, 320)])
    g = ComputationGraph(
        (g.nodes[0], OperatorNode("op2", "MMM", 4, 320 * 150, 320, consume_in_place=frozenset({"op3"})), g.nodes[2]),
        g.edges)
    out = partition_oversized(g, hw)
    ids = out.ids
    assert ids == ["op1", "op2.p0", "op2.p1", "op3"]
    named = {(ids[a], ids[b]) for a, b in out.edges}
    assert named == {("op1", "op2.p0"), ("op1", "op2.p1"), ("op2.p0", "op3"), ("op2.p1", "op3")}
    assert out.node("op2.p0").consume_in_place == frozenset({"op3"})


# sizes bounded so the sub-operator count (and the edges between neighbours) stays small
dims = st.tuples(st.integers(1, 8), st.integers(1, 1300), st.integers(1, 1300))


@settings(max_examples=60, deadline=None)
@given(st.lists(dims, min_size=1, max_size=4), st.integers(1, 24), st.sampled_from([100, 320]))
def test_partition_properties(ds, n_cim, arr):
    hw = make_hw(n_cim=n_cim, grid=[1, n_cim], array_h=arr, array_w=arr)
    g = chain(ds)
    out = partition_oversized(g, hw)
    assert all(n.weight_tiles(arr, arr) <= n_cim for n in out.nodes)
    # work conservation per parent
    for parent in g.nodes:
        kids = [n for n in out.nodes if n.id == parent.id or n.id.startswith(parent.id + ".p")]
        assert sum(k.total_ops for k in kids) == parent.total_ops
        exact = parent.N % arr == 0 and parent.K % arr == 0
        if exact:
            assert sum(k.weight_tiles(arr, arr) for k in kids) == parent.weight_tiles(arr, arr)
    # re-validation and idempotence
    assert ComputationGraph(out.nodes, out.edges) == out
    assert partition_oversized(out, hw) == out
