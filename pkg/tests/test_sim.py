import json

import pytest

from cmswitch import sim
from cmswitch.codegen import emit, parse
from cmswitch.deha import load_hw
from cmswitch.graph import chain, load_graph, partition_oversized
from cmswitch.segmenter import refine, segment
from cmswitch.sim import LegalityError, predicted_report, run

from conftest import COMPILE_FIXTURES, FIXTURES, ROOT
from oracles import analytic_total


def setup(graph, hw_path):
    hw = load_hw(ROOT / hw_path)
    g = partition_oversized(load_graph(ROOT / graph), hw)
    return g, hw


@pytest.mark.parametrize("graph, hw_path", COMPILE_FIXTURES)
def test_simulated_equals_predicted(graph, hw_path):
    g, hw = setup(graph, hw_path)
    for res in (segment(g, hw), segment(g, hw, baseline=True)):
        rep = run(emit(res, g, hw), g, hw)
        assert rep.total_cycles == res.total_cycles
        assert rep.total_cycles == analytic_total(res, g, hw)
        assert rep == predicted_report(res, g, hw)


def test_refined_schedule_simulates_exactly():
    g, hw = setup("graphs/opt_layer.json", "configs/dynaplasia.toml")
    res = refine(segment(g, hw), g, hw)
    assert run(emit(res, g, hw), g, hw).total_cycles == res.total_cycles == analytic_total(res, g, hw)


def test_cycle_count_never_decreases(tiny_hw):
    g = load_graph(ROOT / "graphs" / "toy_chain3.json")
    trace = []
    rep = run(emit(segment(g, tiny_hw), g, tiny_hw), g, tiny_hw, trace=trace)
    cycles = [c for _, c in trace]
    assert cycles == sorted(cycles)
    assert cycles[-1] == rep.total_cycles
    assert [i for i, _ in trace] == list(range(len(trace)))


@pytest.mark.parametrize("name, msg", [
    ("compute_on_memory_array", "compute on memory-mode array"),
    ("write_w_on_memory_array", "weight write to memory-mode array"),
    ("load_from_compute_array", "touches compute-mode array"),
    ("stale_weights", "holds weights of fc3"),
    ("out_of_grid", "outside grid"),
])
def test_illegal_programs_fault(name, msg, tiny_hw):
    g = load_graph(ROOT / "graphs" / "toy_chain3.json")
    prog = parse((FIXTURES / "negative" / f"{name}.cms").read_text())
    with pytest.raises(LegalityError, match=msg) as info:
        run(prog, g, tiny_hw)
    assert info.value.op_index >= 0


def test_main_load_outside_block_faults(tiny_hw):
    g = load_graph(ROOT / "graphs" / "toy_chain3.json")
    with pytest.raises(LegalityError, match="outside a parallel block"):
        run(parse("mem.load op=fc1 n=8 src=main\n"), g, tiny_hw)


def test_unknown_operator_faults(tiny_hw):
    g = load_graph(ROOT / "graphs" / "toy_chain3.json")
    text = "CM.switch TOC (0,0)\nCM.write_w op=zz (0,0)\nparallel {\n    cim.compute op=zz arrays=[(0,0)]\n}\n"
    with pytest.raises(LegalityError, match="unknown operator"):
        run(parse(text), g, tiny_hw)


@pytest.mark.parametrize("graph, hw_path", COMPILE_FIXTURES)
def test_report_fields_sane(graph, hw_path):
    g, hw = setup(graph, hw_path)
    rep = run(emit(segment(g, hw), g, hw), g, hw)
    base = segment(g, hw, baseline=True).total_cycles
    rep = rep.with_baseline(base)
    assert rep.speedup >= 1.0
    assert rep.total_cycles == sum(s.intra + s.wb + s.swc + s.rw for s in rep.segments)
    for s in rep.segments:
        assert 0.0 <= s.mem_ratio <= 1.0
        assert s.intra == max(o.cycles for o in s.ops)


def test_report_schema_golden(tiny_hw, tmp_path):
    g = load_graph(ROOT / "graphs" / "toy_chain3.json")
    rep = run(emit(segment(g, tiny_hw), g, tiny_hw), g, tiny_hw)
    sim.emit_report(rep.with_baseline(101), tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert set(data) == {"total_cycles", "segments", "baseline_total", "speedup"}
    for s in data["segments"]:
        assert set(s) == {"range", "intra", "wb", "swc", "rw", "mem_ratio", "ops"}
        for o in s["ops"]:
            assert set(o) == {"id", "cycles", "com", "mem"}
    assert "speedup" not in rep.to_dict()


def test_single_op_total_includes_boot_switches():
    from conftest import make_hw
    hw = make_hw()
    g = chain([(64, 320, 320)])
    res = segment(g, hw)
    seg = res.segments[0]
    com = len(seg.plan.compute_arrays)
    assert res.total_cycles == seg.cost.intra_latency + com * hw.switch_m_to_c_cycles \
        + max(a.com for a in seg.plan.ops) * hw.weight_write_cycles
