import pytest

from cmswitch.allocator import min_tile_demand, solve_segment, static_baseline
from cmswitch.deha import load_hw
from cmswitch.graph import ComputationGraph, OperatorNode, chain, load_graph, partition_oversized
from cmswitch.segmenter import (InfeasibleError, contiguous_splits, price, refine, segment,
                                transition_cost)

from conftest import ROOT, make_hw
from generators import exhaustive_total, random_chain
from oracles import analytic_total


# ------------------------------------------------------------------ transition model

def test_writeback_of_live_output():
    hw = make_hw()
    g = ComputationGraph(chain([(20480, 320, 320)] * 3).nodes, frozenset({(0, 1), (1, 2), (0, 2)}))
    a, _ = solve_segment(g, (0, 0), hw)
    b, _ = solve_segment(g, (1, 1), hw)
    tr = transition_cost(a, b, g, hw)
    # op1's outputs are still needed by op3, past op2's segment, so none stay on chip
    assert tr.writeback_elements == 6_553_600
    assert tr.wb_cycles == 819_200


def test_writeback_single_edge_case():
    hw = make_hw()
    g = ComputationGraph(chain([(20480, 320, 320), (20480, 320, 320), (20480, 320, 320)]).nodes,
                         frozenset({(0, 2), (1, 2)}))
    a, _ = solve_segment(g, (0, 0), hw)
    b, _ = solve_segment(g, (1, 1), hw)
    tr = transition_cost(a, b, g, hw)
    assert tr.writeback_elements == 6_553_600
    assert tr.wb_cycles == 819_200


def test_boot_switches_every_compute_array():
    hw = make_hw(switch_m_to_c_cycles=3)
    g = chain([(64, 320 * 10, 320)])  # 10 weight tiles
    plan, _ = static_baseline(g, (0, 0), hw)
    tr = transition_cost(None, plan, g, hw)
    assert tr.switch_m_to_c >= 10
    assert tr.switch_cycles == 3 * tr.switch_m_to_c
    assert tr.switch_cycles >= 30
    assert tr.wb_cycles == 0
    assert tr.rewrite_cycles == max(a.com for a in plan.ops) * 320


def test_stable_modes_cost_no_switches():
    hw = make_hw(main_data_per_cycle=10**9)
    g = ComputationGraph(chain([(64, 320, 320)] * 2).nodes, frozenset())
    a, _ = solve_segment(g, (0, 0), hw)
    b, _ = solve_segment(g, (1, 1), hw)
    assert a.compute_arrays == b.compute_arrays
    tr = transition_cost(a, b, g, hw)
    assert (tr.switch_cycles, tr.wb_cycles) == (0, 0)
    assert tr.total == tr.rewrite_cycles


def test_consume_in_place_skips_writeback():
    hw = make_hw()
    n0 = OperatorNode("a", "MMM", 64, 320, 320, consume_in_place=frozenset({"b"}))
    g = ComputationGraph((n0, OperatorNode("b", "MMM", 64, 320, 320)), frozenset({(0, 1)}))
    a, _ = solve_segment(g, (0, 0), hw)
    b, _ = solve_segment(g, (1, 1), hw)
    assert transition_cost(a, b, g, hw).writeback_elements == 0


# ------------------------------------------------------------------ DP

def test_single_operator_base_case():
    hw = make_hw()
    g = chain([(64, 320, 320)])
    res = segment(g, hw)
    plan, cost = solve_segment(g, (0, 0), hw)
    assert res.ranges() == [(0, 0)]
    assert res.total_cycles == cost.intra_latency + transition_cost(None, plan, g, hw).total
    assert res.total_cycles == analytic_total(res, g, hw)


def test_three_ops_against_all_splits():
    hw = make_hw(n_cim=12, grid=[3, 4], array_h=16, array_w=16, main_data_per_cycle=2,
                 mem_data_per_cycle=4, weight_write_cycles=16)
    g = chain([(64, 16, 8), (64, 8, 16), (32, 16, 16)])
    res = segment(g, hw)
    assert len(list(contiguous_splits(3))) == 4
    assert res.total_cycles == exhaustive_total(g, hw)
    assert res.total_cycles == analytic_total(res, g, hw)


@pytest.mark.parametrize("seed", range(25))
def test_dp_matches_exhaustive(seed):
    hw, g = random_chain(seed)
    try:
        res = segment(g, hw, memoize=False)
    except InfeasibleError:
        assert exhaustive_total(g, hw) is None
        return
    assert res.total_cycles == exhaustive_total(g, hw)
    assert res.total_cycles == analytic_total(res, g, hw)


@pytest.mark.parametrize("seed", range(10))
def test_dp_beats_every_fixed_split(seed):
    hw, g = random_chain(100 + seed)
    res = segment(g, hw)
    for split in contiguous_splits(len(g)):
        chosen = [solve_segment(g, r, hw) for r in split]
        if all(chosen):
            assert res.total_cycles <= price(g, hw, chosen).total_cycles


def test_baseline_dominated_on_chains():
    for seed in range(10):
        hw, g = random_chain(200 + seed)
        assert segment(g, hw).total_cycles <= segment(g, hw, baseline=True).total_cycles


def test_pruned_ranges_really_infeasible():
    hw = make_hw(n_cim=4, grid=[2, 2], array_h=8, array_w=8)
    g = chain([(8, 16, 8), (8, 8, 16), (8, 16, 8), (8, 8, 8)])  # 2 tiles each
    res = segment(g, hw)
    assert res.dp_table_stats["pruned"] > 0
    for i in range(len(g)):
        for j in range(i, len(g)):
            if min_tile_demand(g, (i, j), hw) > hw.n_cim:
                assert solve_segment(g, (i, j), hw) is None
    assert res.total_cycles == exhaustive_total(g, hw)


def test_oversized_operator_infeasible():
    hw = make_hw(n_cim=1, grid=[1, 1], array_h=8, array_w=8)
    with pytest.raises(InfeasibleError):
        segment(chain([(1, 16, 8)]), hw)


def test_refine_never_increases_total():
    for seed in range(15):
        hw, g = random_chain(300 + seed)
        res = segment(g, hw)
        ref = refine(res, g, hw)
        assert ref.ranges() == res.ranges()
        assert ref.total_cycles <= res.total_cycles
        assert ref.total_cycles == analytic_total(ref, g, hw)


def test_vgg16_segmentation_shape():
    hw = load_hw(ROOT / "configs" / "dynaplasia.toml")
    g = partition_oversized(load_graph(ROOT / "graphs" / "vgg16.json"), hw)
    res = segment(g, hw)
    ranges = res.ranges()
    # early low-weight convolutions share a segment; the split fully-connected tail runs alone
    assert ranges[0][1] - ranges[0][0] >= 3
    assert all(i == j for i, j in ranges[-10:])
    assert res.total_cycles <= segment(g, hw, baseline=True).total_cycles
