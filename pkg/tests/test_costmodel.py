import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from crcim.adc import CB_OFF, CB_ON, ConversionConfig
from crcim.costmodel import (BASELINE_TOPS_W, CostParams, MatmulDims, array_area_um2, calibrate_scale,
                             comparator_energy_scale, conversion_cost, efficiency, figure_of_merit,
                             fraction_for_overheads, layer_cost, network_cost, ratio_table, swing_advantage,
                             workload_efficiency, write_cost_csv)
from crcim.planner import LayerPlan

P = CostParams()


def plan(bits, cb, layer="l", kind="mlp"):
    return LayerPlan(layer, kind, bits, bits, cb, 0.0)


def test_conversion_cost_examples():
    assert conversion_cost(CB_OFF, P) == (1.0, 10)
    e_on, c_on = conversion_cost(CB_ON, P)
    assert c_on == 25 and e_on / conversion_cost(CB_OFF, P)[0] == pytest.approx(1.9, abs=1e-12)
    assert conversion_cost(ConversionConfig(cb_enabled=True, mv_repeats=1), P) == (1.0, 10)


def test_fraction_is_the_unique_consistent_split():
    assert fraction_for_overheads(1.9, 2.5) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        fraction_for_overheads(1.9, 1.0)


@pytest.mark.parametrize("r, e", [(2, 4), (1, 1), (3, 9)])
def test_comparator_energy_law(r, e):
    assert comparator_energy_scale(r) == e


def test_comparator_energy_rejects_nonpositive():
    with pytest.raises(ValueError):
        comparator_energy_scale(0)


def test_swing_advantage():
    assert swing_advantage("cr", "conventional") == pytest.approx(20 * math.log10(2))
    assert swing_advantage("conventional", "conventional") == 0.0
    with pytest.raises(ValueError):
        swing_advantage("cr", "other")


def test_layer_cost_examples():
    one = layer_cost(LayerPlan("m", "mlp", 1, 1, False, 0.0), MatmulDims(1023, 1), P)
    assert (one.conversions, one.latency_cycles) == (1, 10)
    assert layer_cost(plan(4, False), MatmulDims(1023, 1), P).conversions == 16
    with pytest.raises(ValueError):
        MatmulDims(0, 4)


def test_six_bit_cb_vs_four_bit_closed_form():
    d = MatmulDims(1023, 64, 10)
    p0 = replace(P, e_mac_cell=1e-12)  # conversion dominated
    r = layer_cost(plan(6, True), d, p0).energy / layer_cost(plan(4, False), d, p0).energy
    assert r == pytest.approx(36 * 1.9 / 16, rel=1e-6)


def test_tiles_and_conversion_count():
    c = layer_cost(plan(3, False), MatmulDims(2000, 5, 7, 2), P)
    assert c.conversions == 2 * 5 * 9 * 7 * 2
    assert c.cell_ops == 2000 * 5 * 9 * 7 * 2
    assert c.macs == 2000 * 5 * 7 * 2


def test_baseline_calibration_reports_anchor():
    p = calibrate_scale(P)
    from crcim.costmodel import BASELINE_DIMS, _Plan1b
    assert workload_efficiency([_Plan1b()], [BASELINE_DIMS], p) == pytest.approx(BASELINE_TOPS_W)


def test_doubling_conversion_energy_halves_efficiency_when_conversion_dominated():
    p = replace(P, e_mac_cell=1e-12)
    d = [MatmulDims(1023, 64, 10)]
    a = workload_efficiency([plan(4, False)], d, p)
    b = workload_efficiency([plan(4, False)], d, replace(p, e_conv_base=2.0))
    assert a / b == pytest.approx(2.0, rel=1e-6)


def test_all_cb_vs_no_cb_efficiency_ratio():
    p = replace(P, e_mac_cell=1e-12)
    d = [MatmulDims(512, 64, 10), MatmulDims(300, 20, 3)]
    on = workload_efficiency([plan(6, True), plan(6, True)], d, p)
    off = workload_efficiency([plan(6, False), plan(6, False)], d, p)
    assert on / off == pytest.approx(1 / 1.9, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3000), st.integers(1, 200), st.integers(1, 50), st.integers(2, 8),
                          st.booleans()), min_size=1, max_size=5),
       st.floats(0.01, 100))
def test_costs_additive_order_free_and_scale_invariant(items, scale):
    plans = [plan(b, cb, f"l{i}") for i, (_, _, _, b, cb) in enumerate(items)]
    dims = [MatmulDims(r, c, v) for r, c, v, _, _ in items]
    costs = network_cost(plans, dims, P)
    rev = network_cost(plans[::-1], dims[::-1], P)
    assert sum(c.energy for c in costs) == pytest.approx(sum(c.energy for c in rev), rel=1e-12)
    assert sum(c.latency_cycles for c in costs) == sum(c.latency_cycles for c in rev)
    single = sum(layer_cost(pl, d, P).energy for pl, d in zip(plans, dims))
    assert sum(c.energy for c in costs) == pytest.approx(single, rel=1e-12)
    ps = replace(P, calib_scale=scale)
    base = [plan(6, True, f"l{i}") for i in range(len(items))]
    r1 = efficiency(network_cost(plans, dims, P), P) / efficiency(network_cost(base, dims, P), P)
    r2 = efficiency(network_cost(plans, dims, ps), ps) / efficiency(network_cost(base, dims, ps), ps)
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_ratio_table_rows():
    t = dict(ratio_table(P))
    assert t["conversion_time_ratio"] == 2.5
    assert t["conversion_power_ratio"] == pytest.approx(1.9, abs=1e-12)
    assert t["comparator_energy_scale"] == 4.0
    assert round(t["swing_advantage_db"], 2) == 6.02


def test_params_validation_and_helpers(tmp_path):
    with pytest.raises(ValueError):
        CostParams(comparator_fraction=1.5)
    with pytest.raises(ValueError):
        CostParams(e_conv_base=0)
    assert array_area_um2(1088, 78, P) == pytest.approx(1088 * 78 * 2.3)
    assert figure_of_merit(10.0, 1.76) == pytest.approx(10.0)
    assert figure_of_merit(10.0, 7.78) == pytest.approx(20.0)
    pl = [plan(4, False)]
    text = write_cost_csv(network_cost(pl, [MatmulDims(10, 2)], P), tmp_path / "c.csv", pl).read_text()
    assert text.splitlines()[0].startswith("layer,") and text.splitlines()[-1].startswith("total,")
