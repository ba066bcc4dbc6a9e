import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from crcim.adc import (CB_OFF, CB_ON, ConversionConfig, NoiseModel, compare, convert, draw_noise, ideal_quantize,
                       ideal_quantize_array, majority_vote, nominal_bit_weights, sar_convert, write_decision_log)
from crcim.array import N_ACTIVE, build_array, effective_bit_weights_all

ARR = build_array(cols=1)
NOISELESS = NoiseModel()
TRUNC = ConversionConfig(offset_lsb=0.0)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_comparison_counts():
    assert CB_OFF.comparisons == 10 and CB_ON.comparisons == 25
    assert ConversionConfig(cb_enabled=True, mv_repeats=1).comparisons == 10
    for v in (0.0, 0.3, 1.0):
        assert sar_convert(v, ARR, 0, CB_OFF, NOISELESS, rng()).comparisons_used == 10
        assert sar_convert(v, ARR, 0, CB_ON, NoiseModel(0.5), rng()).comparisons_used == 25


def test_config_validation():
    with pytest.raises(ValueError):
        ConversionConfig(resolution=8)
    with pytest.raises(ValueError):
        ConversionConfig(mv_repeats=0)
    with pytest.raises(ValueError):
        NoiseModel(comparator_sigma=-1)


# the truncating (offset 0) search reproduces the plain floor examples
@pytest.mark.parametrize("v, code", [(0.0, 0), (1.0, 1023), (0.5, 511), (511.5 / 1023, 511)])
def test_truncating_examples(v, code):
    assert ideal_quantize(v, offset_lsb=0.0) == code
    assert sar_convert(v, ARR, 0, TRUNC, NOISELESS, rng()).code == code


# default mid-tread search: integer charge levels sit at code centers
@pytest.mark.parametrize("v, code", [(0.0, 0), (1.0, 1023), (0.5, 512), (511.5 / 1023, 512), (300 / 1023, 300),
                                     (300.49 / 1023, 300), (300.51 / 1023, 301)])
def test_mid_tread_examples(v, code):
    assert ideal_quantize(v) == code
    assert sar_convert(v, ARR, 0, CB_OFF, NOISELESS, rng()).code == code


def test_zero_value_code_zero_ten_comparisons():
    res = sar_convert(0.0, ARR, 0, CB_OFF, NOISELESS, rng())
    assert (res.code, res.comparisons_used) == (0, 10)
    assert not res.clipped
    assert sar_convert(1.2, ARR, 0, CB_OFF, NOISELESS, rng()).clipped


@pytest.mark.parametrize("offset", [0.0, 0.5])
def test_noiseless_sar_matches_quantizer_on_ramps(offset):
    cfg = ConversionConfig(offset_lsb=offset)
    pts = np.concatenate([np.arange(1024) / 1023, np.linspace(0, 1, 4096), rng(3).random(512)])
    got = [sar_convert(v, ARR, 0, cfg, NOISELESS, rng()).code for v in pts]
    assert got == ideal_quantize_array(pts, offset).tolist()
    bulk = convert(pts, effective_bit_weights_all(ARR), cfg, NOISELESS, rng())
    assert np.array_equal(bulk, ideal_quantize_array(pts, offset))


def test_majority_vote_examples():
    assert majority_vote([1, 1, 1, 1, 0, 0]) == 1
    assert majority_vote([1, 0, 1, 0, 1, 0]) == 0
    assert majority_vote([0, 1, 0, 1, 0, 1]) == 1
    assert majority_vote([0] * 6) == 0
    with pytest.raises(ValueError):
        majority_vote([])


def test_compare_far_from_threshold_and_noiseless():
    g = rng(1)
    assert all(compare(10 / N_ACTIVE, NoiseModel(0.5), g) for _ in range(1000))
    assert compare(-1e-6, NOISELESS, g) == 0
    assert compare(0.0, NOISELESS, g) == 1


def test_compare_at_threshold_is_a_fair_coin():
    g = rng(2)
    ones = sum(compare(0.0, NoiseModel(0.8), g) for _ in range(10_000))
    assert abs(ones / 10_000 - 0.5) < 0.02


def test_cb_reduces_code_spread():
    v = np.full(10_000, 300 / 1023)
    bw = effective_bit_weights_all(ARR)
    off = convert(v, bw, CB_OFF, NoiseModel(0.5), rng(4))
    on = convert(v, bw, CB_ON, NoiseModel(0.5), rng(4))
    assert abs(on.mean() - 300) < 0.05 and abs(off.mean() - 300) < 0.05
    assert on.std() < 0.8 * off.std()


@pytest.mark.parametrize("sampler", ["comparator", "decision"])
def test_single_repeat_cb_equals_cb_off_with_matched_seeds(sampler):
    v = rng(5).random(20_000)
    bw = effective_bit_weights_all(ARR)
    one = ConversionConfig(cb_enabled=True, mv_repeats=1)
    a = convert(v, bw, one, NoiseModel(0.9), rng(6), sampler=sampler)
    b = convert(v, bw, CB_OFF, NoiseModel(0.9), rng(6), sampler=sampler)
    assert np.array_equal(a, b)


def test_expected_code_monotone_on_coarse_ramp():
    v = np.repeat(np.linspace(0, 1, 41), 10_000)
    codes = convert(v, nominal_bit_weights(), CB_ON, NoiseModel(0.9), rng(7), sampler="decision")
    means = codes.reshape(41, -1).mean(axis=1)
    assert np.all(np.diff(means) >= 0)


def test_reference_and_bulk_paths_agree_with_same_draws():
    g = rng(8)
    v = g.random(300)
    bw = effective_bit_weights_all(ARR)
    for cfg in (CB_OFF, CB_ON):
        nm = NoiseModel(0.7)
        bulk = convert(v, bw, cfg, nm, rng(9))
        ref_rng = rng(9)
        noise = draw_noise(ref_rng, v.size, cfg, nm)

        class Replay:
            def __init__(self, z):
                self.z = iter(z.ravel())

            def standard_normal(self):
                return next(self.z)

        rep = Replay(noise)
        ref = [sar_convert(x, ARR, 0, cfg, nm, rep).code for x in v]
        assert bulk.tolist() == ref


def _chi2_same_law(a, b):
    vals = np.union1d(a, b)
    ca = np.array([(a == x).sum() for x in vals])
    cb = np.array([(b == x).sum() for x in vals])
    keep = (ca + cb) >= 10
    table = np.stack([ca[keep], cb[keep]])
    return stats.chi2_contingency(table)[1]


@pytest.mark.parametrize("cfg", [CB_OFF, CB_ON], ids=["cb_off", "cb_on"])
@pytest.mark.parametrize("level", [300.0, 511.5, 700.25])
def test_samplers_agree_in_law(cfg, level):
    v = np.full(40_000, level / 1023)
    bw = effective_bit_weights_all(build_array(cols=1, mismatch_sigma=0.03, seed=4))
    a = convert(v, bw, cfg, NoiseModel(0.9), rng(10), sampler="comparator")
    b = convert(v, bw, cfg, NoiseModel(0.9), rng(11), sampler="decision")
    assert _chi2_same_law(a, b) > 1e-3
    assert abs(a.mean() - b.mean()) < 5 * np.sqrt((a.var() + b.var()) / v.size) + 1e-9


def test_convert_validates_inputs():
    with pytest.raises(ValueError):
        convert([0.1], np.ones((2, 10)) / 10, CB_OFF, NOISELESS, rng())
    with pytest.raises(ValueError):
        convert([0.1], nominal_bit_weights(), CB_OFF, NOISELESS, rng(), sampler="magic")


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1, allow_nan=False), st.sampled_from([0.0, 0.5]))
def test_noiseless_code_brackets_value(v, offset):
    code = ideal_quantize(v, offset)
    x = v * N_ACTIVE + offset
    assert 0 <= code <= 1023
    if code < 1023:
        assert code <= x + 1e-6 < code + 1 + 1e-6


def test_decision_log_csv(tmp_path):
    res = [sar_convert(0.4, ARR, 0, CB_ON, NoiseModel(0.5), rng(12))]
    text = write_decision_log(res, tmp_path / "log.csv").read_text()
    assert len(text.strip().splitlines()) == 1 + 10
