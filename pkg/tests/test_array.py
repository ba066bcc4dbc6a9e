import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from crcim.array import (DAC_GROUPS, N_ACTIVE, UNIT_ROWS, GeometryError, build_array, compute_mac,
                         compute_mac_batch, compute_mac_products, dac_group_of_rows, effective_bit_weights,
                         effective_bit_weights_all, ideal_mac, load_weights, load_weights_csv, save_weights_csv)


def test_zero_mismatch_and_group_sizes():
    arr = build_array(1024, 1, 0.0, seed=7)
    assert not arr.cap_mismatch.any()
    sizes = [stop - start for _, start, stop in DAC_GROUPS]
    assert sizes == [512, 256, 128, 64, 32, 16, 8, 4, 2, 1]
    assert [j for j, _, _ in DAC_GROUPS] == list(range(9, -1, -1))


def test_group_ownership_covers_active_rows():
    owner = dac_group_of_rows()
    assert owner.size == N_ACTIVE
    assert (owner[:512] == 9).all() and owner[1022] == 0
    assert np.bincount(owner).tolist() == [2**j for j in range(10)]


def test_same_seed_same_array():
    a, b = build_array(1024, 78, 0.01, seed=1), build_array(1024, 78, 0.01, seed=1)
    assert np.array_equal(a.cap_mismatch, b.cap_mismatch)
    assert not np.array_equal(a.cap_mismatch, build_array(1024, 78, 0.01, seed=2).cap_mismatch)


def test_mismatch_sample_std_within_chi_square_bounds():
    eps = build_array(1024, 1, 0.01, seed=1).cap_mismatch[:N_ACTIVE, 0]
    n = eps.size
    lo, hi = (np.sqrt(stats.chi2.ppf(q, n - 1) / (n - 1)) * 0.01 for q in (0.0005, 0.9995))
    assert lo <= eps.std(ddof=1) <= hi
    assert 0.008 <= eps.std(ddof=1) <= 0.012  # the looser +-20% band


def test_geometry_errors():
    with pytest.raises(GeometryError):
        build_array(1000, 1)
    with pytest.raises(GeometryError):
        build_array(1024, 0)
    with pytest.raises(ValueError):
        build_array(mismatch_sigma=-0.1)
    arr = build_array(cols=2)
    with pytest.raises(GeometryError):
        load_weights(arr, np.zeros((100, 2)))
    with pytest.raises(ValueError):
        load_weights(arr, np.full((1023, 2), 2))


def test_arrays_are_read_only():
    arr = build_array(cols=1)
    with pytest.raises(ValueError):
        arr.cap_mismatch[0, 0] = 1.0


def test_load_weights_forces_dummy_and_spare_rows_off():
    arr = load_weights(build_array(1088, 1), np.ones((1088, 1)))
    assert arr.weight_bits[:N_ACTIVE].all() and not arr.weight_bits[N_ACTIVE:].any()


def test_all_zero_weights_give_zero_mac():
    arr = load_weights(build_array(cols=1, mismatch_sigma=0.02, seed=3), np.zeros((N_ACTIVE, 1)))
    x = np.random.default_rng(0).integers(0, 2, N_ACTIVE)
    assert compute_mac(arr, 0, x).value == 0.0


@pytest.mark.parametrize("sigma", [0.0, 0.01, 0.05])
def test_full_scale_closure(sigma):
    arr = load_weights(build_array(cols=1, mismatch_sigma=sigma, seed=5), np.ones((N_ACTIVE, 1)))
    assert compute_mac(arr, 0, np.ones(N_ACTIVE, dtype=int)).value == pytest.approx(1.0, abs=1e-15)


def test_single_weight_bit_reads_that_input():
    r = 417
    w = np.zeros((N_ACTIVE, 1), dtype=int)
    w[r] = 1
    arr = load_weights(build_array(cols=1), w)
    x = np.zeros(N_ACTIVE, dtype=int)
    assert compute_mac(arr, 0, x).value == 0.0
    x[r] = 1
    assert compute_mac(arr, 0, x).value == 1 / N_ACTIVE


def test_three_hundred_overlapping_ones():
    x = np.zeros(N_ACTIVE, dtype=int)
    x[:300] = 1
    arr = load_weights(build_array(cols=1), np.ones((N_ACTIVE, 1)))
    assert compute_mac(arr, 0, x).value == 300 / N_ACTIVE


def test_ideal_mac_examples():
    assert ideal_mac(np.ones(N_ACTIVE), np.ones(N_ACTIVE)) == 1023
    assert ideal_mac([1, 0, 1, 0], [0, 1, 0, 1]) == 0
    assert ideal_mac([1, 0, 1, 1, 0, 1, 0, 1], [1, 1, 0, 1, 0, 1, 0, 0]) == 3
    with pytest.raises(ValueError):
        ideal_mac([1, 0], [1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_noiseless_mac_is_exact_integer(seed):
    rng = np.random.default_rng(seed)
    w = rng.integers(0, 2, (N_ACTIVE, 3))
    x = rng.integers(0, 2, N_ACTIVE)
    arr = load_weights(build_array(cols=3), w)
    for c in range(3):
        assert compute_mac(arr, c, x).value * N_ACTIVE == pytest.approx(ideal_mac(x, w[:, c]), abs=1e-9)


def test_mismatch_mac_within_three_sigma_of_count():
    rng = np.random.default_rng(11)
    sigma = 0.01
    w = rng.integers(0, 2, (N_ACTIVE, 20))
    arr = load_weights(build_array(cols=20, mismatch_sigma=sigma, seed=11), w)
    x = rng.integers(0, 2, N_ACTIVE)
    for c in range(20):
        k = ideal_mac(x, w[:, c])
        # error of k/1023 shares with Gaussian cells: std ~ sigma*sqrt(k*(1-k/1023))
        bound = 3 * sigma * np.sqrt(max(k * (1 - k / N_ACTIVE), 1.0)) + 1e-9
        assert abs(compute_mac(arr, c, x).value * N_ACTIVE - k) < bound


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_an_active_cell_increases_charge(seed):
    rng = np.random.default_rng(seed)
    arr = load_weights(build_array(cols=1, mismatch_sigma=0.05, seed=seed % 1000), np.ones((N_ACTIVE, 1)))
    x = rng.integers(0, 2, N_ACTIVE)
    off = np.flatnonzero(x == 0)
    if off.size == 0:
        return
    y = x.copy()
    y[rng.choice(off)] = 1
    assert compute_mac(arr, 0, y).value > compute_mac(arr, 0, x).value


def test_batch_and_products_match_single_column():
    rng = np.random.default_rng(2)
    w = rng.integers(0, 2, (N_ACTIVE, 4))
    arr = load_weights(build_array(cols=4, mismatch_sigma=0.03, seed=2), w)
    x = rng.integers(0, 2, (5, N_ACTIVE))
    batch = compute_mac_batch(arr, x)
    for i in range(5):
        for c in range(4):
            assert batch[i, c] == pytest.approx(compute_mac(arr, c, x[i]).value, rel=1e-12)
    prods = x[:, :, None] * w[None]
    cols = np.array([0, 1, 2, 3, 1])
    got = compute_mac_products(arr, prods[np.arange(5), :, cols], cols)
    assert np.allclose(got, batch[np.arange(5), cols], rtol=1e-12)


def test_ideal_bit_weights_are_binary():
    assert np.array_equal(effective_bit_weights(build_array(cols=1), 0), 2.0 ** np.arange(9, -1, -1) / 1023)


def test_bit_weights_sum_to_one_and_msb_bound():
    arr = build_array(cols=78, mismatch_sigma=0.01, seed=1)
    w = effective_bit_weights_all(arr)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert abs(w[0, 0] - 512 / 1023) < 4 * 0.01 * np.sqrt(512) / 1023


def test_mac_and_dac_share_one_realization():
    arr = build_array(cols=1, mismatch_sigma=0.05, seed=9)
    w = np.zeros((N_ACTIVE, 1), dtype=int)
    w[:512] = 1  # exactly the MSB group
    arr = load_weights(arr, w)
    assert compute_mac(arr, 0, np.ones(N_ACTIVE, dtype=int)).value == pytest.approx(
        effective_bit_weights(arr, 0)[0], rel=1e-12)


def test_weights_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    arr = load_weights(build_array(cols=3), rng.integers(0, 2, (UNIT_ROWS, 3)))
    back = load_weights_csv(build_array(cols=3), save_weights_csv(arr, tmp_path / "w.csv"))
    assert np.array_equal(back.weight_bits, arr.weight_bits)
