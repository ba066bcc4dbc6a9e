"""One test per headline criterion, each driven through the ``crcim check N`` command.

Thresholds are pinned here independently of ``crcim.acceptance.LIMITS``. Each
run's artifacts are cached for the session so the determinism test can replay
every manifest and compare output hashes.
"""
import json
import math
import time

import pytest

from crcim import cli

RUNS = {}


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")

    def get(n):
        if n not in RUNS:
            out = root / f"check{n}"
            t0 = time.perf_counter()
            code = cli.main(["check", str(n), "--out", str(out)])
            res = json.loads((out / f"check_{n}.json").read_text())
            res["wall_s"] = time.perf_counter() - t0
            RUNS[n] = (code, out, res)
        return RUNS[n]

    return get


def result(artifacts, n):
    code, _, res = artifacts(n)
    assert code == 0
    return res


def test_criterion_01_oracle_equivalence(artifacts):
    r = result(artifacts, 1)
    assert r["sar_points"] == 1024 + 4096 and r["sar_mismatches"] == 0
    assert r["matmul_instances"] == 101 and r["matmul_mismatches"] == 0
    assert r["tiled_instance"][1] == 2000
    assert r["wall_s"] < 60


def test_criterion_02_conversion_time_ratio(artifacts):
    r = result(artifacts, 2)
    assert (r["comparisons_cb_off"], r["comparisons_cb_on"]) == (10, 25)
    assert r["ratio"] == 2.5


def test_criterion_03_power_ratio(artifacts):
    r = result(artifacts, 3)
    assert r["comparator_fraction"] == 0.6
    assert math.isclose(r["power_ratio"], 1.9, abs_tol=1e-12)
    assert math.isclose((1 - 0.6) + 2.5 * 0.6, 1.9, abs_tol=1e-12)


def test_criterion_04_noise_doubling(artifacts):
    r = result(artifacts, 4)
    assert r["conversions_per_mode"] >= 10_000
    assert abs(r["code_noise_cb_on"] - 0.58) <= 0.01
    assert abs(r["code_noise_cb_off"] - 1.16) <= 0.10 * 1.16


def test_criterion_05_cb_csnr_gain(artifacts):
    r = result(artifacts, 5)
    assert r["trials"] >= 10_000
    assert abs(r["gain_db"] - 5.5) <= 0.7


def test_criterion_06_linearity_yield(artifacts):
    r = result(artifacts, 6)
    assert r["n_arrays"] == 200
    assert r["yield"] >= 0.95


def test_criterion_07_swing_advantage(artifacts):
    r = result(artifacts, 7)
    assert abs(r["mc_penalty_db"] - 6.0) <= 0.5
    assert round(r["analytic_db"], 2) == 6.02


def test_criterion_08_comparator_energy_law(artifacts):
    assert result(artifacts, 8)["comparator_energy_scale_2"] == 4.0


def test_criterion_09_plan_regression(artifacts):
    r = result(artifacts, 9)
    for layer, (bx, bw, cb) in r["plan"].items():
        expect = (4, 4, False) if layer.startswith("attn.") else (6, 6, True)
        assert (bx, bw, cb) == expect, layer
    assert 1.7 <= r["efficiency_gain"] <= 2.5


def test_criterion_10_desk_inference(artifacts):
    r = result(artifacts, 10)
    assert len(r["planned_runs"]) == len(r["swap_runs"]) == 10
    assert r["float_accuracy"] - r["planned_mean"] <= 2.0
    assert r["swap_mean"] < r["planned_mean"]
    assert r["wall_s"] < 600


def test_criterion_11_sqnr_above_csnr(artifacts):
    r = result(artifacts, 11)
    assert r["sqnr_cb_on"] > r["csnr_cb_on"]
    assert r["sqnr_cb_off"] > r["csnr_cb_off"]


@pytest.mark.parametrize("n", range(1, 12))
def test_criterion_12_manifest_replay(artifacts, tmp_path, n):
    code, out, _ = artifacts(n)
    first = json.loads((out / "manifest.json").read_text())
    assert cli.main(["check", str(n), "--config", str(out / "manifest.json"), "--out", str(tmp_path)]) == code
    assert json.loads((tmp_path / "manifest.json").read_text()) == first
