"""Command-line entry point: ``crcim <subcommand> [flags]``.

Every run writes its artifacts plus a ``manifest.json`` (subcommand, resolved
config, seed, package version, sha256 of each artifact) into the output
directory. Feeding a manifest back through ``--config`` reruns the same
experiment and must reproduce the same hashes. Artifacts are staged in a
scratch directory and only moved into place when the run succeeds.

Exit codes: 0 success, 1 usage or invalid config, 2 infeasible plan,
3 calibration failure (4 with ``check --strict`` when the check fails).
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import inspect
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adc import CB_OFF, CB_ON, NoiseModel
from .array import build_array
from .metrics import (Calibration, CalibrationError, EnsembleSpec, code_noise, fmt6, inl_dnl, inl_ramp_points,
                      measure_csnr, measure_sqnr, measure_transfer, run_calibration)
from .planner import InfeasiblePlanError

OUT_ENV = "CRCIM_OUT"
EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_CALIBRATION, EXIT_CHECK_FAILED = 0, 1, 2, 3, 4

log = logging.getLogger("crcim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cb(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _floats(v: str) -> list[float]:
    try:
        return [float(s) for s in v.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {v!r}") from None


def _ints(v: str) -> list[int]:
    try:
        return [int(s) for s in v.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {v!r}") from None


def _u64(v: str) -> int:
    s = int(v)
    if not 0 <= s < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return s


# name -> (type, default, help); shared by flags and config files
COMMON = {
    "seed": (_u64, 0, "global seed"),
}
PARAMS: dict[str, dict] = {
    "calibrate": {
        "trials": (int, 50, "ramp passes per code-noise estimate"),
        "csnr_trials": (int, 20_000, "random-MAC trials for the SNR table"),
        "n_arrays": (int, 200, "Monte Carlo arrays for the INL yield"),
    },
    "transfer": {
        "sigma": (float, 0.0, "comparator noise, LSB rms"),
        "mismatch": (float, 0.0, "unit-capacitor mismatch sigma (relative)"),
        "cb": (_cb, False, "confidence boosting on|off"),
        "trials": (int, 1, "conversions per ramp point"),
        "ramp_points": (int, None, "ramp points (default 15 per LSB)"),
    },
    "noise-sweep": {
        "sigma": (float, None, "single sigma (overrides --sigmas)"),
        "sigmas": (_floats, [round(0.1 * k, 1) for k in range(21)], "comma-separated sigma list, LSB"),
        "cb": (_cb, None, "restrict to one CB mode (default: both)"),
        "trials": (int, 20, "ramp passes per point"),
    },
    "csnr": {
        "sigma": (float, None, "comparator noise, LSB (default: calibrated)"),
        "mismatch": (float, 0.0, "unit-capacitor mismatch sigma"),
        "cb": (_cb, None, "restrict to one CB mode (default: both)"),
        "trials": (int, 20_000, "ensemble size"),
        "attenuation": (float, 1.0, "pre-stage signal attenuation"),
        "calibration": (str, None, "calibration JSON (default: bundled)"),
    },
    "cost": {
        "comparator_fraction": (float, 0.6, "comparator share of conversion energy"),
    },
    "plan": {
        "workload": (str, None, "workload JSON (default: bundled ViT-small)"),
        "calibration": (str, None, "calibration JSON (default: bundled)"),
        "mlp_requirement": (float, None, "required MLP CSNR, dB (default: CB-on macro CSNR)"),
        "bits": (int, 6, "uniform baseline precision"),
    },
    "infer": {
        "plan": (str, "both", "planned | swapped | both | path to plans JSON"),
        "seeds": (int, 10, "number of seeds (seed, seed+1, ...)"),
        "sigma": (float, None, "comparator noise override, LSB"),
        "mismatch": (float, None, "mismatch override (default: calibrated)"),
        "calibration": (str, None, "calibration JSON (default: bundled)"),
    },
    "report": {
        "calibration": (str, None, "calibration JSON (default: bundled)"),
        "trials": (int, 20_000, "ensemble size for the SNR rows"),
    },
    "check": {
        "criterion": (int, None, "acceptance criterion number (1-12)"),
        "trials": (int, None, "override the check's trial count"),
        "calibration": (str, None, "calibration JSON (default: bundled)"),
        "strict": (bool, False, "exit 4 when the check fails"),
        "criteria": (_ints, None, "criterion 12 only: checks to rerun (default: the quick ones)"),
    },
}


# -- serialization ---------------------------------------------------------------

def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    return o


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- subcommands -----------------------------------------------------------------
# each takes (config dict, staging dir) and returns a short summary string

def _calibration(cfg) -> Calibration:
    return Calibration.load(cfg.get("calibration"))


def cmd_calibrate(c, out: Path) -> str:
    cal = run_calibration(c["seed"], c["trials"], c["csnr_trials"], c["n_arrays"], progress=log.info)
    cal.save(out / "calibration.json")
    return (f"comparator sigma {cal.comparator_sigma:.5f} LSB, mismatch sigma {cal.mismatch_sigma}, "
            f"CSNR {cal.csnr_cb_on:.2f}/{cal.csnr_cb_off:.2f} dB")


def cmd_transfer(c, out: Path) -> str:
    arr = build_array(cols=1, mismatch_sigma=c["mismatch"], seed=c["seed"])
    adc = CB_ON if c["cb"] else CB_OFF
    curve = measure_transfer(arr, 0, adc, NoiseModel(c["sigma"], c["mismatch"], c["seed"]),
                             c["ramp_points"] or inl_ramp_points(), c["trials"], c["seed"])
    lin = inl_dnl(curve)
    curve.to_csv(out / "transfer.csv")
    lin.to_csv(out / "linearity.csv")
    write_json(out / "summary.json", {"max_abs_inl": lin.max_abs_inl, "max_abs_dnl": lin.max_abs_dnl,
                                      "missing_codes": list(lin.missing), "mean_code_noise": curve.mean_noise()})
    return f"max|INL| {lin.max_abs_inl:.3f} LSB, max|DNL| {lin.max_abs_dnl:.3f} LSB"


def cmd_noise_sweep(c, out: Path) -> str:
    sigmas = [c["sigma"]] if c["sigma"] is not None else c["sigmas"]
    if not sigmas or min(sigmas) < 0:
        raise UsageError("sigmas must be a non-empty list of values >= 0")
    modes = [("cb_on", CB_ON), ("cb_off", CB_OFF)]
    if c["cb"] is not None:
        modes = [modes[0] if c["cb"] else modes[1]]
    rows = []
    for s in sigmas:
        rows.append([fmt6(s)] + [fmt6(code_noise(s, adc, c["trials"], c["seed"])) for _, adc in modes])
    write_rows(out / "noise_sweep.csv", ["sigma_lsb"] + [f"code_noise_{m}" for m, _ in modes], rows)
    return f"{len(rows)} sigma points"


def cmd_csnr(c, out: Path) -> str:
    sigma = c["sigma"] if c["sigma"] is not None else _calibration(c).comparator_sigma
    arr = build_array(mismatch_sigma=c["mismatch"], seed=c["seed"])
    nm = NoiseModel(sigma, c["mismatch"], c["seed"])
    modes = [("cb_on", CB_ON), ("cb_off", CB_OFF)]
    if c["cb"] is not None:
        modes = [modes[0] if c["cb"] else modes[1]]
    res, rows = {"sigma": sigma}, []
    for name, adc in modes:
        cs = measure_csnr(arr, adc, nm, EnsembleSpec("random-mac", trials=c["trials"], seed=c["seed"]),
                          attenuation=c["attenuation"])
        sq = measure_sqnr(arr, adc, nm, EnsembleSpec("ramp", trials=c["trials"], seed=c["seed"]))
        res[name] = {"csnr_db": cs, "sqnr_db": sq}
        rows.append([name, cs, sq])
    write_json(out / "csnr.json", res)
    write_rows(out / "csnr.csv", ["mode", "csnr_db", "sqnr_db"], [[m, fmt6(a), fmt6(b)] for m, a, b in rows])
    return ", ".join(f"{m}: CSNR {a:.2f} dB, SQNR {b:.2f} dB" for m, a, b in rows)


def cmd_cost(c, out: Path) -> str:
    from .costmodel import CostParams, ratio_table

    if not 0 < c["comparator_fraction"] <= 1:
        raise UsageError("comparator_fraction must be in (0, 1]")
    table = ratio_table(CostParams(comparator_fraction=c["comparator_fraction"]))
    write_rows(out / "ratios.csv", ["quantity", "value"], [[k, f"{v:.4f}"] for k, v in table])
    return "; ".join(f"{k} {v:.2f}" for k, v in table)


def cmd_plan(c, out: Path) -> str:
    from .costmodel import CostParams, network_cost, write_cost_csv
    from .planner import efficiency_gain, format_table, load_workload, plan_network, save_plans, uniform_plan

    name, layers = load_workload(c["workload"])
    plans = plan_network(layers, _calibration(c).achievable(), c["mlp_requirement"])
    base = uniform_plan(layers, c["bits"], True)
    gain = efficiency_gain(plans, base, layers)
    save_plans(plans, out / "plans.json")
    p = CostParams()
    write_cost_csv(network_cost(plans, [l.dims for l in layers], p), out / "cost.csv", plans)
    write_json(out / "summary.json", {"workload": name, "efficiency_gain": gain,
                                      "baseline": {"bits": c["bits"], "cb": True}})
    print(format_table(plans))
    return f"efficiency gain {gain:.3f}x vs uniform {c['bits']}b CB on"


def cmd_infer(c, out: Path) -> str:
    from .nn.evaluate import accuracy, evaluate, load_digits, planned, swapped
    from .nn.model import ViT
    from .planner import load_plans

    cal = _calibration(c)
    model, data = ViT.load(), load_digits("test")
    base = planned(model, cal.achievable())
    if c["plan"] == "both":
        runs = {"planned": base, "swapped": swapped(base)}
    elif c["plan"] == "planned":
        runs = {"planned": base}
    elif c["plan"] == "swapped":
        runs = {"swapped": swapped(base)}
    else:
        runs = {Path(c["plan"]).stem: {pl.layer_id: pl for pl in load_plans(c["plan"])}}
    if c["seeds"] < 1:
        raise UsageError("seeds must be >= 1")
    sigma = cal.comparator_sigma if c["sigma"] is None else c["sigma"]
    mism = cal.mismatch_sigma if c["mismatch"] is None else c["mismatch"]
    seeds = range(c["seed"], c["seed"] + c["seeds"])
    fl = accuracy(model, data)
    res, rows = {"float_accuracy": fl, "sigma": sigma, "mismatch": mism}, []
    for name, plans in runs.items():
        r = evaluate(data, model, plans, NoiseModel(sigma, mism), seeds)
        res[name] = {"mean": r.mean, "std": r.std, "accuracies": r.accuracies,
                     "plan": {k: [v.input_bits, v.weight_bits, v.cb_enabled] for k, v in plans.items()}}
        rows += [[name, s, fmt6(a)] for s, a in zip(r.seeds, r.accuracies)]
        log.info("%s: %.2f +- %.2f %%", name, r.mean, r.std)
    write_json(out / "infer.json", res)
    write_rows(out / "infer.csv", ["plan", "seed", "accuracy"], rows)
    return f"float {fl:.2f}%, " + ", ".join(f"{k} {res[k]['mean']:.2f}%" for k in runs)


def cmd_report(c, out: Path) -> str:
    from .costmodel import CostParams, ratio_table
    from .planner import efficiency_gain, load_workload, plan_network, uniform_plan

    cal = _calibration(c)
    _, layers = load_workload()
    plans = plan_network(layers, cal.achievable())
    gain = efficiency_gain(plans, uniform_plan(layers, 6, True), layers)
    arr = build_array()
    nm = NoiseModel(cal.comparator_sigma, 0.0, c["seed"])
    snr = {}
    for name, adc in (("cb_on", CB_ON), ("cb_off", CB_OFF)):
        snr[name] = {"csnr_db": measure_csnr(arr, adc, nm, EnsembleSpec("random-mac", trials=c["trials"],
                                                                        seed=c["seed"])),
                     "sqnr_db": measure_sqnr(arr, adc, nm, EnsembleSpec("ramp", trials=c["trials"], seed=c["seed"]))}
    rep = {"version": __version__, "calibration": vars(cal), "ratios": dict(ratio_table(CostParams())),
           "snr": snr, "plan": {pl.layer_id: [pl.input_bits, pl.weight_bits, pl.cb_enabled] for pl in plans},
           "efficiency_gain": gain}
    write_json(out / "report.json", rep)
    lines = ["| quantity | value |", "|---|---|",
             f"| comparator sigma (LSB) | {cal.comparator_sigma:.4f} |",
             f"| code noise CB on / off (LSB) | {cal.code_noise_cb_on:.3f} / {cal.code_noise_cb_off:.3f} |",
             f"| mismatch sigma | {cal.mismatch_sigma} |",
             f"| CSNR CB on / off (dB) | {snr['cb_on']['csnr_db']:.2f} / {snr['cb_off']['csnr_db']:.2f} |",
             f"| SQNR CB on / off (dB) | {snr['cb_on']['sqnr_db']:.2f} / {snr['cb_off']['sqnr_db']:.2f} |"]
    lines += [f"| {k} | {v:.3f} |" for k, v in rep["ratios"].items()]
    lines.append(f"| efficiency gain vs 6b CB on | {gain:.3f} |")
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return f"efficiency gain {gain:.3f}x"


def cmd_check(c, out: Path) -> str:
    from . import acceptance

    n = c["criterion"]
    if n == 12:
        res = determinism_check(c)
    elif n in acceptance.CHECKS:
        fn = acceptance.CHECKS[n]
        kw = {}
        sig = inspect.signature(fn).parameters
        if "seed" in sig:
            kw["seed"] = c["seed"]
        if "trials" in sig and c["trials"] is not None:
            kw["trials"] = c["trials"]
        if "cal" in sig:
            kw["cal"] = _calibration(c)
        res = fn(**kw)
    else:
        raise UsageError(f"criterion must be 1-12, got {n}")
    # wall time varies run to run, keep it out of the artifact
    runtime = res.pop("runtime_s", None)
    if runtime is not None:
        log.info("runtime %.1f s", runtime)
    write_json(out / f"check_{n}.json", res)
    c["_passed"] = bool(res["passed"])
    return f"criterion {n}: {'PASS' if res['passed'] else 'FAIL'}"


# checks that finish in seconds; determinism_check reruns these by default
QUICK_CHECKS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 11)


def determinism_check(c) -> dict:
    """Run each listed check twice through the CLI, the second time from the first run's manifest."""
    crit = c.get("criteria") or QUICK_CHECKS
    per = {}
    with tempfile.TemporaryDirectory(prefix="crcim-det-") as tmp:
        for n in crit:
            a, b = Path(tmp) / f"{n}a", Path(tmp) / f"{n}b"
            args = ["check", str(n), "--seed", str(c["seed"]), "--out", str(a)]
            if c.get("calibration"):
                args += ["--calibration", c["calibration"]]
            with contextlib.redirect_stdout(io.StringIO()):
                ra = main(args)
                rb = main(["check", str(n), "--config", str(a / "manifest.json"), "--out", str(b)])
            ma = json.loads((a / "manifest.json").read_text())
            mb = json.loads((b / "manifest.json").read_text())
            per[str(n)] = {"exit": [ra, rb], "identical": ma == mb and ra == rb == 0, "outputs": ma["outputs"]}
    return {"criteria": list(crit), "runs": per, "passed": all(v["identical"] for v in per.values())}


HELP = {
    "calibrate": "fit comparator and mismatch sigma, write calibration.json",
    "transfer": "ramp transfer curve plus INL/DNL CSV",
    "noise-sweep": "code noise vs comparator sigma, CB on and off",
    "csnr": "ensemble CSNR and SQNR",
    "cost": "headline conversion ratio table",
    "plan": "precision/CB plan for a workload, with energy and efficiency gain",
    "infer": "desk ViT accuracy through the simulated macro",
    "report": "one summary of calibration, ratios, SNR and plan",
    "check": "run one acceptance criterion",
}

COMMANDS = {"calibrate": cmd_calibrate, "transfer": cmd_transfer, "noise-sweep": cmd_noise_sweep,
            "csnr": cmd_csnr, "cost": cmd_cost, "plan": cmd_plan, "infer": cmd_infer, "report": cmd_report,
            "check": cmd_check}


# -- plumbing --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="crcim", description="CR-CIM macro simulator experiments.")
    ap.add_argument("--version", action="version", version=f"crcim {__version__}")
    sub = ap.add_subparsers(dest="subcommand", metavar="subcommand", parser_class=_Parser)
    sub.required = True
    for name, params in PARAMS.items():
        sp = sub.add_parser(name, help=HELP[name])
        if name == "check":
            sp.add_argument("criterion", type=int)
        sp.add_argument("--config", help="JSON config file or a previous run's manifest.json")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./crcim-out/<subcommand>)")
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, (typ, _, hlp) in {**COMMON, **params}.items():
            if key == "criterion":
                continue
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=hlp)
            else:
                sp.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=hlp,
                                metavar="on|off" if typ is _cb else None)
    return ap


def _coerce(key: str, typ, value):
    if value is None or typ is bool:
        return value if typ is not bool else bool(value)
    if typ is _cb:
        return value if isinstance(value, bool) else _cb(str(value))
    if typ in (_floats, _ints):
        conv = float if typ is _floats else int
        return [conv(v) for v in value] if isinstance(value, list) else typ(str(value))
    return typ(value)


def resolve_config(subcommand: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    spec = {**COMMON, **PARAMS[subcommand]}
    conf = {k: d for k, (_, d, _) in spec.items()}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        if "outputs" in data and "config" in data:  # a manifest
            if data.get("subcommand") != subcommand:
                raise UsageError(f"manifest is for {data.get('subcommand')!r}, not {subcommand!r}")
            data = data["config"]
        unknown = sorted(set(data) - set(spec))
        if unknown:
            raise UsageError(f"unknown config keys for {subcommand}: {', '.join(unknown)}")
        for k, v in data.items():
            try:
                conf[k] = _coerce(k, spec[k][0], v)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {k!r}: {exc}") from None
    for k in spec:
        if hasattr(ns, k):
            conf[k] = getattr(ns, k)
    return conf


def _out_dir(subcommand: str, ns) -> Path:
    if ns.out:
        return Path(ns.out)
    base = os.environ.get(OUT_ENV)
    return Path(base) / subcommand if base else Path("crcim-out") / subcommand


def run(subcommand: str, conf: dict, out: Path) -> int:
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
    t0 = time.perf_counter()
    try:
        summary = COMMANDS[subcommand](conf, stage)
        passed = conf.pop("_passed", None)
        files = sorted(p.name for p in stage.iterdir())
        write_json(stage / "manifest.json", {"subcommand": subcommand, "config": conf, "seed": conf["seed"],
                                             "version": __version__,
                                             "outputs": {f: sha256(stage / f) for f in files}})
        out.mkdir(parents=True, exist_ok=True)
        for f in files + ["manifest.json"]:
            os.replace(stage / f, out / f)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    log.info("done in %.1f s", time.perf_counter() - t0)
    print(f"{summary}\nwrote {out}")
    if passed is False and conf.get("strict"):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        conf = resolve_config(ns.subcommand, ns)
        if ns.subcommand == "check":
            conf["criterion"] = ns.criterion
        return run(ns.subcommand, conf, _out_dir(ns.subcommand, ns))
    except UsageError as exc:
        print(f"crcim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasiblePlanError as exc:
        print(f"crcim: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CalibrationError as exc:
        print(f"crcim: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (FileNotFoundError, ValueError) as exc:
        print(f"crcim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
