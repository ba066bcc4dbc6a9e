"""Column characterization: transfer curves, INL/DNL, code noise, SQNR/CSNR.

All Monte Carlo loops run in fixed-size chunks, each on its own named
sub-stream, so results depend only on (seed, config) and not on how the work
is scheduled. Calibration routines back the noise parameters out of target
column characteristics and persist them as JSON.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adc import CB_ON, ConversionConfig, NoiseModel, convert
from .array import N_ACTIVE, ArrayModel, build_array, compute_mac_products, effective_bit_weights_all
from .streams import substream

CHUNK = 1 << 16
ENSEMBLE_CHUNK = 4096
TARGET_CODE_NOISE = 0.58
INL_LIMIT = 2.0
INL_YIELD = 0.95
INL_ARRAYS = 200
MISMATCH_CAP = 0.2  # search ceiling for the mismatch calibration (relative sigma)
INL_RAMP_OVERSAMPLE = 15  # odd, so ideal transitions fall midway between ramp points


class CalibrationError(RuntimeError):
    pass


# -- helpers -----------------------------------------------------------------

def _bit_weights(array_or_weights, col: int) -> np.ndarray:
    if isinstance(array_or_weights, ArrayModel):
        return effective_bit_weights_all(array_or_weights)[col][None, :]
    bw = np.asarray(array_or_weights, dtype=np.float64)
    if bw.shape != (10,):
        raise ValueError("explicit bit weights must be a length-10 vector, MSB first")
    return bw[None, :]


def convert_chunked(values, bit_weights, cfg: ConversionConfig, noise: NoiseModel, seed: int, tag: str,
                    cols=None, chunk: int = CHUNK, sampler: str = "comparator") -> np.ndarray:
    """:func:`convert` over fixed chunks, chunk ``i`` drawing from ``substream(seed, tag, i)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    c = None if cols is None else np.broadcast_to(np.asarray(cols, dtype=np.int64), v.shape)
    out = np.empty(v.size, dtype=np.int64)
    for i, s in enumerate(range(0, v.size, chunk)):
        rng = substream(seed, tag, i)
        out[s:s + chunk] = convert(v[s:s + chunk], bit_weights, cfg, noise, rng,
                                   cols=None if c is None else c[s:s + chunk], sampler=sampler)
    return out.reshape(np.shape(values))


def fmt6(v: float) -> str:
    """Six decimals, with -0.000000 folded to 0.000000."""
    return f"{round(float(v), 6) + 0.0:.6f}"


def snr_db(signal, measured) -> float:
    """10 log10(Var(signal) / mean squared error); +inf for an exact measurement."""
    signal = np.asarray(signal, dtype=np.float64)
    var = float(np.var(signal))
    if var == 0:
        raise ValueError("signal ensemble has zero variance")
    mse = float(np.mean((np.asarray(measured, dtype=np.float64) - signal) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(var / mse)


# -- transfer curve and linearity ---------------------------------------------

@dataclass(frozen=True)
class TransferCurve:
    ramp: np.ndarray
    mean_code: np.ndarray
    std_code: np.ndarray
    hit: np.ndarray  # (1024,) bool, code ever produced
    trials: int
    cfg: ConversionConfig
    noise: NoiseModel

    @property
    def points(self) -> int:
        return self.ramp.size

    def mean_noise(self) -> float:
        """Ramp-averaged code standard deviation, LSB."""
        return float(self.std_code.mean())

    def to_csv(self, path) -> Path:
        """One row per ramp point."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["value_lsb", "mean_code", "std_code"])
            for v, m, s in zip(self.ramp, self.mean_code, self.std_code):
                w.writerow([fmt6(v * N_ACTIVE), fmt6(m), fmt6(s)])
        return path


def ramp(points: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def inl_ramp_points(oversample: int = INL_RAMP_OVERSAMPLE) -> int:
    return N_ACTIVE * oversample + 1


def measure_transfer(array, col: int, cfg: ConversionConfig, noise: NoiseModel, ramp_points: int = 1024,
                     trials: int = 1, seed: int = 0) -> TransferCurve:
    """Convert every point of a uniform ramp over [0, 1] ``trials`` times.

    ``array`` is an :class:`ArrayModel` or an explicit length-10 DAC weight vector.
    """
    if ramp_points < 1024:
        raise ValueError("need at least 1024 ramp points")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    bw = _bit_weights(array, col)
    r = ramp(ramp_points)
    vals = np.repeat(r, trials)
    codes = convert_chunked(vals, bw, cfg, noise, seed, "transfer").reshape(ramp_points, trials)
    mean = codes.mean(axis=1)
    std = codes.std(axis=1, ddof=1) if trials > 1 else np.zeros(ramp_points)
    hit = np.zeros(N_ACTIVE + 1, dtype=bool)
    hit[np.unique(codes)] = True
    return TransferCurve(r, mean, std, hit, trials, cfg, noise)


@dataclass(frozen=True)
class Linearity:
    inl: np.ndarray  # (1024,) LSB, per code, endpoint fit
    dnl: np.ndarray  # (1024,) LSB, per code width; end codes 0
    missing: tuple[int, ...] = field(default=())

    @property
    def max_abs_inl(self) -> float:
        return float(np.max(np.abs(self.inl)))

    @property
    def max_abs_dnl(self) -> float:
        return float(np.max(np.abs(self.dnl)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["code", "inl_lsb", "dnl_lsb", "missing"])
            miss = set(self.missing)
            for k in range(self.inl.size):
                w.writerow([k, fmt6(self.inl[k]), fmt6(self.dnl[k]), int(k in miss)])
        return path


def transition_levels(curve: TransferCurve) -> np.ndarray:
    """T_k for k = 1..1023: where the mean code crosses k - 0.5, linearly interpolated."""
    m = np.maximum.accumulate(curve.mean_code)
    x = curve.ramp
    targets = np.arange(1, N_ACTIVE + 1) - 0.5
    # crossings outside the swept range (codes never reached) pin to the ramp ends
    i = np.clip(np.searchsorted(m, targets, side="left"), 1, m.size - 1)
    m0, m1 = m[i - 1], m[i]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.clip(np.where(m1 > m0, (targets - m0) / (m1 - m0), 0.5), 0.0, 1.0)
    return x[i - 1] + frac * (x[i] - x[i - 1])


def inl_dnl(curve: TransferCurve) -> Linearity:
    """Code-center transitions, DNL from code widths, INL against the endpoint line."""
    t = transition_levels(curve)  # index k-1 holds T_k
    step = (t[-1] - t[0]) / (t.size - 1)
    inl = np.zeros(N_ACTIVE + 1)
    inl[1:] = (t - (t[0] + step * np.arange(t.size))) / step
    dnl = np.zeros(N_ACTIVE + 1)
    dnl[1:N_ACTIVE] = np.diff(t) / step - 1.0
    missing = tuple(int(k) for k in np.flatnonzero(~curve.hit[1:N_ACTIVE]) + 1)
    for k in missing:
        dnl[k] = -1.0
    return Linearity(inl, dnl, missing)


def max_inl_of_weights(bit_weights, oversample: int = INL_RAMP_OVERSAMPLE, offset_lsb: float = 0.5) -> float:
    curve = measure_transfer(bit_weights, 0, ConversionConfig(offset_lsb=offset_lsb), NoiseModel(),
                             ramp_points=inl_ramp_points(oversample))
    return inl_dnl(curve).max_abs_inl


# -- SNR ensembles --------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    kind: str = "random-mac"  # or "ramp"
    dim: int = N_ACTIVE
    p_input: float = 0.5
    p_weight: float = 0.5
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random-mac", "ramp"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.trials < 1000:
            raise ValueError("dB-level metrics need at least 1000 trials")
        if not 1 <= self.dim <= N_ACTIVE:
            raise ValueError(f"dim must lie in [1, {N_ACTIVE}]")


def random_mac_products(ens: EnsembleSpec, chunk: int) -> np.ndarray:
    """0/1 products for trial chunk ``chunk`` (``ENSEMBLE_CHUNK`` trials, its own stream)."""
    start = chunk * ENSEMBLE_CHUNK
    n = min(ENSEMBLE_CHUNK, ens.trials - start)
    if n <= 0:
        raise IndexError("chunk beyond the ensemble")
    rng = substream(ens.seed, "ensemble", chunk)
    x = rng.random((n, ens.dim)) < ens.p_input
    w = rng.random((n, ens.dim)) < ens.p_weight
    prod = np.zeros((n, N_ACTIVE), dtype=np.uint8)
    prod[:, :ens.dim] = x & w
    return prod


def measure_csnr(array: ArrayModel, cfg: ConversionConfig, noise: NoiseModel, ens: EnsembleSpec,
                 attenuation: float = 1.0) -> float:
    """Compute SNR of the column readout over random 1b x 1b MAC vectors.

    Trial ``t`` is hosted on column ``t mod cols``. ``attenuation`` < 1 scales
    the analog value before conversion and the code back up afterwards, which
    models an architecture that loses signal swing ahead of the ADC.
    """
    if ens.kind != "random-mac":
        raise ValueError("CSNR needs a random-mac ensemble")
    if not 0 < attenuation <= 1:
        raise ValueError("attenuation must lie in (0, 1]")
    bw = effective_bit_weights_all(array)
    signal = np.empty(ens.trials)
    meas = np.empty(ens.trials)
    for i, s in enumerate(range(0, ens.trials, ENSEMBLE_CHUNK)):
        prod = random_mac_products(ens, i)
        e = s + prod.shape[0]
        cols = np.arange(s, e) % array.cols
        signal[s:e] = prod.sum(axis=1) / N_ACTIVE
        vals = compute_mac_products(array, prod, cols) * attenuation
        codes = convert(vals, bw, cfg, noise, substream(noise.seed, "csnr-readout", i), cols=cols)
        meas[s:e] = codes / N_ACTIVE / attenuation
    return snr_db(signal, meas)


def measure_sqnr(array: ArrayModel, cfg: ConversionConfig, noise: NoiseModel, ens: EnsembleSpec,
                 col: int = 0) -> float:
    """Same SNR formula over a uniform full-scale ramp of ``ens.trials`` points."""
    if ens.kind != "ramp":
        raise ValueError("SQNR needs a ramp ensemble")
    v = ramp(ens.trials)
    codes = convert_chunked(v, _bit_weights(array, col), cfg, noise, noise.seed, "sqnr")
    return snr_db(v, codes / N_ACTIVE)


def precision_csnr(bits: int, dim: int = 256, trials: int = 4000, seed: int = 0) -> float:
    """SNR of a ``bits``-bit signed dot product against its float value.

    Operands are i.i.d. uniform on [-1, 1]; inputs are quantized per vector and
    weights per tensor, as in the inference harness. The integer product is the
    noiseless readout of the bit-serial path (exact by construction).
    """
    from .nn.quant import quantize, quantize_rows

    rng = substream(seed, "precision", bits)
    x = rng.uniform(-1, 1, (trials, dim))
    w = rng.uniform(-1, 1, dim)
    xq, wq = quantize_rows(x, bits), quantize(w, bits)
    ref = x @ w
    meas = (xq.values @ wq.values) * xq.scale * wq.scale
    return snr_db(ref, meas)


# -- calibration ---------------------------------------------------------------

@dataclass(frozen=True)
class SigmaCalibration:
    sigma: float
    achieved: float
    target: float
    iterations: int


def code_noise(sigma: float, cfg: ConversionConfig = CB_ON, trials: int = 20, seed: int = 0,
               array=None, ramp_points: int = 1024) -> float:
    """Ramp-averaged code std at comparator ``sigma``; mismatch-free unless ``array`` is given."""
    arr = build_array(cols=1) if array is None else array
    curve = measure_transfer(arr, 0, cfg, NoiseModel(sigma, 0.0, seed), ramp_points, trials, seed)
    return curve.mean_noise()


def calibrate_comparator_sigma(target: float = TARGET_CODE_NOISE, cfg: ConversionConfig = CB_ON,
                               trials: int = 50, seed: int = 0, lo: float = 0.0, hi: float = 8.0,
                               rel_tol: float = 0.02, max_iter: int = 60) -> SigmaCalibration:
    """Bisect the comparator sigma so the ramp-averaged code noise hits ``target``.

    The same noise draws are reused at every step (common random numbers), so
    the measured noise is a monotone function of sigma up to code granularity.
    Iterates well past ``rel_tol`` and reports the achieved value.
    """
    if target < 0:
        raise ValueError("target must be >= 0")
    if target == 0:
        return SigmaCalibration(0.0, 0.0, 0.0, 0)
    f_lo = code_noise(lo, cfg, trials, seed)
    f_hi = code_noise(hi, cfg, trials, seed)
    if not f_lo <= target <= f_hi:
        raise CalibrationError(
            f"target {target} LSB not bracketed: noise({lo})={f_lo:.4f}, noise({hi})={f_hi:.4f}")
    best = (abs(f_hi - target), hi, f_hi)
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f = code_noise(mid, cfg, trials, seed)
        if abs(f - target) < best[0]:
            best = (abs(f - target), mid, f)
        if f < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-5:
            break
    _, sigma, achieved = best
    if abs(achieved - target) > rel_tol * target:
        raise CalibrationError(f"closest code noise {achieved:.4f} LSB misses target {target} by more than "
                               f"{rel_tol:.0%} (sigma={sigma:.5f})")
    return SigmaCalibration(float(sigma), float(achieved), float(target), it)


@dataclass(frozen=True)
class MismatchCalibration:
    sigma: float
    yield_: float
    limit: float
    n_arrays: int
    capped: bool = False


def _unit_normals_per_array(n_arrays: int, seed: int) -> list[np.ndarray]:
    # one column per array, drawn exactly as build_array would for that seed
    return [substream(seed + k, "array-mismatch").standard_normal((1024, 1)) for k in range(n_arrays)]


def _weights_from_normals(z: np.ndarray, sigma: float) -> np.ndarray:
    arr = ArrayModel(1024, 1, sigma * z, np.zeros((1024, 1), dtype=np.uint8), sigma, 0)
    return effective_bit_weights_all(arr)[0]


def inl_yield(sigma: float, limit: float = INL_LIMIT, n_arrays: int = INL_ARRAYS, seed: int = 0,
              normals=None) -> float:
    """Fraction of Monte Carlo arrays (seeds ``seed..seed+n-1``) whose max|INL| < ``limit``."""
    normals = _unit_normals_per_array(n_arrays, seed) if normals is None else normals
    ok = sum(max_inl_of_weights(_weights_from_normals(z, sigma)) < limit for z in normals)
    return ok / len(normals)


def calibrate_mismatch(limit: float = INL_LIMIT, target_yield: float = INL_YIELD, n_arrays: int = INL_ARRAYS,
                       seed: int = 0, cap: float = MISMATCH_CAP) -> MismatchCalibration:
    """Largest mismatch sigma, to 3 significant digits, meeting the INL yield target."""
    if limit <= 0:
        return MismatchCalibration(0.0, 0.0, limit, n_arrays)
    normals = _unit_normals_per_array(n_arrays, seed)

    def passes(s):
        return inl_yield(s, limit, n_arrays, seed, normals) >= target_yield

    if math.isinf(limit) or passes(cap):
        return MismatchCalibration(cap, inl_yield(cap, limit, n_arrays, seed, normals) if not math.isinf(limit)
                                   else 1.0, limit, n_arrays, capped=True)
    lo, hi = 0.0, cap
    while hi - lo > 1e-4 * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if passes(mid) else (lo, mid)
    s = _floor_sig(lo, 3)
    while s > 0 and not passes(s):
        s = _floor_sig(s - 10 ** (math.floor(math.log10(s)) - 2), 3)
    return MismatchCalibration(s, inl_yield(s, limit, n_arrays, seed, normals), limit, n_arrays)


def _floor_sig(x: float, digits: int) -> float:
    if x <= 0:
        return 0.0
    q = 10 ** (math.floor(math.log10(x)) - digits + 1)
    return round(math.floor(x / q + 1e-9) * q, 12)


# -- calibration file ------------------------------------------------------------

@dataclass
class Calibration:
    comparator_sigma: float
    code_noise_cb_on: float
    code_noise_cb_off: float
    mismatch_sigma: float
    inl_yield: float
    csnr_cb_on: float
    csnr_cb_off: float
    sqnr_cb_on: float
    sqnr_cb_off: float
    precision_csnr: dict[str, float]
    target_code_noise: float = TARGET_CODE_NOISE
    inl_limit: float = INL_LIMIT
    seed: int = 0
    version: str = __version__

    def noise_model(self, seed: int = 0, with_mismatch: bool = True) -> NoiseModel:
        return NoiseModel(self.comparator_sigma, self.mismatch_sigma if with_mismatch else 0.0, seed)

    def achievable(self) -> dict:
        """Inputs for the planner: macro CSNR per CB mode and operand SNR per precision."""
        return {"cb_on": self.csnr_cb_on, "cb_off": self.csnr_cb_off,
                "precision": {int(k): v for k, v in self.precision_csnr.items()}}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path=None) -> "Calibration":
        if path is None:
            from importlib.resources import files

            text = files("crcim.data").joinpath("calibration.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(**json.loads(text))


def run_calibration(seed: int = 0, trials: int = 50, csnr_trials: int = 20_000, n_arrays: int = INL_ARRAYS,
                    progress=None) -> Calibration:
    """Both calibrations plus the SNR table the planner and harness consume."""
    say = progress or (lambda msg: None)
    sc = calibrate_comparator_sigma(seed=seed, trials=trials)
    say(f"comparator sigma {sc.sigma:.5f} LSB -> CB-on code noise {sc.achieved:.4f} LSB")
    off = code_noise(sc.sigma, CB_ON.with_cb(False), trials=trials, seed=seed)
    mc = calibrate_mismatch(n_arrays=n_arrays, seed=seed)
    say(f"mismatch sigma {mc.sigma} -> INL yield {mc.yield_:.3f}")
    arr = build_array(cols=78)
    nm = NoiseModel(sc.sigma, 0.0, seed)
    ens = EnsembleSpec("random-mac", trials=csnr_trials, seed=seed)
    ramp_ens = EnsembleSpec("ramp", trials=csnr_trials, seed=seed)
    csnr_on = measure_csnr(arr, CB_ON, nm, ens)
    csnr_off = measure_csnr(arr, CB_ON.with_cb(False), nm, ens)
    sqnr_on = measure_sqnr(arr, CB_ON, nm, ramp_ens)
    sqnr_off = measure_sqnr(arr, CB_ON.with_cb(False), nm, ramp_ens)
    say(f"CSNR {csnr_on:.2f} / {csnr_off:.2f} dB, SQNR {sqnr_on:.2f} / {sqnr_off:.2f} dB (CB on / off)")
    prec = {str(b): precision_csnr(b, seed=seed) for b in range(2, 9)}
    return Calibration(sc.sigma, sc.achieved, off, mc.sigma, mc.yield_, csnr_on, csnr_off, sqnr_on, sqnr_off,
                       prec, seed=seed)
