"""Transmissibility estimation from simulated trajectories.

Gains are H1 estimates (cross-spectrum over input auto-spectrum) from Welch
averaged periodograms with a Hann window and 50% overlap. Rotational outputs
are angular velocities, so rotational gains are in (rad/s)/(m/s^2).

When several seat axes are excited at once, the response to one axis is
polluted by the uncorrelated response to the others. ``trajectory_frfs`` then
uses the multi-input H1 estimate H = S_yx S_xx^-1 per frequency, which
separates the axes, and reports the multiple coherence of the output.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

BODIES = ("head", "upper_torso", "pelvis")
BODY_LABELS = {"head": "head", "upper_torso": "trunk", "pelvis": "pelvis"}
# seat input axis -> body outputs driven by it
AXIS_OUTPUTS = {
    "x": ("acc_x", "omega_y"),
    "z": ("acc_z", "omega_y"),
    "y": ("acc_y", "omega_x", "omega_z"),
}
FRF_HEADER = ("freq_hz", "gain", "phase_rad", "coherence")


class MissingChannel(KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.channel = name

    def __str__(self):
        return f"trajectory lacks channel {self.channel!r}"


@dataclass(frozen=True)
class EstimatorConfig:
    window_s: float = 10.0
    overlap: float = 0.5
    band: tuple = (0.5, 12.0)
    multi_input: bool = True

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window length must be positive")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        if not 0 <= self.band[0] < self.band[1]:
            raise ValueError(f"invalid band {self.band}")


@dataclass(frozen=True)
class Spectra:
    freq: np.ndarray
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    segments: int


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    freq: np.ndarray
    gain: np.ndarray
    phase: np.ndarray
    coherence: np.ndarray
    input: str = ""
    output: str = ""
    meta: dict = field(default_factory=dict)

    def band(self, lo: float, hi: float) -> "FrequencyResponse":
        m = (self.freq >= lo) & (self.freq <= hi)
        return FrequencyResponse(self.freq[m], self.gain[m], self.phase[m], self.coherence[m],
                                 self.input, self.output, self.meta)

    def peak(self, lo: float = 0.0, hi: float = np.inf) -> tuple[float, float]:
        """(frequency, gain) of the largest gain inside [lo, hi]."""
        b = self.band(lo, hi)
        i = int(np.argmax(b.gain))
        return float(b.freq[i]), float(b.gain[i])

    @property
    def key(self) -> str:
        return pair_key(self.input, self.output)


def pair_key(inp: str, out: str) -> str:
    return f"{inp}__{out}"


def welch_spectra(x, y, fs: float, window_len: int, overlap: float = 0.5) -> Spectra:
    """One-sided Hann-windowed Welch auto- and cross-spectra."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D series of equal length")
    if window_len < 2 or window_len > x.size:
        raise ValueError(f"series of {x.size} samples is too short for a {window_len}-sample window")
    noverlap = int(round(overlap * window_len))
    kw = dict(fs=fs, window="hann", nperseg=window_len, noverlap=noverlap, detrend="constant")
    f, sxx = signal.welch(x, **kw)
    _, syy = signal.welch(y, **kw)
    _, sxy = signal.csd(x, y, **kw)
    step = window_len - noverlap
    return Spectra(f, sxx, syy, sxy, 1 + (x.size - window_len) // step)


def frf(x, y, fs: float, config: EstimatorConfig = EstimatorConfig(),
        input_name: str = "", output_name: str = "") -> FrequencyResponse:
    """H1 frequency response of ``y`` to ``x`` restricted to the configured band."""
    n = int(round(config.window_s * fs))
    sp = welch_spectra(x, y, fs, min(n, len(x)), config.overlap)
    lo, hi = config.band
    m = (sp.freq >= lo) & (sp.freq <= hi)
    sxx = sp.sxx[m]
    if not np.any(sxx > 0):
        raise ValueError(f"input {input_name or 'x'} has no power in band {config.band}")
    tiny = np.finfo(float).tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        h = sp.sxy[m] / np.where(sxx > 0, sxx, np.nan)
        coh = np.abs(sp.sxy[m]) ** 2 / np.maximum(sxx * sp.syy[m], tiny)
    coh = np.clip(np.nan_to_num(coh), 0.0, 1.0)
    meta = {"window_samples": min(n, len(x)), "overlap": config.overlap, "segments": sp.segments,
            "fs": fs}
    return FrequencyResponse(sp.freq[m], np.abs(h), np.angle(h), coh, input_name, output_name, meta)


def multi_input_frf(inputs, y, fs: float, config: EstimatorConfig = EstimatorConfig(),
                    input_names=(), output_name: str = "") -> list[FrequencyResponse]:
    """Multi-input H1: one response per input, jointly estimated.

    ``inputs`` is (k, n). The coherence field holds the multiple coherence of
    ``y`` with all inputs (the same for every returned response).
    """
    X = np.atleast_2d(np.asarray(inputs, float))
    y = np.asarray(y, float)
    k = X.shape[0]
    n = min(int(round(config.window_s * fs)), X.shape[1])
    if n < 2 or y.shape != X.shape[1:]:
        raise ValueError("inputs and output must be equal-length series longer than one window")
    kw = dict(fs=fs, window="hann", nperseg=n, noverlap=int(round(config.overlap * n)), detrend="constant")
    f, _ = signal.welch(X[0], **kw)
    lo, hi = config.band
    m = (f >= lo) & (f <= hi)
    sxx = np.empty((m.sum(), k, k), complex)
    sxy = np.empty((m.sum(), k), complex)
    for i in range(k):
        for j in range(k):
            sxx[:, i, j] = signal.csd(X[i], X[j], **kw)[1][m]
        sxy[:, i] = signal.csd(X[i], y, **kw)[1][m]
    syy = signal.welch(y, **kw)[1][m]
    if np.any(np.linalg.matrix_rank(sxx) < k):
        raise ValueError("input cross-spectral matrix is singular in band; inputs are not independent")
    # S_xx H^T = S_xy
    h = np.linalg.solve(sxx, sxy[..., None])[..., 0]
    explained = np.real(np.einsum("fi,fi->f", np.conj(sxy), h))
    coh = np.clip(explained / np.maximum(syy, np.finfo(float).tiny), 0.0, 1.0)
    step = n - kw["noverlap"]
    meta = {"window_samples": n, "overlap": config.overlap, "segments": 1 + (X.shape[1] - n) // step,
            "fs": fs, "estimator": f"H1 multi-input ({k})"}
    names = list(input_names) or [""] * k
    return [FrequencyResponse(f[m], np.abs(h[:, i]), np.angle(h[:, i]), coh, names[i], output_name, meta)
            for i in range(k)]


def rms(series, window=None) -> float:
    """Root mean square over ``window`` (a slice or boolean mask; whole series if None)."""
    x = np.asarray(series, float)
    if window is not None:
        x = x[window]
    if x.size == 0:
        raise ValueError("empty RMS window")
    return float(np.sqrt(np.mean(x**2)))


def channel_pairs(bodies=BODIES, axes=("x", "y", "z")) -> list[tuple[str, str]]:
    pairs = []
    for ax in axes:
        for b in bodies:
            for out in AXIS_OUTPUTS[ax]:
                pairs.append((f"seat.acc_{ax}", f"{b}.{out}"))
    return pairs


def trajectory_frfs(log, pairs=None, config: EstimatorConfig = EstimatorConfig(),
                    t0: float = 5.0) -> dict[str, FrequencyResponse]:
    """FRFs for every channel pair over the part of ``log`` at or after ``t0``.

    By default the pairs cover every seat axis that actually moves.
    """
    if pairs is None:
        axes = [a for a in ("x", "y", "z") if f"seat.acc_{a}" in log and np.any(log[f"seat.acc_{a}"] != 0)]
        pairs = channel_pairs(axes=axes)
    for inp, out in pairs:
        for name in (inp, out):
            if name not in log:
                raise MissingChannel(name)
    w = log.window(t0)
    fs = w.sample_rate
    inputs = sorted({i for i, _ in pairs})
    if not config.multi_input or len(inputs) < 2:
        return {pair_key(i, o): frf(w[i], w[o], fs, config, i, o) for i, o in pairs}
    X = np.stack([w[i] for i in inputs])
    out = {}
    for o in dict.fromkeys(o for _, o in pairs):
        by_input = {r.input: r for r in multi_input_frf(X, w[o], fs, config, inputs, o)}
        for i, o2 in pairs:
            if o2 == o:
                out[pair_key(i, o)] = by_input[i]
    return {pair_key(i, o): out[pair_key(i, o)] for i, o in pairs}


def write_frfs(frfs: dict, out_dir) -> Path:
    """One CSV per pair plus an ``index.json`` listing pairs and files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for key, r in frfs.items():
        fname = f"{key}.csv"
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FRF_HEADER)
            for row in zip(r.freq, r.gain, r.phase, r.coherence):
                w.writerow([repr(float(v)) for v in row])
        index.append({"input": r.input, "output": r.output, "file": fname, "meta": r.meta})
    path = out / "index.json"
    path.write_text(json.dumps({"pairs": index}, indent=2))
    return path


def read_frfs(path) -> dict[str, FrequencyResponse]:
    """Load FRFs from an index file (or the directory holding ``index.json``)."""
    p = Path(path)
    if p.is_dir():
        p = p / "index.json"
    if not p.exists():
        raise FileNotFoundError(f"no FRF index at {p}")
    idx = json.loads(p.read_text())
    out = {}
    for e in idx["pairs"]:
        data = np.loadtxt(p.parent / e["file"], delimiter=",", skiprows=1, ndmin=2)
        r = FrequencyResponse(data[:, 0], data[:, 1], data[:, 2], data[:, 3], e["input"], e["output"],
                              e.get("meta", {}))
        out[r.key] = r
    return out


def base_excitation_transmissibility(f, fn: float, zeta: float) -> np.ndarray:
    """Absolute-acceleration transmissibility of a 1-DoF base-excited oscillator."""
    r = np.asarray(f, float) / fn
    return np.sqrt((1 + (2 * zeta * r) ** 2) / ((1 - r**2) ** 2 + (2 * zeta * r) ** 2))
