"""Seeded band-limited random seat excitation.

Acceleration is the ground truth. Velocity and displacement are exact
integrals of the same band-limited periodic realization, so the prescribed
platform motion is consistent at every sample and the displacement stays
bounded. A C2 smoothstep fades the motion in after the quiet settling window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXES = ("x", "y", "z")


@dataclass(frozen=True, eq=False)
class ExcitationSignal:
    sample_rate: float
    duration: float
    acceleration: np.ndarray  # (3, n) m/s^2
    velocity: np.ndarray
    displacement: np.ndarray
    seed: int
    band: tuple[float, float]
    target_rms: float
    settle_time: float

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.acceleration.shape[1]) / self.sample_rate

    @property
    def n_samples(self) -> int:
        return self.acceleration.shape[1]

    def excited(self) -> slice:
        return slice(int(round(self.settle_time * self.sample_rate)), None)

    def platform_array(self) -> np.ndarray:
        """(n, 3, 3): displacement, velocity, acceleration per sample."""
        return np.ascontiguousarray(
            np.stack([self.displacement.T, self.velocity.T, self.acceleration.T], axis=1)
        )


def quiet(duration: float, sample_rate: float = 1000.0, settle_time: float = 0.0) -> ExcitationSignal:
    n = int(round(duration * sample_rate)) + 1
    z = np.zeros((3, n))
    return ExcitationSignal(sample_rate, duration, z, z.copy(), z.copy(), 0, (0.0, 0.0), 0.0, settle_time)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    w = s**3 * (10 - 15 * s + 6 * s**2)
    dw = 30 * s**2 * (1 - s) ** 2
    ddw = 60 * s * (1 - s) * (1 - 2 * s)
    return w, dw, ddw


def generate_excitation(seed: int, band=(0.3, 12.0), target_rms: float = 0.1941,
                        duration: float = 35.0, settle_time: float = 5.0,
                        sample_rate: float = 1000.0, fade_time: float = 1.0,
                        axes=AXES) -> ExcitationSignal:
    """Gaussian noise band-passed to ``band`` and scaled to ``target_rms`` per axis
    over the excited window (t >= settle_time); exactly zero before it.

    ``axes`` selects which of x, y, z are excited; the others stay zero.
    """
    f_lo, f_hi = float(band[0]), float(band[1])
    if not (0 < f_lo < f_hi < sample_rate / 2):
        raise ValueError(f"infeasible band {band} for sample rate {sample_rate}")
    if not 0 <= settle_time < duration:
        raise ValueError("settle_time must lie inside the duration")
    n = int(round(duration * sample_rate)) + 1
    n0 = int(round(settle_time * sample_rate))
    m = n - n0
    freqs = np.fft.rfftfreq(m, 1.0 / sample_rate)
    keep = (freqs >= f_lo) & (freqs <= f_hi)
    if np.count_nonzero(keep) < 2:
        raise ValueError(f"band {band} holds too few frequency lines for a {duration - settle_time:.3g} s window")

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3, m))
    spec = np.fft.rfft(noise, axis=1)
    spec[:, ~keep] = 0.0
    omega = 2 * np.pi * freqs
    with np.errstate(divide="ignore", invalid="ignore"):
        vspec = np.where(keep, spec / (1j * omega), 0.0)
        dspec = np.where(keep, -spec / omega**2, 0.0)
    a_raw = np.fft.irfft(spec, n=m, axis=1)
    v_raw = np.fft.irfft(vspec, n=m, axis=1)
    d_raw = np.fft.irfft(dspec, n=m, axis=1)

    tau = np.arange(m) / sample_rate
    if fade_time > 0:
        w, dw, ddw = _smoothstep(tau / fade_time)
        dw = dw / fade_time
        ddw = ddw / fade_time**2
    else:
        w, dw, ddw = np.ones(m), np.zeros(m), np.zeros(m)
    acc = w * a_raw + 2 * dw * v_raw + ddw * d_raw
    vel = w * v_raw + dw * d_raw
    disp = w * d_raw

    out = np.zeros((3, 3, n))
    for i, ax in enumerate(AXES):
        if ax not in axes:
            continue
        scale = target_rms / np.sqrt(np.mean(acc[i] ** 2))
        out[0, i, n0:] = acc[i] * scale
        out[1, i, n0:] = vel[i] * scale
        out[2, i, n0:] = disp[i] * scale
    return ExcitationSignal(sample_rate, duration, out[0], out[1], out[2], int(seed),
                            (f_lo, f_hi), float(target_rms), float(settle_time))
