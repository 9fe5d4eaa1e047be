"""Noisy Manakov fiber link: split-step propagation, distributed ASE, inline filters.

Ideal distributed Raman amplification is modeled as lossless propagation;
the loss coefficient only sets the ASE power spectral density.  Integration
runs in normalized units (see :mod:`dpsoliton.sigkit`) with the state kept in
the frequency domain, so one step costs one inverse and one forward FFT.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.constants as const

from .sigkit import NORMALIZED, PHYSICAL, DualPolEnvelope, NormalizationScales, TimeGrid

log = logging.getLogger(__name__)

PLANCK = const.h


class StepSizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class FiberParams:
    """Fiber constants: beta2 [ps^2/km], gamma [1/(W km)], alpha [1/km], nu_s [THz]."""

    beta2: float = -5.75
    gamma: float = 1.6
    alpha: float = 0.046
    n_sp: float = 1.1
    nu_s: float = 193.4
    h: float = PLANCK

    def __post_init__(self):
        if not self.beta2 < 0:
            raise ValueError("beta2 must be negative (anomalous dispersion)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.n_sp < 1:
            raise ValueError("n_sp must be at least 1")


def ase_psd(fiber: FiberParams) -> float:
    """ASE spectral density n_sp * alpha * h * nu_s in W/(Hz km)."""
    return fiber.n_sp * fiber.alpha * fiber.h * fiber.nu_s * 1e12


@dataclass(frozen=True)
class LinkConfig:
    """Link layout.  ``filter_bandwidth=None`` disables the inline filter.

    ``noise_per_polarization`` selects whether each polarization receives the
    full ASE density (True) or half of it (False).
    """

    fiber: FiberParams = field(default_factory=FiberParams)
    length: float = 4350.0
    step: float = 0.1
    filter_bandwidth: float | None = 50.0
    filter_spacing: float = 50.0
    filter_order: int = 4
    probe_distances: tuple = ()
    noise_seed: int = 0
    noise_per_polarization: bool = True

    def __post_init__(self):
        object.__setattr__(self, "probe_distances", tuple(float(z) for z in self.probe_distances))
        if self.step <= 0 or self.length < 0:
            raise ValueError("step must be positive and length non-negative")
        if abs(self.length / self.step - round(self.length / self.step)) * self.step > 1e-9:
            raise ValueError("step must divide the link length")
        if self.filter_bandwidth is not None:
            if self.filter_bandwidth <= 0:
                raise ValueError("filter bandwidth must be positive")
            k = self.filter_spacing / self.step
            if self.filter_spacing <= 0 or abs(k - round(k)) * self.step > 1e-9:
                raise ValueError("step must divide the filter spacing")
        for z in self.probe_distances:
            k = z / self.step
            if z < 0 or z > self.length + 1e-9 or abs(k - round(k)) * self.step > 1e-9:
                raise ValueError(f"probe distance {z} km is not on the step grid")

    @property
    def n_steps(self) -> int:
        return int(round(self.length / self.step))

    @property
    def noise_psd(self) -> float:
        """ASE density injected into each polarization, W/(Hz km)."""
        psd = ase_psd(self.fiber)
        return psd if self.noise_per_polarization else 0.5 * psd

    def noiseless(self) -> "LinkConfig":
        """Same link with zero ASE and no inline filter (integrable limit)."""
        return replace(self, fiber=replace(self.fiber, alpha=0.0), filter_bandwidth=None)


def filter_response(freqs_ghz: np.ndarray, bandwidth: float, order: int = 4) -> np.ndarray:
    """Zero-phase super-Gaussian low-pass, -3 dB at |f| = bandwidth/2.

    ``order=0`` selects an ideal rectangular filter.
    """
    x = 2.0 * np.abs(freqs_ghz) / bandwidth
    if order == 0:
        return (x <= 1.0).astype(float)
    return np.exp(-0.5 * math.log(2.0) * x ** (2 * order))


def _freqs_ghz(env: DualPolEnvelope, time_scale: float | None) -> np.ndarray:
    if env.unit_system == PHYSICAL:
        return env.grid.freqs * 1e3
    if time_scale is None:
        raise ValueError("a normalized envelope needs time_scale (T0 in ps)")
    return env.grid.freqs / time_scale * 1e3


def inline_filter(env: DualPolEnvelope, bandwidth: float, order: int = 4,
                  time_scale: float | None = None) -> DualPolEnvelope:
    """Low-pass both polarizations; ``bandwidth`` in GHz (full width)."""
    f = _freqs_ghz(env, time_scale)
    if bandwidth >= 1e3 / (env.grid.dt * (time_scale or 1.0)):
        warnings.warn("filter bandwidth exceeds the simulation bandwidth; not filtering",
                      stacklevel=2)
        return env
    H = filter_response(f, bandwidth, order)
    out = np.fft.ifft(np.fft.fft(env.fields, axis=-1) * H, axis=-1)
    return env.with_fields(out[0], out[1])


def band_power(env: DualPolEnvelope, bandwidth: float, time_scale: float | None = None) -> float:
    """Mean power (over the window) inside |f| <= bandwidth/2, both polarizations."""
    f = _freqs_ghz(env, time_scale)
    X = np.fft.fft(env.fields, axis=-1)
    mask = np.abs(f) <= 0.5 * bandwidth
    n = env.grid.n_samples
    return float((np.abs(X[:, mask]) ** 2).sum() / n**2)


def measure_snr(env: DualPolEnvelope, reference: DualPolEnvelope, bandwidth: float,
                time_scale: float | None = None) -> float:
    """In-band SNR (dB) of ``env`` against a noiseless ``reference``.

    The reference is first aligned to the received field by a least-squares
    complex gain; signal power is the in-band power of the aligned reference
    and noise power that of the residual.  Returns ``inf`` for a perfect match.
    """
    if env.grid != reference.grid:
        raise ValueError("env and reference must share a grid")
    r = reference.fields
    x = env.fields
    rr = np.vdot(r, r).real
    if rr == 0:
        raise ValueError("reference field is zero")
    gain = np.vdot(r, x) / rr
    aligned = reference.with_fields(*(gain * r))
    resid = env.with_fields(*(x - gain * r))
    ps = band_power(aligned, bandwidth, time_scale)
    pn = band_power(resid, bandwidth, time_scale)
    if pn <= ps * 1e-30:
        return math.inf
    return 10.0 * math.log10(ps / pn)


@dataclass
class Probe:
    distance: float
    env: DualPolEnvelope


def propagate(env: DualPolEnvelope, link: LinkConfig, scales: NormalizationScales,
              rng: np.random.Generator | None = None) -> list:
    """Symmetric split-step propagation with per-step ASE and inline filtering.

    Returns ``[(distance_km, envelope), ...]`` for the probe distances, in the
    unit system of the input.  Noise is drawn from ``rng`` or, by default, a
    PCG64 generator seeded with ``link.noise_seed``.
    """
    unit_in = env.unit_system
    if unit_in == PHYSICAL:
        norm = env.to_normalized(scales)
    else:
        norm = env
    grid = norm.grid
    n = grid.n_samples
    h = link.step / scales.z_unit
    omega = 2 * np.pi * grid.freqs
    half_disp = np.exp(0.5j * omega**2 * h)

    noise_var = link.noise_psd * link.step / (grid.dt * scales.T0 * 1e-12) / scales.P0
    noisy = noise_var > 0
    if noisy and rng is None:
        rng = np.random.Generator(np.random.PCG64(link.noise_seed))
    # white noise of per-sample variance v has per-bin variance n*v after the FFT
    noise_sd = math.sqrt(0.5 * noise_var * n)

    H = None
    filter_every = 0
    if link.filter_bandwidth is not None:
        f_ghz = grid.freqs / scales.T0 * 1e3
        if link.filter_bandwidth >= 1e3 / (grid.dt * scales.T0):
            warnings.warn("filter bandwidth exceeds the simulation bandwidth; not filtering",
                          stacklevel=2)
        else:
            H = filter_response(f_ghz, link.filter_bandwidth, link.filter_order)
            filter_every = int(round(link.filter_spacing / link.step))

    probe_steps = {}
    for z in link.probe_distances:
        probe_steps.setdefault(int(round(z / link.step)), []).append(z)

    X = np.fft.fft(norm.fields, axis=-1)
    e_ref = float((np.abs(X) ** 2).sum())
    out = []

    def snapshot(k):
        fields = np.fft.ifft(X, axis=-1)
        snap = DualPolEnvelope(grid, fields[0], fields[1], NORMALIZED)
        if unit_in == PHYSICAL:
            snap = snap.to_physical(scales)
        for z in probe_steps[k]:
            out.append((z, snap))

    if 0 in probe_steps:
        snapshot(0)
    for k in range(1, link.n_steps + 1):
        X *= half_disp
        u = np.fft.ifft(X, axis=-1)
        p = u.real**2 + u.imag**2
        u *= np.exp(-2j * h * (p[0] + p[1]))
        X = np.fft.fft(u, axis=-1)
        X *= half_disp
        if noisy:
            X += noise_sd * (rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n)))
        elif k % 100 == 0 or k == link.n_steps:
            e_now = float((np.abs(X) ** 2).sum())
            if not math.isfinite(e_now) or (e_ref > 0 and e_now > 1.01 * e_ref):
                raise StepSizeError(f"energy grew by {e_now / e_ref - 1:.3g} at step {k}; reduce the step")
        if H is not None and k % filter_every == 0:
            X *= H
            e_ref = float((np.abs(X) ** 2).sum())
        if k in probe_steps:
            snapshot(k)
    out.sort(key=lambda item: item[0])
    return out


# Waveform snapshot files: little-endian header (u64 n_samples, f64 dt,
# u32 unit flag; 0 = physical, 1 = normalized) followed by float64 re/im pairs
# of q1 and then q2.  The grid is taken as centered on t = 0.
_HEADER = struct.Struct("<QdI")


def write_waveform(path, env: DualPolEnvelope) -> None:
    flag = 0 if env.unit_system == PHYSICAL else 1
    body = np.empty(4 * env.grid.n_samples, "<f8")
    n = env.grid.n_samples
    body[0:2 * n:2], body[1:2 * n:2] = env.q1.real, env.q1.imag
    body[2 * n::2], body[2 * n + 1::2] = env.q2.real, env.q2.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, env.grid.dt, flag))
        fh.write(body.tobytes())


def read_waveform(path) -> DualPolEnvelope:
    with open(path, "rb") as fh:
        raw = fh.read()
    n, dt, flag = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, "<f8", offset=_HEADER.size)
    if body.size != 4 * n:
        raise ValueError(f"{path}: expected {4 * n} samples, found {body.size}")
    q1 = body[0:2 * n:2] + 1j * body[1:2 * n:2]
    q2 = body[2 * n::2] + 1j * body[2 * n + 1::2]
    grid = TimeGrid(n, dt, -0.5 * n * dt)
    return DualPolEnvelope(grid, q1, q2, PHYSICAL if flag == 0 else NORMALIZED)


def guard_snr(window: DualPolEnvelope, frame: TimeGrid, bandwidth: float,
              time_scale: float | None = None) -> tuple:
    """In-band signal and noise power (same units as the field squared) of a padded window.

    The noise is read from the two signal-free guard segments at the window
    edges, each as long as ``frame``; the signal is the in-band power of the
    central frame minus that noise.  ASE is stationary and the inline
    filters are time-invariant, so the guard segments see the same noise
    statistics as the frame.
    """
    n, m = window.grid.n_samples, frame.n_samples
    if n < 3 * m:
        raise ValueError("window needs guard segments at least as long as the frame on both sides")
    seg_grid = TimeGrid(m, window.grid.dt, 0.0)
    noise = []
    for sl in (slice(0, m), slice(n - m, n)):
        seg = DualPolEnvelope(seg_grid, window.q1[sl], window.q2[sl], window.unit_system)
        noise.append(band_power(seg, bandwidth, time_scale))
    pn = 0.5 * (noise[0] + noise[1])
    start = (n - m) // 2
    mid = DualPolEnvelope(seg_grid, window.q1[start:start + m], window.q2[start:start + m],
                          window.unit_system)
    return band_power(mid, bandwidth, time_scale) - pn, pn
