"""Time grids, dual-polarization envelopes, unit conversion and frame metrics.

Physical units throughout the package: time in ps, power in W, energy in
pJ (W * ps), distance in km.  Normalized units follow the Manakov equation

    j dq/dz = d^2q/dt^2 + 2 (|q1|^2 + |q2|^2) q

with q = A / sqrt(P0), t = T / T0 and z = Z / (2 L_D).  In this convention a
discrete eigenvalue lambda rotates its spectral coefficients as
b(z) = b(0) exp(-4j lambda^2 z).

The physical field obeys dA/dZ = -j |beta2|/2 d^2A/dT^2 - j gamma |A|^2 A,
i.e. the exp(j(wt - kz)) carrier convention, so the map between the two
unit systems is a pure rescaling (no conjugation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PHYSICAL = "physical"
NORMALIZED = "normalized"

FRAME_PS = 500.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sample grid ``t_n = t0 + n * dt`` with a power-of-two length."""

    n_samples: int
    dt: float
    t0: float

    def __post_init__(self):
        n = int(self.n_samples)
        if n < 1 or n & (n - 1):
            raise ValueError(f"n_samples must be a power of two, got {self.n_samples}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "n_samples", n)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def span(self) -> float:
        return self.n_samples * self.dt

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def freqs(self) -> np.ndarray:
        """Frequencies in FFT order, in cycles per unit time."""
        return np.fft.fftfreq(self.n_samples, self.dt)

    @property
    def bandwidth(self) -> float:
        """Full simulation bandwidth 1/dt."""
        return 1.0 / self.dt

    @property
    def center(self) -> float:
        return self.t0 + 0.5 * self.span

    def scaled(self, factor: float) -> "TimeGrid":
        return TimeGrid(self.n_samples, self.dt * factor, self.t0 * factor)

    def widened(self, factor: int) -> "TimeGrid":
        """Same step, ``factor`` times the samples, same center."""
        n = self.n_samples * factor
        return TimeGrid(n, self.dt, self.center - 0.5 * n * self.dt)


def make_grid(n_samples: int, dt: float, t0: float | None = None) -> TimeGrid:
    """Build a grid; ``t0=None`` centers the window on zero."""
    if t0 is None:
        t0 = -0.5 * n_samples * dt
    return TimeGrid(n_samples, dt, t0)


def frame_grid(n_samples: int = 8192, interval: float = FRAME_PS) -> TimeGrid:
    return make_grid(n_samples, interval / n_samples, -0.5 * interval)


@dataclass(frozen=True)
class NormalizationScales:
    """Time, power and length scales linking physical and normalized units.

    ``P0 = |beta2| / (gamma T0^2)`` and ``L_D = T0^2 / |beta2|``.  One unit of
    normalized distance is ``z_unit = 2 L_D`` km.
    """

    T0: float
    P0: float
    L_D: float

    @classmethod
    def from_time_scale(cls, T0: float, beta2: float, gamma: float) -> "NormalizationScales":
        if T0 <= 0:
            raise ValueError("T0 must be positive")
        return cls(T0=T0, P0=abs(beta2) / (gamma * T0**2), L_D=T0**2 / abs(beta2))

    @property
    def z_unit(self) -> float:
        return 2.0 * self.L_D

    @property
    def energy_unit(self) -> float:
        return self.P0 * self.T0

    def km_to_normalized(self, z_km):
        return np.asarray(z_km, dtype=float) / self.z_unit if np.ndim(z_km) else z_km / self.z_unit

    def normalized_to_km(self, z):
        return np.asarray(z, dtype=float) * self.z_unit if np.ndim(z) else z * self.z_unit


@dataclass(frozen=True, eq=False)
class DualPolEnvelope:
    """Two complex envelopes on a shared grid."""

    grid: TimeGrid
    q1: np.ndarray
    q2: np.ndarray
    unit_system: str = NORMALIZED

    def __post_init__(self):
        if self.unit_system not in (PHYSICAL, NORMALIZED):
            raise ValueError(f"unknown unit system {self.unit_system!r}")
        for name in ("q1", "q2"):
            arr = np.array(getattr(self, name), dtype=np.complex128)
            if arr.shape != (self.grid.n_samples,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({self.grid.n_samples},)")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_fields(cls, grid: TimeGrid, fields: np.ndarray, unit_system: str) -> "DualPolEnvelope":
        return cls(grid, fields[0], fields[1], unit_system)

    @classmethod
    def zeros(cls, grid: TimeGrid, unit_system: str = PHYSICAL) -> "DualPolEnvelope":
        z = np.zeros(grid.n_samples, complex)
        return cls(grid, z, z, unit_system)

    @property
    def fields(self) -> np.ndarray:
        """Stacked ``(2, n)`` copy of the two polarizations."""
        return np.stack([self.q1, self.q2])

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.q1) ** 2 + np.abs(self.q2) ** 2

    def swapped(self) -> "DualPolEnvelope":
        return DualPolEnvelope(self.grid, self.q2, self.q1, self.unit_system)

    def with_fields(self, q1, q2) -> "DualPolEnvelope":
        return DualPolEnvelope(self.grid, q1, q2, self.unit_system)

    def to_normalized(self, scales: NormalizationScales) -> "DualPolEnvelope":
        if self.unit_system == NORMALIZED:
            return self
        a = 1.0 / math.sqrt(scales.P0)
        return DualPolEnvelope(self.grid.scaled(1.0 / scales.T0), self.q1 * a, self.q2 * a, NORMALIZED)

    def to_physical(self, scales: NormalizationScales) -> "DualPolEnvelope":
        if self.unit_system == PHYSICAL:
            return self
        a = math.sqrt(scales.P0)
        return DualPolEnvelope(self.grid.scaled(scales.T0), self.q1 * a, self.q2 * a, PHYSICAL)


def energy(env: DualPolEnvelope) -> float:
    """Trapezoidal integral of |q1|^2 + |q2|^2 (pJ, or normalized)."""
    return float(np.trapezoid(env.power, dx=env.grid.dt))


def watts_to_dbm(p: float) -> float:
    return 10.0 * math.log10(p / 1e-3) if p > 0 else -math.inf


def dbm_to_watts(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def average_power(env: DualPolEnvelope, interval: float = FRAME_PS) -> float:
    """Frame-averaged power in dBm; a zero field gives ``-inf``."""
    if env.unit_system != PHYSICAL:
        raise ValueError("average_power needs a physical-unit envelope")
    if interval <= 0:
        raise ValueError("interval must be positive")
    # pJ / ps = W
    return watts_to_dbm(energy(env) / interval)


def papr(env: DualPolEnvelope, interval: float | None = None) -> float:
    """Peak-to-average power ratio in dB over ``interval`` (default: grid span)."""
    interval = env.grid.span if interval is None else interval
    p = env.power
    peak = float(p.max())
    if peak == 0.0:
        raise ValueError("PAPR of a zero field is undefined")
    mean = energy(env) / interval
    return 10.0 * math.log10(peak / mean)


def derive_time_scale(design, target_avg_power: float, interval: float, fiber) -> NormalizationScales:
    """Pick T0 so the launched frame carries ``target_avg_power`` (dBm).

    A pure discrete spectrum has normalized energy 4 * sum(sigma_k), i.e.
    physical energy ``4 sum(sigma) |beta2| / (gamma T0)``; equating it with
    ``P_avg * interval`` fixes T0.
    """
    sigmas = [lam.imag for lam in design.eigenvalues]
    if not sigmas or min(sigmas) <= 0:
        raise ValueError("design needs at least one eigenvalue with positive imaginary part")
    if not math.isfinite(target_avg_power):
        raise ValueError("target power must be finite")
    p_avg = dbm_to_watts(target_avg_power)
    if interval <= 0:
        raise ValueError("interval must be positive")
    T0 = 4.0 * sum(sigmas) * abs(fiber.beta2) / (fiber.gamma * p_avg * interval)
    return NormalizationScales.from_time_scale(T0, fiber.beta2, fiber.gamma)


def embed(env: DualPolEnvelope, grid: TimeGrid) -> DualPolEnvelope:
    """Zero-pad ``env`` into the wider, same-step ``grid`` (centered)."""
    if abs(grid.dt - env.grid.dt) > 1e-12 * env.grid.dt or grid.n_samples < env.grid.n_samples:
        raise ValueError("embedding grid must share dt and be at least as long")
    start = (grid.n_samples - env.grid.n_samples) // 2
    out = np.zeros((2, grid.n_samples), complex)
    out[:, start:start + env.grid.n_samples] = env.fields
    return DualPolEnvelope(grid, out[0], out[1], env.unit_system)


def crop(env: DualPolEnvelope, grid: TimeGrid) -> DualPolEnvelope:
    """Central ``grid.n_samples`` samples of ``env``, relabelled onto ``grid``."""
    n = grid.n_samples
    if n > env.grid.n_samples or abs(grid.dt - env.grid.dt) > 1e-9 * env.grid.dt:
        raise ValueError("crop grid must share dt and be no longer than the envelope")
    start = (env.grid.n_samples - n) // 2
    return DualPolEnvelope(grid, env.q1[start:start + n], env.q2[start:start + n], env.unit_system)


def ensemble_papr(envs, interval: float = FRAME_PS) -> float:
    """Highest instantaneous power over a set of frames relative to their mean average power (dB)."""
    envs = list(envs)
    if not envs:
        raise ValueError("need at least one frame")
    peak = max(float(e.power.max()) for e in envs)
    mean = float(np.mean([energy(e) / interval for e in envs]))
    if peak == 0.0:
        raise ValueError("PAPR of a zero field is undefined")
    return 10.0 * math.log10(peak / mean)
