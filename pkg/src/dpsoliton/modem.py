"""Common/differential phase precoding of (b1, b2) and the matching receivers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .darboux import SolitonSpec

QPSK = tuple(math.pi / 4 * (2 * i + 1) for i in range(4))

DIFFERENTIAL = "differential"
TWIN_WAVE = "twin_wave"
PILOT = "pilot"
MODES = (DIFFERENTIAL, TWIN_WAVE, PILOT)


def wrap(phi):
    """Wrap to (-pi, pi]."""
    out = math.pi - np.mod(math.pi - np.asarray(phi, dtype=float), 2 * math.pi)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SymbolFrame:
    """Per-eigenvalue common and differential phases (radians)."""

    phi_c: tuple
    phi_d: tuple
    mode: str = DIFFERENTIAL

    def __post_init__(self):
        object.__setattr__(self, "phi_c", tuple(float(p) for p in self.phi_c))
        object.__setattr__(self, "phi_d", tuple(float(p) for p in self.phi_d))
        if len(self.phi_c) != len(self.phi_d):
            raise ValueError("phi_c and phi_d must have one entry per eigenvalue")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for c, d in zip(self.phi_c, self.phi_d):
            if self.mode == TWIN_WAVE and abs(wrap(d + 2 * c)) > 1e-12:
                raise ValueError("twin-wave frames need phi_d = -2 phi_c")
            if self.mode == PILOT and abs(wrap(c)) > 1e-12:
                raise ValueError("pilot frames need phi_c = 0")

    def __len__(self):
        return len(self.phi_c)


def random_frame(rng: np.random.Generator, n_eigenvalues: int, mode: str = DIFFERENTIAL) -> SymbolFrame:
    """Uniform QPSK symbols on the phases that carry data in ``mode``."""
    ci = rng.integers(0, 4, n_eigenvalues)
    di = rng.integers(0, 4, n_eigenvalues)
    if mode == DIFFERENTIAL:
        pc = [QPSK[i] for i in ci]
        pd = [QPSK[i] for i in di]
    elif mode == TWIN_WAVE:
        pc = [QPSK[i] for i in ci]
        pd = [wrap(-2 * p) for p in pc]
    elif mode == PILOT:
        pc = [0.0] * n_eigenvalues
        pd = [QPSK[i] for i in di]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SymbolFrame(tuple(pc), tuple(pd), mode)


def encode_frame(frame: SymbolFrame, magnitudes, eigenvalues) -> SolitonSpec:
    """b1 = |b1| exp(j phi_c), b2 = |b2| exp(j (phi_c + phi_d)) per eigenvalue."""
    entries = []
    for lam, (m1, m2), c, d in zip(eigenvalues, magnitudes, frame.phi_c, frame.phi_d):
        entries.append((lam, m1 * np.exp(1j * c), m2 * np.exp(1j * (c + d))))
    if len(entries) != len(frame):
        raise ValueError("need one eigenvalue and magnitude pair per symbol")
    return SolitonSpec(tuple(entries))


def decode_differential(estimate) -> list:
    """arg(conj(b1) b2) per eigenvalue; ``nan`` for failed points."""
    return [float(np.angle(np.conj(p.b1) * p.b2)) if p.ok else math.nan for p in estimate.points]


def ideal_backrotation(b: complex, lam: complex, L: float) -> complex:
    """Undo the channel rotation exp(-4j lam^2 L)."""
    return b * np.exp(4j * lam**2 * L)


def midpoint_backrotation(b: complex, lam0: complex, lam_hat: complex, L: float) -> complex:
    """Back-rotate with the trapezoid estimate (L/2)(lam0^2 + lam_hat^2) of the path integral."""
    return b * np.exp(2j * (lam0**2 + lam_hat**2) * L)


def decode_common(estimate, design: SolitonSpec, L: float, which: int = 1) -> list:
    """Back-rotated phase of b1 (``which=1``, the common phase) or of b2.

    The rotation uses the design eigenvalue at the transmitter and the
    detected one at distance ``L`` (normalized units).
    """
    out = []
    for p, lam0 in zip(estimate.points, design.eigenvalues):
        if not p.ok:
            out.append(math.nan)
            continue
        b = p.b1 if which == 1 else p.b2
        out.append(float(np.angle(midpoint_backrotation(b, lam0, p.lam, L))))
    return out


@dataclass(frozen=True)
class EigenTrace:
    """Sampled eigenvalue path lambda(z), z in normalized distance."""

    z: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        lam = np.asarray(self.lam, dtype=complex)
        if z.shape != lam.shape or z.ndim != 1 or z.size < 1:
            raise ValueError("z and lam must be matching 1-d arrays")
        if z.size > 1 and np.any(np.diff(z) <= 0):
            raise ValueError("trace distances must be strictly increasing")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "lam", lam)


def trace_backrotation(b: complex, trace: EigenTrace) -> complex:
    """Undo exp(-4j int lam(z)^2 dz) with trapezoidal quadrature over the trace."""
    integral = np.trapezoid(trace.lam**2, trace.z) if trace.z.size > 1 else 0.0
    return b * np.exp(4j * integral)


def hard_decide(phi_hat: float, transmitted: float | None = None, constellation=QPSK) -> tuple:
    """Nearest constellation index and the wrapped error.

    Ties go to the lower index.  The error is taken against ``transmitted``
    when given, otherwise against the decided point.
    """
    if not math.isfinite(phi_hat):
        raise ValueError("cannot decide on a non-finite phase")
    dist = np.abs(wrap(phi_hat - np.asarray(constellation)))
    idx = int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])
    ref = constellation[idx] if transmitted is None else transmitted
    return idx, wrap(phi_hat - ref)


@dataclass(frozen=True)
class DecodedFrame:
    """Estimated phases, QPSK decisions and wrapped errors per eigenvalue.

    Failed eigenvalues carry ``nan`` phases/errors and index -1.
    """

    phi_c: tuple
    phi_d: tuple
    index_c: tuple
    index_d: tuple
    error_c: tuple
    error_d: tuple


def decode_frame(estimate, design: SolitonSpec, L: float, sent: SymbolFrame) -> DecodedFrame:
    """Both receivers plus hard decisions against the transmitted frame."""
    pc = decode_common(estimate, design, L)
    pd = decode_differential(estimate)
    cols = {k: [] for k in ("ic", "id", "ec", "ed")}
    for c_hat, d_hat, c, d in zip(pc, pd, sent.phi_c, sent.phi_d):
        for hat, tx, ik, ek in ((c_hat, c, "ic", "ec"), (d_hat, d, "id", "ed")):
            if math.isfinite(hat):
                i, e = hard_decide(hat, tx)
            else:
                i, e = -1, math.nan
            cols[ik].append(i)
            cols[ek].append(e)
    return DecodedFrame(tuple(pc), tuple(pd), tuple(cols["ic"]), tuple(cols["id"]),
                        tuple(cols["ec"]), tuple(cols["ed"]))
