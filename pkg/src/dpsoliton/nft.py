"""Forward nonlinear Fourier transform for the Manakov (3x3 AKNS) system.

The envelope is treated as piecewise constant on cells of width dt centered
on the samples.  Each cell contributes the exact exponential of

    M = [[-j lam, q1, q2], [-q1*, j lam, 0], [-q2*, 0, j lam]]

which has the closed form (k^2 = -lam^2 - |q|^2, e = exp(j lam h))

    [[c - j lam s,  s q^T                      ],
     [-s q*,        e I + (c + j lam s - e) q* q^T / |q|^2]]

with c = cosh(kh) and s = sinh(kh)/k.  Boundary normalization:
phi -> e1 exp(-j lam t) at the left edge; a(lam) and b_i(lam) are read off
against exp(-j lam t) and exp(j lam t) at the right edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .sigkit import NORMALIZED, DualPolEnvelope

EIG_TOL = 1e-9
MAX_NEWTON = 50
COND_LIMIT = 1e12


class NumericalError(RuntimeError):
    pass


class EigenvalueCollision(NumericalError):
    pass


_FACT = [math.factorial(n) for n in range(40)]
_C_COEF = np.array([1.0 / _FACT[2 * n] for n in range(12)])
_S_COEF = np.array([1.0 / _FACT[2 * n + 1] for n in range(12)])
_G_COEF = np.array([2.0 * n / _FACT[2 * n + 1] for n in range(1, 13)])


def _entire(x):
    """cosh(sqrt x), sinh(sqrt x)/sqrt x and their (C - S)/x, all entire in x."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 0.5
    # 12 terms is below 1e-18 relative for |x| < 0.5
    with np.errstate(over="ignore", invalid="ignore"):
        C = np.polynomial.polynomial.polyval(x, _C_COEF)
        S = np.polynomial.polynomial.polyval(x, _S_COEF)
        G = np.polynomial.polynomial.polyval(x, _G_COEF)
    if not small.all():
        big = ~small
        sq = np.sqrt(x[big])
        Cb, Sb = np.cosh(sq), np.sinh(sq) / sq
        C[big], S[big] = Cb, Sb
        G[big] = (Cb - Sb) / x[big]
    return C, S, G


def cell_matrices(q1, q2, lam, h, derivative=True):
    """Per-cell transfer matrices (n, 3, 3) and optionally their d/dlam.

    A negative ``h`` yields the inverse matrices.
    """
    lam = complex(lam)
    q1 = np.asarray(q1, complex)
    q2 = np.asarray(q2, complex)
    r2 = q1.real**2 + q1.imag**2 + q2.real**2 + q2.imag**2
    x = (-lam * lam - r2) * (h * h)
    C, S, G = _entire(x)
    c = C
    s = h * S
    e = np.exp(1j * lam * h)
    nz = r2 > 1e-200
    inv_r2 = np.where(nz, 1.0 / np.where(nz, r2, 1.0), 0.0)
    w = (c + 1j * lam * s - e) * inv_r2
    cq1, cq2 = q1.conj(), q2.conj()

    n = q1.size
    T = np.empty((n, 3, 3), complex)
    T[:, 0, 0] = c - 1j * lam * s
    T[:, 0, 1] = s * q1
    T[:, 0, 2] = s * q2
    T[:, 1, 0] = -s * cq1
    T[:, 2, 0] = -s * cq2
    T[:, 1, 1] = e + w * cq1 * q1
    T[:, 1, 2] = w * cq1 * q2
    T[:, 2, 1] = w * cq2 * q1
    T[:, 2, 2] = e + w * cq2 * q2
    if not derivative:
        return T, None

    g = h**3 * G
    dc = -lam * h * s
    ds = -lam * g
    de = 1j * h * e
    dw = (dc + 1j * s + 1j * lam * ds - de) * inv_r2
    dT = np.empty_like(T)
    dT[:, 0, 0] = dc - 1j * s - 1j * lam * ds
    dT[:, 0, 1] = ds * q1
    dT[:, 0, 2] = ds * q2
    dT[:, 1, 0] = -ds * cq1
    dT[:, 2, 0] = -ds * cq2
    dT[:, 1, 1] = de + dw * cq1 * q1
    dT[:, 1, 2] = dw * cq1 * q2
    dT[:, 2, 1] = dw * cq2 * q1
    dT[:, 2, 2] = de + dw * cq2 * q2
    return T, dT


def ordered_product(T, dT=None):
    """``T[-1] @ ... @ T[0]`` by pairwise reduction with running rescaling.

    Returns ``(P, dP, log_scale)`` with the true product ``P * exp(log_scale)``
    (``dP`` likewise, the lambda-derivative by the product rule).
    """
    T = np.asarray(T)
    logs = np.zeros(T.shape[0])
    have_d = dT is not None
    eye = np.eye(3, dtype=complex)
    while T.shape[0] > 1:
        if T.shape[0] % 2:
            T = np.concatenate([T, eye[None]])
            logs = np.append(logs, 0.0)
            if have_d:
                dT = np.concatenate([dT, np.zeros((1, 3, 3), complex)])
        lo, hi = T[0::2], T[1::2]
        P = hi @ lo
        if have_d:
            dT = dT[1::2] @ lo + hi @ dT[0::2]
        nrm = np.abs(P).max(axis=(1, 2))
        nrm = np.where(nrm > 0, nrm, 1.0)
        P /= nrm[:, None, None]
        if have_d:
            dT /= nrm[:, None, None]
        logs = logs[0::2] + logs[1::2] + np.log(nrm)
        T = P
    return T[0], (dT[0] if have_d else None), float(logs[0])


def _edges(env):
    g = env.grid
    t_left = g.t0 - 0.5 * g.dt
    return t_left, t_left + g.span


def _check_env(env):
    if env.unit_system != NORMALIZED:
        raise ValueError("the NFT expects a normalized-unit envelope")


def scatter(env: DualPolEnvelope, lam: complex) -> tuple:
    """Return ``(a(lam), da/dlam)`` for ``env`` on its grid window."""
    _check_env(env)
    lam = complex(lam)
    if lam.imag < 0:
        raise ValueError("scatter is defined for Im(lam) >= 0")
    h = env.grid.dt
    T, dT = cell_matrices(env.q1, env.q2, lam, h)
    P, dP, ls = ordered_product(T, dT)
    t1, t2 = _edges(env)
    span = t2 - t1
    with np.errstate(over="ignore", invalid="ignore"):
        ph = np.exp(1j * lam * span + ls)
        a = P[0, 0] * ph
        ap = (dP[0, 0] + 1j * span * P[0, 0]) * ph
    if not (np.isfinite(a) and np.isfinite(ap)):
        raise NumericalError(f"non-finite scattering data at lam={lam}")
    return complex(a), complex(ap)


def newton_root(env: DualPolEnvelope, guess: complex, tol: float = EIG_TOL,
                max_iter: int = MAX_NEWTON):
    """Newton search for a zero of a(lam); returns ``(lam, |a|, converged)``."""
    lam = complex(guess)
    res = math.inf
    for _ in range(max_iter):
        if not lam.imag > 0 or not np.isfinite(lam):
            return lam, res, False
        try:
            # a diverging iterate overflows; the finiteness checks report it
            with np.errstate(over="ignore", invalid="ignore"):
                a, ap = scatter(env, lam)
        except NumericalError:
            return lam, res, False
        res = abs(a)
        if res <= tol:
            return lam, res, True
        if ap == 0:
            return lam, res, False
        step = a / ap
        lam = lam - step
    return lam, res, False


def find_eigenvalues(env: DualPolEnvelope, guesses, tol: float = EIG_TOL,
                     max_iter: int = MAX_NEWTON, collision_tol: float = 1e-6) -> list:
    """Newton-refine each guess; ``nan`` marks a guess that did not converge.

    Converged roots are assigned to guesses by minimum total distance (ties
    prefer giving the larger-Im root to the earlier guess).  Two guesses
    landing on one root raise :class:`EigenvalueCollision`.
    """
    _check_env(env)
    guesses = [complex(g) for g in guesses]
    roots = []
    for g in guesses:
        lam, _, ok = newton_root(env, g, tol, max_iter)
        roots.append(lam if ok else None)
    found = [r for r in roots if r is not None]
    for i in range(len(found)):
        for j in range(i + 1, len(found)):
            if abs(found[i] - found[j]) < collision_tol:
                raise EigenvalueCollision(f"two guesses converged to {found[i]}")
    out = [complex(np.nan, np.nan)] * len(guesses)
    if not found:
        return out
    # associate converged roots with guesses by nearest neighbor
    best, best_cost = None, math.inf
    for slots in permutations(range(len(guesses)), len(found)):
        cost = sum(abs(found[i] - guesses[s]) for i, s in enumerate(slots))
        if cost < best_cost - 1e-15:
            best, best_cost = slots, cost
    for i, s in enumerate(best):
        out[s] = found[i]
    return out


def energy_centroid_index(env: DualPolEnvelope) -> int:
    p = env.power
    tot = p.sum()
    if tot == 0:
        return env.grid.n_samples // 2
    return int(round(float((p * np.arange(p.size)).sum() / tot)))


def forward_backward_b(env: DualPolEnvelope, lam: complex, split: int | None = None,
                       max_shifts: int = 3) -> tuple:
    """Spectral coefficients ``(b1, b2)`` at an eigenvalue ``lam``.

    The left Jost solution is carried forward to the split point and the two
    right Jost solutions backward to it; ``phi = b1 psi_1 + b2 psi_2`` is then
    solved in least squares.
    """
    _check_env(env)
    lam = complex(lam)
    n = env.grid.n_samples
    h = env.grid.dt
    t1, t2 = _edges(env)
    m0 = energy_centroid_index(env) if split is None else int(split)
    shifts = [0] + [s * k * max(n // 16, 1) for k in range(1, max_shifts + 1) for s in (1, -1)]
    T_fwd, _ = cell_matrices(env.q1, env.q2, lam, h, derivative=False)
    T_bwd, _ = cell_matrices(env.q1, env.q2, lam, -h, derivative=False)
    tried = 0
    for sh in shifts:
        m = min(max(m0 + sh, 1), n - 1)
        left, _, ls_l = ordered_product(T_fwd[:m])
        right, _, ls_r = ordered_product(T_bwd[m:][::-1])
        basis = right[:, 1:3]
        if np.linalg.cond(basis) > COND_LIMIT:
            tried += 1
            if tried > max_shifts:
                break
            continue
        coef, *_ = np.linalg.lstsq(basis, left[:, 0], rcond=None)
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.exp(ls_l - ls_r - 1j * lam * (t1 + t2))
            b = coef * scale
        if not np.all(np.isfinite(b)):
            raise NumericalError(f"non-finite b at lam={lam}")
        return complex(b[0]), complex(b[1])
    raise NumericalError(f"ill-conditioned Jost basis at lam={lam} after {max_shifts} shifts")


@dataclass
class ScatteringResult:
    lam: complex
    a: complex
    a_prime: complex
    b1: complex
    b2: complex
    residual: float
    ok: bool = True

    @classmethod
    def failed(cls):
        nan = complex(np.nan, np.nan)
        return cls(nan, nan, nan, nan, nan, math.inf, False)


@dataclass
class SpectrumEstimate:
    points: list
    distance: float
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.points)

    @property
    def eigenvalues(self) -> list:
        return [p.lam for p in self.points]


def analyze(env: DualPolEnvelope, design, distance: float = 0.0) -> SpectrumEstimate:
    """Estimate ``(lam_k, b1_k, b2_k)`` for every design eigenvalue.

    Eigenvalues that fail (no convergence, collision, ill-conditioned
    extraction) come back as failed points; nothing is raised.
    """
    guesses = list(design.eigenvalues)
    try:
        roots = find_eigenvalues(env, guesses)
    except EigenvalueCollision as exc:
        return SpectrumEstimate([ScatteringResult.failed() for _ in guesses], distance,
                                [str(exc)] * len(guesses))
    points, failures = [], []
    for k, lam in enumerate(roots):
        if not np.isfinite(lam):
            points.append(ScatteringResult.failed())
            failures.append(f"eigenvalue {k}: Newton did not converge")
            continue
        try:
            a, ap = scatter(env, lam)
            b1, b2 = forward_backward_b(env, lam)
        except NumericalError as exc:
            points.append(ScatteringResult.failed())
            failures.append(f"eigenvalue {k}: {exc}")
            continue
        points.append(ScatteringResult(lam, a, ap, b1, b2, abs(a)))
    return SpectrumEstimate(points, distance, failures)
