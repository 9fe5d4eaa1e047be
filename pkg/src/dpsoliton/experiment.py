"""Monte Carlo orchestration, statistics and CSV reporting.

Seeding: realization ``i`` uses ``SeedSequence(master_seed, spawn_key=(i,))``,
i.e. the i-th child of the master sequence.  Its two children seed the
symbol generator and the ASE generator.  Results depend only on the master
seed and the index, never on how realizations are scheduled.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .channel import FiberParams, LinkConfig, guard_snr, propagate
from .darboux import SolitonSpec, center_spec, synthesize
from .modem import (DIFFERENTIAL, MODES, EigenTrace, decode_common, decode_differential,
                    encode_frame, ideal_backrotation, random_frame, trace_backrotation, wrap)
from .nft import analyze
from .sigkit import (NORMALIZED, DualPolEnvelope, NormalizationScales, crop, derive_time_scale,
                     embed, frame_grid)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ESTIMATORS = ("phi_c", "phi_d", "arg_b1", "arg_b2", "phi_c_trace")
# which transmitted phase each estimator is compared against
_TX_OF = {"phi_c": 0, "phi_d": 1, "arg_b1": 0, "arg_b2": 2, "phi_c_trace": 0}


class ConfigError(ValueError):
    pass


def _lam(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"eigenvalue {v!r} must be [real, imag]")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a run.  Distances in km, times in ps, bandwidths in GHz."""

    fiber: FiberParams = field(default_factory=FiberParams)
    length_km: float = 4350.0
    step_km: float = 0.1
    filter_bandwidth_ghz: float | None = 50.0
    filter_spacing_km: float = 50.0
    filter_order: int = 4
    noise_per_polarization: bool = True
    noiseless: bool = False

    n_samples: int = 8192
    frame_ps: float = 500.0
    guard: int = 4

    eigenvalues: tuple = (0.5j, 1.0j)
    magnitudes: tuple = ((1.0, 1.0), (1.0, 1.0))
    launch_power_dbm: float = -0.75
    center_pulse: bool = True

    mode: str = DIFFERENTIAL
    n_realizations: int = 200
    master_seed: int = 0
    probe_spacing_km: float = 435.0
    trace_spacing_km: float = 87.0
    snr_bandwidth_ghz: float = 50.0
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", tuple(_lam(l) for l in self.eigenvalues))
        object.__setattr__(self, "magnitudes", tuple(tuple(float(x) for x in m) for m in self.magnitudes))
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if len(self.magnitudes) != len(self.eigenvalues) or any(len(m) != 2 for m in self.magnitudes):
            raise ConfigError("need one (|b1|, |b2|) pair per eigenvalue")
        if self.guard < 1 or self.n_samples % self.guard:
            raise ConfigError("guard must be a positive divisor of n_samples")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in an unsigned 64-bit integer")
        for name in ("probe_spacing_km", "trace_spacing_km"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        try:
            self.design()
            self.link()
            self.frame_grid()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # --- derived objects -------------------------------------------------
    def design(self) -> SolitonSpec:
        """Design spectrum with zero phases."""
        return SolitonSpec(tuple((l, m1, m2) for l, (m1, m2) in zip(self.eigenvalues, self.magnitudes)))

    def frame_grid(self):
        """Physical frame grid (the receiver window)."""
        return frame_grid(self.n_samples // self.guard, self.frame_ps)

    def sim_grid(self):
        return self.frame_grid().widened(self.guard)

    def scales(self) -> NormalizationScales:
        return derive_time_scale(self.design(), self.launch_power_dbm, self.frame_ps, self.fiber)

    def _on_grid(self, spacing):
        n = int(math.floor(self.length_km / spacing + 1e-9))
        pts = {round(i * spacing, 9) for i in range(n + 1)}
        pts.add(round(self.length_km, 9))
        return tuple(sorted(pts))

    def probe_distances(self) -> tuple:
        return self._on_grid(self.probe_spacing_km)

    def trace_distances(self) -> tuple:
        return tuple(sorted(set(self._on_grid(self.trace_spacing_km)) | set(self.probe_distances())))

    def link(self, noise_seed: int = 0) -> LinkConfig:
        link = LinkConfig(fiber=self.fiber, length=self.length_km, step=self.step_km,
                          filter_bandwidth=self.filter_bandwidth_ghz,
                          filter_spacing=self.filter_spacing_km, filter_order=self.filter_order,
                          probe_distances=self.trace_distances(), noise_seed=noise_seed,
                          noise_per_polarization=self.noise_per_polarization)
        return link.noiseless() if self.noiseless else link

    # --- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "fiber": asdict(self.fiber),
            "link": {"length_km": self.length_km, "step_km": self.step_km,
                     "filter_bandwidth_ghz": self.filter_bandwidth_ghz,
                     "filter_spacing_km": self.filter_spacing_km, "filter_order": self.filter_order,
                     "noise_per_polarization": self.noise_per_polarization,
                     "noiseless": self.noiseless},
            "grid": {"n_samples": self.n_samples, "frame_ps": self.frame_ps, "guard": self.guard},
            "design": {"eigenvalues": [[l.real, l.imag] for l in self.eigenvalues],
                       "magnitudes": [list(m) for m in self.magnitudes],
                       "launch_power_dbm": self.launch_power_dbm,
                       "center_pulse": self.center_pulse},
            "run": {"mode": self.mode, "n_realizations": self.n_realizations,
                    "master_seed": self.master_seed, "probe_spacing_km": self.probe_spacing_km,
                    "trace_spacing_km": self.trace_spacing_km,
                    "snr_bandwidth_ghz": self.snr_bandwidth_ghz, "output_dir": self.output_dir},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        kwargs = {}
        try:
            fiber = doc.pop("fiber", {})
            if fiber:
                kwargs["fiber"] = FiberParams(**fiber)
            names = {f.name for f in fields(cls)}
            for table in ("link", "grid", "design", "run"):
                for key, value in doc.pop(table, {}).items():
                    if key not in names:
                        raise ConfigError(f"unknown key {table}.{key}")
                    kwargs[key] = value
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if doc:
            raise ConfigError(f"unknown tables: {sorted(doc)}")
        if kwargs.get("filter_bandwidth_ghz", 1) in (0, False):
            kwargs["filter_bandwidth_ghz"] = None
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def realization_seeds(master_seed: int, index: int) -> tuple:
    """(symbol generator, 64-bit noise seed) for realization ``index``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    sym, noise = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(sym)), int(noise.generate_state(1, np.uint64)[0])


def transmitted_spec(config: ExperimentConfig, frame) -> SolitonSpec:
    spec = encode_frame(frame, config.magnitudes, config.eigenvalues)
    if config.center_pulse:
        spec = center_spec(spec, config.frame_grid().scaled(1.0 / config.scales().T0))
    return spec


def tx_phases(spec: SolitonSpec) -> np.ndarray:
    """(K, 3) array of arg b1, arg(conj(b1) b2), arg b2 as actually launched."""
    return np.array([[np.angle(b1), np.angle(np.conj(b1) * b2), np.angle(b2)]
                     for _, b1, b2 in spec.entries])


@dataclass
class RealizationResult:
    index: int
    tx: np.ndarray          # (K, 3)
    est: np.ndarray         # (n_probes, K, n_estimators) estimated phases
    lam: np.ndarray         # (n_trace, K) detected eigenvalues
    failed: bool
    signal_power: float     # in-band, W, at the link end
    noise_power: float
    failures: list


def run_realization(config: ExperimentConfig, index: int) -> RealizationResult:
    """One frame end to end: draw, encode, synthesize, propagate, analyze, decode."""
    rng, noise_seed = realization_seeds(config.master_seed, index)
    scales = config.scales()
    design = config.design()
    frame = random_frame(rng, len(design), config.mode)
    spec = transmitted_spec(config, frame)
    fgrid = config.frame_grid()
    env = synthesize(spec, fgrid.scaled(1.0 / scales.T0)).to_physical(scales)
    # the normalized-to-physical round trip may perturb dt in the last bit
    env = DualPolEnvelope(fgrid, env.q1, env.q2, env.unit_system)
    window = embed(env, config.sim_grid())
    link = config.link(noise_seed)
    snaps = propagate(window, link, scales)

    probes = config.probe_distances()
    K, E = len(design), len(ESTIMATORS)
    est = np.full((len(probes), K, E), np.nan)
    lam = np.full((len(snaps), K), np.nan + 0j)
    failed, failures = False, []
    zs = np.array([scales.km_to_normalized(z) for z, _ in snaps])
    pi = 0
    for ti, (z_km, snap) in enumerate(snaps):
        rx = crop(snap, fgrid).to_normalized(scales)
        L = zs[ti]
        res = analyze(rx, design, L)
        if not res.ok:
            failed = True
            failures.extend(f"{z_km:g} km: {m}" for m in res.failures)
        for k, p in enumerate(res.points):
            lam[ti, k] = p.lam
        if pi < len(probes) and abs(z_km - probes[pi]) < 1e-9:
            pc = decode_common(res, design, L, which=1)
            pb2 = decode_common(res, design, L, which=2)
            pd = decode_differential(res)
            for k, p in enumerate(res.points):
                if not p.ok:
                    continue
                path = lam[: ti + 1, k]
                trace_ok = bool(np.all(np.isfinite(path)))
                est[pi, k] = (
                    pc[k], pd[k],
                    float(np.angle(ideal_backrotation(p.b1, design.eigenvalues[k], L))),
                    pb2[k],
                    float(np.angle(trace_backrotation(p.b1, EigenTrace(zs[: ti + 1], path))))
                    if trace_ok else np.nan,
                )
            pi += 1
    ps = pn = math.nan
    if not config.noiseless:
        ps, pn = guard_snr(snaps[-1][1], fgrid, config.snr_bandwidth_ghz)
    return RealizationResult(index, tx_phases(spec), est, lam, failed, ps, pn, failures)


@dataclass
class RunStats:
    """Aggregated Monte Carlo results; arrays are indexed by realization order."""

    probe_km: np.ndarray        # (P,)
    trace_km: np.ndarray        # (T,)
    tx: np.ndarray              # (R, K, 3)
    est: np.ndarray             # (R, P, K, E)
    lam: np.ndarray             # (R, T, K)
    failed: np.ndarray          # (R,) bool
    signal_power: np.ndarray    # (R,)
    noise_power: np.ndarray     # (R,)
    estimators: tuple = ESTIMATORS

    @property
    def n_realizations(self) -> int:
        return int(self.tx.shape[0])

    @property
    def exclusion_rate(self) -> float:
        return float(self.failed.mean()) if self.n_realizations else math.nan

    def errors(self) -> np.ndarray:
        """Wrapped phase errors (R, P, K, E) against the transmitted phases."""
        tx = np.stack([self.tx[:, :, _TX_OF[e]] for e in self.estimators], axis=-1)
        return wrap(self.est - tx[:, None, :, :])

    def included(self) -> np.ndarray:
        return ~self.failed

    def circular_std(self) -> np.ndarray:
        """sqrt(mean(wrapped error^2)) per (probe, eigenvalue, estimator)."""
        err = self.errors()[self.included()]
        if err.shape[0] == 0:
            return np.full(self.est.shape[1:], np.nan)
        return np.sqrt(np.mean(err**2, axis=0))

    def symbol_errors(self) -> np.ndarray:
        """Count of errors beyond half the QPSK decision distance (pi/4)."""
        return (np.abs(self.errors()[self.included()]) > math.pi / 4).sum(axis=0)

    def snr_db(self) -> float:
        """Mean in-band SNR at the link end over included realizations."""
        ok = self.included() & np.isfinite(self.noise_power)
        if not ok.any():
            return math.nan
        return 10 * math.log10(self.signal_power[ok].mean() / self.noise_power[ok].mean())

    def std_of(self, estimator: str) -> np.ndarray:
        return self.circular_std()[:, :, self.estimators.index(estimator)]

    def save(self, path) -> None:
        np.savez(path, probe_km=self.probe_km, trace_km=self.trace_km, tx=self.tx, est=self.est,
                 lam=self.lam, failed=self.failed, signal_power=self.signal_power,
                 noise_power=self.noise_power, estimators=np.array(self.estimators))

    @classmethod
    def load(cls, path) -> "RunStats":
        with np.load(path) as d:
            return cls(d["probe_km"], d["trace_km"], d["tx"], d["est"], d["lam"], d["failed"],
                       d["signal_power"], d["noise_power"], tuple(str(e) for e in d["estimators"]))

    @classmethod
    def collect(cls, config: ExperimentConfig, results: list) -> "RunStats":
        results = sorted(results, key=lambda r: r.index)
        return cls(
            probe_km=np.array(config.probe_distances()),
            trace_km=np.array(config.trace_distances()),
            tx=np.stack([r.tx for r in results]),
            est=np.stack([r.est for r in results]),
            lam=np.stack([r.lam for r in results]),
            failed=np.array([r.failed for r in results]),
            signal_power=np.array([r.signal_power for r in results]),
            noise_power=np.array([r.noise_power for r in results]),
        )


def _task(args):
    config, index = args
    return run_realization(config, index)


def run_montecarlo(config: ExperimentConfig, threads: int = 1, progress=None) -> RunStats:
    """Run ``config.n_realizations`` realizations on ``threads`` worker processes."""
    jobs = [(config, i) for i in range(config.n_realizations)]
    results = []
    if threads <= 1:
        for job in jobs:
            results.append(_task(job))
            if progress:
                progress(len(results), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for r in pool.map(_task, jobs):
                results.append(r)
                if progress:
                    progress(len(results), len(jobs))
    for r in results:
        if r.failed:
            log.warning("realization %d excluded: %s", r.index, "; ".join(r.failures))
    return RunStats.collect(config, results)


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def report(stats: RunStats, outdir, config: ExperimentConfig | None = None) -> dict:
    """Write constellation, std-dev, symbol-error and trace CSVs plus a manifest."""
    if stats is None or stats.n_realizations == 0:
        raise ValueError("no realizations to report")
    os.makedirs(outdir, exist_ok=True)
    paths = {k: os.path.join(outdir, f"{k}.csv") for k in ("constellation", "std", "symbol_errors", "traces")}
    keep = np.flatnonzero(stats.included())
    std = stats.circular_std()
    nerr = stats.symbol_errors()

    with open(paths["constellation"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance_km", "eigenvalue_index", "estimator", "re", "im", "tx_phase"])
        for p, z in enumerate(stats.probe_km):
            for k in range(stats.tx.shape[1]):
                for e, name in enumerate(stats.estimators):
                    for r in keep:
                        phi = stats.est[r, p, k, e]
                        w.writerow([_fmt(z), k + 1, name, _fmt(math.cos(phi)), _fmt(math.sin(phi)),
                                    _fmt(stats.tx[r, k, _TX_OF[name]])])

    with open(paths["std"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance_km", "eigenvalue_index", "estimator", "circular_std_rad", "n_included"])
        for p, z in enumerate(stats.probe_km):
            for k in range(stats.tx.shape[1]):
                for e, name in enumerate(stats.estimators):
                    w.writerow([_fmt(z), k + 1, name, _fmt(std[p, k, e]), keep.size])

    with open(paths["symbol_errors"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance_km", "eigenvalue_index", "estimator", "symbol_errors", "n_included"])
        for p, z in enumerate(stats.probe_km):
            for k in range(stats.tx.shape[1]):
                for e, name in enumerate(stats.estimators):
                    w.writerow([_fmt(z), k + 1, name, int(nerr[p, k, e]), keep.size])

    with open(paths["traces"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "distance_km", "eigenvalue_index", "re", "im"])
        for r in range(stats.n_realizations):
            for t, z in enumerate(stats.trace_km):
                for k in range(stats.lam.shape[2]):
                    l = stats.lam[r, t, k]
                    w.writerow([r, _fmt(z), k + 1, _fmt(l.real), _fmt(l.imag)])

    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "n_realizations": stats.n_realizations,
        "n_excluded": int(stats.failed.sum()),
        "exclusion_rate": stats.exclusion_rate,
        "snr_db": None if math.isnan(stats.snr_db()) else stats.snr_db(),
        "seeding": "SeedSequence(master_seed, spawn_key=(i,)) -> (symbols, noise)",
        "files": {k: os.path.basename(v) for k, v in paths.items()},
    }
    if config is not None:
        manifest["config"] = config.to_dict()
        manifest["scales"] = asdict(config.scales())
        manifest["realization_noise_seeds"] = [
            realization_seeds(config.master_seed, i)[1] for i in range(stats.n_realizations)]
    paths["manifest"] = os.path.join(outdir, "manifest.json")
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
