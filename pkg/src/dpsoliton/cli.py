"""Command-line entry point: generate, transmit, analyze, sweep, report."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .channel import StepSizeError, propagate, read_waveform, write_waveform
from .darboux import SingularDressingError, TruncationError, synthesize
from .experiment import (ConfigError, ExperimentConfig, RunStats, report, run_montecarlo,
                         realization_seeds, transmitted_spec, tx_phases)
from .modem import decode_common, decode_differential, random_frame, wrap
from .nft import NumericalError, analyze
from .sigkit import PHYSICAL, DualPolEnvelope, average_power, crop, embed, papr

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
_MODES = {"differential": "differential", "twin-wave": "twin_wave", "pilot": "pilot"}

log = logging.getLogger("dpsoliton")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
    over = {
        "master_seed": args.seed,
        "n_realizations": args.realizations,
        "length_km": args.length_km,
        "mode": _MODES[args.mode] if args.mode else None,
        "output_dir": args.out,
    }
    try:
        return cfg.with_overrides(**over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _sidecar(path) -> dict:
    side = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(side):
        return {}
    with open(side) as fh:
        return json.load(fh)


def _write(path, env, meta):
    write_waveform(path, env)
    with open(os.path.splitext(path)[0] + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _spec_meta(spec):
    return [{"lam": [l.real, l.imag], "b1": [b1.real, b1.imag], "b2": [b2.real, b2.imag]}
            for l, b1, b2 in spec.entries]


def cmd_generate(args, cfg):
    rng, _ = realization_seeds(cfg.master_seed, args.index)
    frame = random_frame(rng, len(cfg.eigenvalues), cfg.mode)
    spec = transmitted_spec(cfg, frame)
    scales = cfg.scales()
    fgrid = cfg.frame_grid()
    env = synthesize(spec, fgrid.scaled(1.0 / scales.T0)).to_physical(scales)
    env = DualPolEnvelope(fgrid, env.q1, env.q2, PHYSICAL)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, f"frame_{args.index:06d}.wfm")
    tx = tx_phases(spec)
    _write(path, env, {
        "kind": "launch", "distance_km": 0.0, "realization": args.index,
        "master_seed": cfg.master_seed, "mode": cfg.mode, "spec": _spec_meta(spec),
        "tx_phi_c": tx[:, 0].tolist(), "tx_phi_d": tx[:, 1].tolist(),
        "T0_ps": scales.T0, "P0_W": scales.P0,
        "average_power_dbm": average_power(env, cfg.frame_ps), "papr_db": papr(env, cfg.frame_ps),
    })
    print(path)


def cmd_transmit(args, cfg):
    env = read_waveform(args.waveform)
    if env.unit_system != PHYSICAL:
        raise ConfigError("transmit expects a physical-unit waveform")
    meta = _sidecar(args.waveform)
    scales = cfg.scales()
    fgrid = cfg.frame_grid()
    if env.grid.n_samples != fgrid.n_samples:
        raise ConfigError(f"waveform has {env.grid.n_samples} samples, config frame has {fgrid.n_samples}")
    env = DualPolEnvelope(fgrid, env.q1, env.q2, PHYSICAL)
    _, noise_seed = realization_seeds(cfg.master_seed, meta.get("realization", 0))
    link = cfg.link(noise_seed)
    snaps = propagate(embed(env, cfg.sim_grid()), link, scales)
    os.makedirs(cfg.output_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.waveform))[0]
    probes = set(cfg.probe_distances())
    for z, snap in snaps:
        if z not in probes:
            continue
        path = os.path.join(cfg.output_dir, f"{stem}_z{z:07.1f}km.wfm")
        _write(path, crop(snap, fgrid), dict(meta, kind="received", distance_km=z, noise_seed=noise_seed))
        print(path)


def cmd_analyze(args, cfg):
    env = read_waveform(args.waveform)
    meta = _sidecar(args.waveform)
    scales = cfg.scales()
    z_km = args.distance_km if args.distance_km is not None else meta.get("distance_km")
    if z_km is None:
        raise ConfigError("distance unknown: pass --distance-km or keep the sidecar JSON")
    rx = env.to_normalized(scales) if env.unit_system == PHYSICAL else env
    design = cfg.design()
    L = scales.km_to_normalized(z_km)
    est = analyze(rx, design, L)
    pc = decode_common(est, design, L)
    pd = decode_differential(est)
    out = {"distance_km": z_km, "failures": est.failures, "eigenvalues": []}
    for k, p in enumerate(est.points):
        row = {"lam": [p.lam.real, p.lam.imag], "b1": [p.b1.real, p.b1.imag],
               "b2": [p.b2.real, p.b2.imag], "phi_c": pc[k], "phi_d": pd[k]}
        if "tx_phi_c" in meta:
            row["error_phi_c"] = wrap(pc[k] - meta["tx_phi_c"][k]) if math.isfinite(pc[k]) else None
            row["error_phi_d"] = wrap(pd[k] - meta["tx_phi_d"][k]) if math.isfinite(pd[k]) else None
        out["eigenvalues"].append(row)
    text = json.dumps(out, indent=2, sort_keys=True, default=lambda v: None)
    print(text)
    if not est.ok:
        raise NumericalError("; ".join(est.failures))


def cmd_sweep(args, cfg):
    def progress(i, n):
        log.info("realization %d/%d", i, n)
    stats = run_montecarlo(cfg, threads=args.threads, progress=progress)
    os.makedirs(cfg.output_dir, exist_ok=True)
    stats.save(os.path.join(cfg.output_dir, "stats.npz"))
    for p in report(stats, cfg.output_dir, cfg).values():
        print(p)


def cmd_report(args, cfg):
    src = args.stats or os.path.join(cfg.output_dir, "stats.npz")
    try:
        stats = RunStats.load(src)
    except OSError as exc:
        raise ConfigError(f"cannot read {src}: {exc}") from exc
    for p in report(stats, cfg.output_dir, cfg if args.config else None).values():
        print(p)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--realizations", type=int)
    common.add_argument("--length-km", type=float)
    common.add_argument("--mode", choices=sorted(_MODES))
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dpsoliton", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="synthesize one launch frame")
    g.add_argument("--index", type=int, default=0, help="realization index for the symbol draw")
    g.set_defaults(func=cmd_generate)
    t = sub.add_parser("transmit", parents=[common], help="propagate a waveform, write probe snapshots")
    t.add_argument("waveform")
    t.set_defaults(func=cmd_transmit)
    a = sub.add_parser("analyze", parents=[common], help="NFT and decode one waveform")
    a.add_argument("waveform")
    a.add_argument("--distance-km", type=float)
    a.set_defaults(func=cmd_analyze)
    s = sub.add_parser("sweep", parents=[common], help="full Monte Carlo")
    s.set_defaults(func=cmd_sweep)
    r = sub.add_parser("report", parents=[common], help="stats file to CSV")
    r.add_argument("--stats", help="stats.npz written by sweep (default: <out>/stats.npz)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StepSizeError, TruncationError, SingularDressingError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK
