"""Acceptance criteria, each at its stated tolerance.

The Monte Carlo criteria (4, 5, 6) share one session-scoped run of 200
realizations at the default link settings, which takes over an hour on a single
core.  Setting DPSOLITON_ACCEPT_STATS to a stats.npz written by ``dpsoliton
sweep`` with the same defaults reuses that run instead.
"""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from dpsoliton.channel import propagate
from dpsoliton.darboux import synthesize
from dpsoliton.experiment import (ExperimentConfig, RunStats, realization_seeds, report, run_montecarlo,
                                  transmitted_spec)
from dpsoliton.modem import QPSK, SymbolFrame, random_frame
from dpsoliton.nft import find_eigenvalues, scatter
from dpsoliton.sigkit import (NORMALIZED, DualPolEnvelope, average_power, energy, ensemble_papr,
                              make_grid)

MC_REALIZATIONS = 200
MC_SEED = 2024


@pytest.fixture(scope="session")
def mc_stats():
    cfg = ExperimentConfig(n_realizations=MC_REALIZATIONS, master_seed=MC_SEED)
    cached = os.environ.get("DPSOLITON_ACCEPT_STATS")
    if cached:
        st = RunStats.load(cached)
        assert st.n_realizations >= MC_REALIZATIONS
        np.testing.assert_array_equal(st.probe_km, cfg.probe_distances())
        return st
    return run_montecarlo(cfg)


def _launch(cfg, spec):
    scales = cfg.scales()
    fg = cfg.frame_grid()
    env = synthesize(spec, fg.scaled(1 / scales.T0)).to_physical(scales)
    return DualPolEnvelope(fg, env.q1, env.q2, env.unit_system)


def test_criterion_1_noiseless_identity(verdict):
    cfg = ExperimentConfig(noiseless=True, n_realizations=32, master_seed=7)
    t = time.perf_counter()
    st = run_montecarlo(cfg)
    per_frame = (time.perf_counter() - t) / cfg.n_realizations
    end = -1
    err = np.abs(st.errors()[:, end, :, [st.estimators.index("phi_c"), st.estimators.index("phi_d")]])
    phase_ok = not st.failed.any() and bool(np.all(err <= 1e-2))
    design = np.array(cfg.eigenvalues)
    lam_err = np.abs(st.lam - design).max()
    lam_ok = bool(lam_err <= 1e-4)
    ok = verdict(1, phase_ok and lam_ok and per_frame < 60,
                 f"max phase error {np.max(err):.2e} rad (<=1e-2), "
                 f"max eigenvalue error {lam_err:.2e} (<=1e-4), {per_frame:.1f} s/frame (<60)")
    assert phase_ok, "phase recovery"
    assert per_frame < 60
    assert lam_ok, f"eigenvalue error {lam_err:.2e} exceeds 1e-4"
    assert ok


def test_criterion_2_sech_oracle(verdict):
    g = make_grid(65536, 40 / 65536)
    s = 2 / np.cosh(g.t)
    env = DualPolEnvelope(g, s, np.zeros_like(s), NORMALIZED)
    roots = find_eigenvalues(env, [0.45j, 1.45j])
    dev = max(abs(roots[0] - 0.5j), abs(roots[1] - 1.5j))
    ok = verdict(2, dev <= 1e-6, f"eigenvalue deviation {dev:.2e} (<=1e-6)")
    assert ok


def test_criterion_3_power_budget(verdict):
    cfg = ExperimentConfig()
    envs, powers = [], []
    for c1 in QPSK:
        for c2 in QPSK:
            for d1 in QPSK:
                for d2 in QPSK:
                    env = _launch(cfg, transmitted_spec(cfg, SymbolFrame((c1, c2), (d1, d2))))
                    envs.append(env)
                    powers.append(average_power(env, cfg.frame_ps))
    p_ok = all(abs(p + 0.75) <= 0.1 for p in powers)
    par = ensemble_papr(envs, cfg.frame_ps)
    ok = verdict(3, p_ok and abs(par - 12) <= 1.5,
                 f"launch power {min(powers):.3f}..{max(powers):.3f} dBm (-0.75+-0.1), "
                 f"PAPR {par:.2f} dB (12+-1.5) over {len(envs)} frames")
    assert ok


def test_criterion_4_received_snr(mc_stats, verdict):
    snr = mc_stats.snr_db()
    n = int((mc_stats.included() & np.isfinite(mc_stats.noise_power)).sum())
    ok = verdict(4, n >= 50 and abs(snr - 27) <= 1.5, f"SNR {snr:.2f} dB (27+-1.5) over {n} realizations")
    assert ok


def test_criterion_5_std_ordering(mc_stats, verdict):
    idx = mc_stats.probe_km >= 500
    c = mc_stats.std_of("phi_c")[idx]
    d = mc_stats.std_of("phi_d")[idx]
    b2 = mc_stats.std_of("arg_b2")[idx]
    ratio = d / c
    rel = np.abs(b2 / c - 1)
    n = mc_stats.n_realizations - int(mc_stats.failed.sum())
    ok = verdict(5, n >= 200 and bool(np.all(ratio < 0.5)) and bool(np.all(rel <= 0.3)),
                 f"max std(phi_d)/std(phi_c) {ratio.max():.3f} (<0.5), "
                 f"max |std(arg b2)/std(phi_c)-1| {rel.max():.3f} (<=0.3), {n} realizations")
    if not ok:
        for k in range(c.shape[1]):
            print(f"lambda{k + 1}: d/c", np.round(ratio[:, k], 3), "b2/c-1", np.round(rel[:, k], 3))
    assert ok


def test_criterion_6_decision_regions(mc_stats, verdict):
    end = int(np.argmax(mc_stats.probe_km))
    assert mc_stats.probe_km[end] == 4350.0
    errs = mc_stats.symbol_errors()[end]
    d_err = int(errs[:, mc_stats.estimators.index("phi_d")].sum())
    c = mc_stats.std_of("phi_c")[end]
    d = mc_stats.std_of("phi_d")[end]
    n = mc_stats.n_realizations - int(mc_stats.failed.sum())
    ok = verdict(6, n >= 200 and d_err == 0 and bool(np.all(d < 0.5 * c)),
                 f"phi_d symbol errors {d_err} (0), std(phi_d)/std(phi_c) "
                 f"{', '.join(f'{r:.3f}' for r in d / c)} (<0.5) at 4350 km, {n} realizations")
    assert ok


def test_criterion_7_conservation(verdict):
    cfg = ExperimentConfig(noiseless=True)
    scales = cfg.scales()
    rng, _ = realization_seeds(3, 0)
    spec = transmitted_spec(cfg, random_frame(rng, 2, "differential"))
    # the untruncated soliton on the full window, so it carries no radiation
    start = synthesize(spec, cfg.sim_grid().scaled(1 / scales.T0)).to_physical(scales)
    start = DualPolEnvelope(cfg.sim_grid(), start.q1, start.q2, start.unit_system)
    link = replace(cfg.link(0), probe_distances=(0.0, 1000.0, 4350.0))
    out = propagate(start, link, scales)
    e = [energy(s) for _, s in out]
    drift = max(abs(e[1] / e[0] - 1) / 1.0, abs(e[2] / e[0] - 1) / 4.35)
    end = out[-1][1].to_normalized(scales)
    a_dev = max(abs(abs(scatter(end, xi)[0]) - 1) for xi in np.linspace(-4, 4, 33))
    fine = propagate(start, replace(link, step=link.step / 2, probe_distances=(4350.0,)), scales)[0][1]
    rms = math.sqrt(np.mean(np.abs(out[-1][1].fields - fine.fields) ** 2))
    ok = verdict(7, drift <= 1e-6 and a_dev <= 1e-4 and rms <= 1e-5,
                 f"energy drift {drift:.2e}/1000 km (<=1e-6), max ||a(xi)|-1| {a_dev:.2e} (<=1e-4), "
                 f"step-halving RMS {rms:.2e} sqrt(W) (<=1e-5)")
    assert ok


def test_criterion_8_determinism(tmp_path, verdict):
    cfg = ExperimentConfig(n_realizations=3, master_seed=99, length_km=870.0)
    outs = {}
    for threads in (1, 3):
        st = run_montecarlo(cfg, threads=threads)
        paths = report(st, tmp_path / f"t{threads}", cfg)
        outs[threads] = {k: open(p, "rb").read() for k, p in paths.items()}
    same = outs[1] == outs[3]
    ok = verdict(8, same, f"{len(outs[1])} output files byte-identical for 1 and 3 workers: {same}")
    assert ok
