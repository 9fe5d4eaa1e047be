import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpsoliton.channel import FiberParams
from dpsoliton.darboux import SolitonSpec, fundamental_soliton, synthesize
from dpsoliton.sigkit import (NORMALIZED, PHYSICAL, DualPolEnvelope, NormalizationScales, average_power,
                              crop, derive_time_scale, embed, energy, ensemble_papr, frame_grid,
                              make_grid, papr)

from oracles import time_scale_by_hand, trapezoid

FIBER = FiberParams()
DESIGN = SolitonSpec(((0.5j, 1, 1), (1j, 1, 1)))


class TestGrid:
    def test_default_frame(self):
        g = make_grid(8192, 500 / 8192, -250.0)
        assert g.span == pytest.approx(500.0)
        assert g.center == pytest.approx(0.0)
        assert g == frame_grid()

    def test_minimal(self):
        assert make_grid(2, 1.0, 0.0).span == 2.0

    @pytest.mark.parametrize("n,dt", [(8192, 0.0), (8192, -1.0), (1000, 1.0), (0, 1.0)])
    def test_rejects(self, n, dt):
        with pytest.raises(ValueError):
            make_grid(n, dt, 0.0)

    def test_widened_keeps_step_and_center(self):
        g = frame_grid(2048)
        w = g.widened(4)
        assert w.dt == g.dt and w.n_samples == 8192
        assert w.center == pytest.approx(g.center)

    def test_freqs_are_fft_order(self):
        g = make_grid(8, 0.5)
        np.testing.assert_allclose(g.freqs, np.fft.fftfreq(8, 0.5))


class TestScales:
    @given(st.floats(1.0, 200.0), st.floats(-30.0, -0.1), st.floats(0.1, 10.0))
    def test_identities(self, T0, beta2, gamma):
        s = NormalizationScales.from_time_scale(T0, beta2, gamma)
        assert s.P0 == pytest.approx(abs(beta2) / (gamma * T0**2), rel=1e-12)
        assert s.L_D == pytest.approx(T0**2 / abs(beta2), rel=1e-12)

    def test_paper_time_scale(self):
        s = derive_time_scale(DESIGN, -0.75, 500.0, FIBER)
        expect = time_scale_by_hand([0.5, 1.0], -0.75, 500.0, -5.75, 1.6)
        assert s.T0 == pytest.approx(expect, rel=1e-12)
        assert s.T0 == pytest.approx(51.3, abs=0.05)

    def test_doubling_power_halves_T0(self):
        a = derive_time_scale(DESIGN, 0.0, 500.0, FIBER).T0
        b = derive_time_scale(DESIGN, 10 * math.log10(2), 500.0, FIBER).T0
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_single_eigenvalue(self):
        one = SolitonSpec(((0.5j, 1, 0),))
        t_one = derive_time_scale(one, -0.75, 500.0, FIBER).T0
        t_two = derive_time_scale(DESIGN, -0.75, 500.0, FIBER).T0
        assert t_one == pytest.approx(t_two * 2 / 6, rel=1e-12)
        assert t_one == pytest.approx(17.1, abs=0.05)

    def test_rejects_bad_power(self):
        with pytest.raises(ValueError):
            derive_time_scale(DESIGN, -math.inf, 500.0, FIBER)

    def test_distance_unit(self):
        s = derive_time_scale(DESIGN, -0.75, 500.0, FIBER)
        assert s.km_to_normalized(4350.0) == pytest.approx(4350.0 / (2 * s.L_D))
        assert s.normalized_to_km(s.km_to_normalized(1234.5)) == pytest.approx(1234.5)


def _random_env(rng, n=256, unit=PHYSICAL):
    g = make_grid(n, 0.37)
    return DualPolEnvelope(g, rng.normal(size=n) + 1j * rng.normal(size=n),
                           rng.normal(size=n) + 1j * rng.normal(size=n), unit)


class TestEnvelope:
    def test_shape_checked(self):
        with pytest.raises(ValueError):
            DualPolEnvelope(make_grid(8, 1.0), np.zeros(4), np.zeros(8))

    def test_read_only(self, rng):
        env = _random_env(rng)
        with pytest.raises(ValueError):
            env.q1[0] = 1.0

    @given(st.integers(0, 2**32 - 1), st.floats(5.0, 100.0))
    def test_unit_round_trip(self, seed, T0):
        env = _random_env(np.random.default_rng(seed))
        s = NormalizationScales.from_time_scale(T0, -5.75, 1.6)
        back = env.to_normalized(s).to_physical(s)
        np.testing.assert_allclose(back.q1, env.q1, rtol=1e-12)
        np.testing.assert_allclose(back.q2, env.q2, rtol=1e-12)
        assert back.grid.dt == pytest.approx(env.grid.dt, rel=1e-12)
        assert energy(env.to_normalized(s)) * s.energy_unit == pytest.approx(energy(env), rel=1e-10)

    @given(st.integers(0, 2**32 - 1))
    def test_swap_symmetry(self, seed):
        env = _random_env(np.random.default_rng(seed))
        assert energy(env.swapped()) == energy(env)

    def test_embed_crop_inverse(self, rng):
        env = _random_env(rng, 64)
        wide = embed(env, env.grid.widened(4))
        assert wide.power.sum() == pytest.approx(env.power.sum(), rel=1e-14)
        back = crop(wide, env.grid)
        np.testing.assert_array_equal(back.q1, env.q1)


class TestMetrics:
    def test_zero_energy(self):
        assert energy(DualPolEnvelope.zeros(make_grid(16, 1.0))) == 0.0

    def test_fundamental_soliton_energy(self):
        g = make_grid(16384, 60 / 16384)
        env = fundamental_soliton(g, 0.5j, 1, 0)
        assert energy(env) == pytest.approx(2.0, abs=1e-6)
        assert energy(env) == pytest.approx(trapezoid(np.abs(env.q1) ** 2, g.dt))

    def test_two_soliton_energy(self):
        g = make_grid(16384, 60 / 16384)
        assert energy(synthesize(DESIGN, g)) == pytest.approx(6.0, abs=1e-3)

    def test_constant_1mw(self):
        g = make_grid(64, 500 / 64)
        env = DualPolEnvelope(g, np.full(64, math.sqrt(1e-3)), np.zeros(64), PHYSICAL)
        # trapezoid drops half a sample at each end
        assert average_power(env, g.span - g.dt) == pytest.approx(0.0, abs=1e-12)
        assert papr(env, g.span - g.dt) == pytest.approx(0.0, abs=1e-12)

    def test_zero_field(self):
        env = DualPolEnvelope.zeros(make_grid(64, 1.0))
        assert average_power(env) == -math.inf
        with pytest.raises(ValueError):
            papr(env)

    def test_normalized_rejected(self, rng):
        with pytest.raises(ValueError):
            average_power(_random_env(rng, unit=NORMALIZED))

    def test_papr_single_soliton(self):
        s = derive_time_scale(DESIGN, -0.75, 500.0, FIBER)
        g = frame_grid(8192).scaled(1 / s.T0)
        env = fundamental_soliton(g, 0.5j, 1, 0)
        # peak (2 sigma)^2 = 1, mean = energy / interval
        t = g.t
        e = trapezoid(1 / np.cosh(t) ** 2, g.dt)
        expect = 10 * math.log10(1.0 / (e / g.span))
        assert papr(env) == pytest.approx(expect, abs=1e-9)

    def test_launch_power_and_ensemble_papr(self):
        from itertools import product
        from dpsoliton.darboux import center_spec
        from dpsoliton.modem import QPSK
        s = derive_time_scale(DESIGN, -0.75, 500.0, FIBER)
        fg = frame_grid(2048)
        ng = fg.scaled(1 / s.T0)
        frames = []
        for c1, d1, c2, d2 in list(product(QPSK, repeat=4))[::17]:
            spec = SolitonSpec(((0.5j, np.exp(1j * c1), np.exp(1j * (c1 + d1))),
                                (1j, np.exp(1j * c2), np.exp(1j * (c2 + d2)))))
            env = synthesize(center_spec(spec, ng), ng).to_physical(s)
            frames.append(env)
            assert average_power(env) == pytest.approx(-0.75, abs=0.1)
        assert ensemble_papr(frames) == pytest.approx(12.0, abs=1.5)
