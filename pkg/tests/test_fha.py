import cmath
import math

import numpy as np
import pytest

from llcinv.errors import DomainError, InfeasibleError
from llcinv.fha import (
    LoadContext,
    ResonantTank,
    gain_fha,
    gain_with_phase_shift,
    impedance_angle,
    impedance_angle_closed_form,
    input_impedance,
    load_context,
    quality_factor,
    resonant_frequencies,
    solve_fs_for_gain,
    sweep_curves,
    zvs_margin,
)

TANK = ResonantTank(Lr=4e-6, Cr=3.3e-6, Lm=100e-6, N=10)
# Reference full-load context: per-module 3983.7 V RMS / 166.7 kW.
RAC_FULL = 0.7718242485138725


def circuit_gain(tank, Q, Fx):
    """Independent oracle: gain from raw complex arithmetic on the FHA circuit."""
    w = 2 * math.pi * Fx / (2 * math.pi * math.sqrt(tank.Cr * tank.Lr))
    rac = math.sqrt(tank.Lr / tank.Cr) / Q
    z_ser = 1j * w * tank.Lr + 1.0 / (1j * w * tank.Cr)
    z_par = (1j * w * tank.Lm * rac) / (rac + 1j * w * tank.Lm)
    return tank.N * abs(z_par / (z_ser + z_par))


class TestResonantFrequencies:
    def test_reference_tank_fr1(self):
        fr1, _ = resonant_frequencies(TANK)
        assert fr1 == pytest.approx(43.81e3, rel=1e-3)

    def test_reference_tank_fr2(self):
        _, fr2 = resonant_frequencies(TANK)
        assert fr2 == pytest.approx(8.591e3, rel=1e-3)

    def test_fr2_below_fr1(self):
        fr1, fr2 = resonant_frequencies(TANK)
        assert fr2 < fr1

    def test_large_lm_pushes_fr2_down(self):
        tank = ResonantTank(Lr=4e-6, Cr=3.3e-6, Lm=1.0, N=10)
        _, fr2 = resonant_frequencies(tank)
        assert fr2 < 100.0

    def test_nonpositive_component_rejected(self):
        with pytest.raises(DomainError):
            ResonantTank(Lr=-4e-6, Cr=3.3e-6, Lm=100e-6, N=10)
        with pytest.raises(DomainError):
            ResonantTank(Lr=4e-6, Cr=0.0, Lm=100e-6, N=10)


class TestGain:
    def test_unity_fx_returns_n(self):
        for q in (0.0, 0.5, 1.4267, 5.0):
            assert gain_fha(TANK, q, 1.0) == pytest.approx(10.0, rel=1e-14)

    def test_q_zero_reduces_to_rational_form(self):
        # N*Fx^2*(m-1)/(m*Fx^2 - 1) at N=10, m=26, Fx=1.2
        expected = 10 * 1.44 * 25 / (26 * 1.44 - 1)
        assert gain_fha(TANK, 0.0, 1.2) == pytest.approx(expected, rel=1e-12)

    def test_loaded_point_against_circuit_oracle(self):
        got = gain_fha(TANK, 1.4267, 1.2)
        assert got == pytest.approx(8.78, abs=5e-3)
        assert got == pytest.approx(circuit_gain(TANK, 1.4267, 1.2), rel=1e-9)

    def test_oracle_equivalence_grid(self):
        for fx in np.linspace(0.5, 2.0, 25):
            for q in np.linspace(0.1, 5.0, 8):
                assert gain_fha(TANK, q, fx) == pytest.approx(
                    circuit_gain(TANK, q, fx), rel=1e-9
                )

    def test_above_resonance_gain_below_n(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            fx = 1.0 + rng.uniform(1e-6, 2.0)
            q = rng.uniform(1e-3, 5.0)
            assert gain_fha(TANK, q, fx) < TANK.N

    def test_fx_zero_rejected(self):
        with pytest.raises(DomainError):
            gain_fha(TANK, 1.0, 0.0)


class TestPhaseShiftGain:
    def test_endpoints(self):
        assert gain_with_phase_shift(10.0, 0.0) == 10.0
        assert gain_with_phase_shift(10.0, math.pi) == pytest.approx(0.0, abs=1e-12)

    def test_midpoint(self):
        assert gain_with_phase_shift(10.0, math.pi / 2) == pytest.approx(
            10 * math.cos(math.pi / 4), rel=1e-12
        )

    def test_monotone_decreasing(self):
        phis = np.linspace(0, math.pi, 50)
        vals = [gain_with_phase_shift(10.0, p) for p in phis]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            gain_with_phase_shift(10.0, -0.1)
        with pytest.raises(DomainError):
            gain_with_phase_shift(10.0, math.pi + 0.1)


class TestInputImpedance:
    def test_series_branch_cancels_at_fr1(self):
        fr1 = TANK.fr1
        z = input_impedance(TANK, RAC_FULL, fr1)
        w = 2 * math.pi * fr1
        expected = (1j * w * TANK.Lm * RAC_FULL) / (RAC_FULL + 1j * w * TANK.Lm)
        assert z == pytest.approx(expected, rel=1e-12)

    def test_reference_angle_at_resonance(self):
        theta = impedance_angle(TANK, RAC_FULL, TANK.fr1)
        assert theta == pytest.approx(math.atan(RAC_FULL / (2 * math.pi * TANK.fr1 * TANK.Lm)), rel=1e-12)
        assert math.degrees(theta) == pytest.approx(1.6, abs=0.05)

    def test_open_circuit_limit_is_reactive(self):
        fs = 50e3
        z = input_impedance(TANK, 1e12, fs)
        w = 2 * math.pi * fs
        x_expected = w * TANK.Lr - 1 / (w * TANK.Cr) + w * TANK.Lm
        assert z.imag == pytest.approx(x_expected, rel=1e-6)
        assert abs(impedance_angle(TANK, 1e12, fs)) == pytest.approx(math.pi / 2, abs=1e-4)


class TestImpedanceAngleTrends:
    def test_angle_monotone_in_fs(self):
        fr1 = TANK.fr1
        for rac in (0.2, 0.77, 2.0, 7.7):
            fs_grid = np.linspace(fr1, 1.6 * fr1, 60)
            thetas = [impedance_angle(TANK, rac, fs) for fs in fs_grid]
            assert all(b >= a - 1e-12 for a, b in zip(thetas, thetas[1:]))

    def test_angle_non_increasing_in_lm_low_load(self):
        rac_low = 8.58  # ~30 kW total on the reference design
        for fs in (45e3, 55e3, 70e3):
            lms = np.linspace(20e-6, 500e-6, 50)
            thetas = [
                impedance_angle(ResonantTank(4e-6, 3.3e-6, lm, 10), rac_low, fs)
                for lm in lms
            ]
            assert all(b <= a + 1e-12 for a, b in zip(thetas, thetas[1:]))

    def test_closed_form_is_bounded_and_reports_deviation(self):
        theta = impedance_angle_closed_form(1.2, 1.4267, 25.0)
        assert -math.pi / 2 < theta < math.pi / 2
        circuit = impedance_angle(TANK, RAC_FULL, 1.2 * TANK.fr1)
        assert math.isfinite(theta - circuit)

    def test_closed_form_rejects_q_zero(self):
        with pytest.raises(DomainError):
            impedance_angle_closed_form(1.2, 0.0, 25.0)


class TestZvsMargin:
    def test_basic_arithmetic(self):
        assert zvs_margin(0.5, 0.4) == pytest.approx(0.3)

    def test_full_phase_shift_loses_zvs(self):
        assert zvs_margin(1.0, math.pi) < 0

    def test_boundary_is_not_zvs(self):
        assert not zvs_margin(0.7, 1.4) > 0


class TestQualityFactor:
    def test_unity_at_characteristic_impedance(self):
        assert quality_factor(TANK, TANK.z0) == pytest.approx(1.0, rel=1e-12)

    def test_reference_full_load(self):
        assert quality_factor(TANK, RAC_FULL) == pytest.approx(1.4267, abs=2e-3)

    def test_inverse_proportionality(self):
        assert quality_factor(TANK, 2 * RAC_FULL) == pytest.approx(
            0.5 * quality_factor(TANK, RAC_FULL), rel=1e-12
        )

    def test_rejects_nonpositive_rac(self):
        with pytest.raises(DomainError):
            quality_factor(TANK, 0.0)


class TestLoadContext:
    def test_reference_chain(self):
        ctx = load_context(TANK, Vo=3983.7168574084185, Po=1e6 / 6)
        assert ctx.Ro == pytest.approx(95.22, rel=1e-3)
        assert ctx.Rac == pytest.approx(0.7717, abs=2e-4)
        assert ctx.Q == pytest.approx(1.4267, abs=2e-3)

    def test_q_decreases_with_rac(self):
        light = load_context(TANK, Vo=3983.7, Po=15e3)
        heavy = load_context(TANK, Vo=3983.7, Po=166.7e3)
        assert light.Rac > heavy.Rac
        assert light.Q < heavy.Q


class TestSolveFsForGain:
    FS_RANGE = (45e3, 70e3)

    def test_target_n_returns_fr1(self):
        fs, sat = solve_fs_for_gain(TANK, 1.0, TANK.N, (TANK.fr1, 70e3))
        assert not sat
        assert fs == pytest.approx(TANK.fr1, rel=1e-9)

    def test_boundary_returns_fs_max(self):
        g_hi = gain_fha(TANK, 1.0, 70e3 / TANK.fr1)
        fs, sat = solve_fs_for_gain(TANK, 1.0, g_hi, self.FS_RANGE)
        assert sat and fs == 70e3

    def test_round_trip_property(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = rng.uniform(0.2, 3.0)
            fx0 = rng.uniform(45e3 / TANK.fr1 + 1e-4, 70e3 / TANK.fr1 - 1e-4)
            m = gain_fha(TANK, q, fx0)
            fs, sat = solve_fs_for_gain(TANK, q, m, self.FS_RANGE)
            assert not sat
            assert fs / TANK.fr1 == pytest.approx(fx0, rel=1e-8)

    def test_unreachable_gain_raises(self):
        with pytest.raises(InfeasibleError):
            solve_fs_for_gain(TANK, 1.0, 2 * TANK.N, self.FS_RANGE)


class TestSweepCurves:
    def test_single_point_echoes_scalar_ops(self):
        load = load_context(TANK, Vo=3983.7, Po=1e6 / 6)
        rows = sweep_curves(TANK, [load], [50e3])
        assert rows.shape == (1, 4)
        assert rows[0, 2] == pytest.approx(gain_fha(TANK, load.Q, 50e3 / TANK.fr1))
        assert rows[0, 3] == pytest.approx(impedance_angle(TANK, load.Rac, 50e3))

    def test_heavier_load_gives_lower_gain_above_resonance(self):
        heavy = load_context(TANK, Vo=3983.7, Po=1e6 / 6)
        light = load_context(TANK, Vo=3983.7, Po=1e6 / 12)
        fs_grid = np.linspace(1.05 * TANK.fr1, 1.5 * TANK.fr1, 20)
        rows = sweep_curves(TANK, [heavy, light], fs_grid)
        m_heavy = rows[: len(fs_grid), 2]
        m_light = rows[len(fs_grid):, 2]
        assert np.all(m_heavy < m_light)

    def test_theta_column_increasing_per_load(self):
        load = load_context(TANK, Vo=3983.7, Po=1e6 / 6)
        fs_grid = np.linspace(TANK.fr1, 70e3, 30)
        rows = sweep_curves(TANK, [load], fs_grid)
        assert np.all(np.diff(rows[:, 3]) >= -1e-12)

    def test_empty_grid_rejected(self):
        with pytest.raises(DomainError):
            sweep_curves(TANK, [], [50e3])
