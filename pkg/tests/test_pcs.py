import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcs_mpc.errors import DegenerateMaterialError, ExtrapolationWarning, InvalidMeasurementError
from pcs_mpc.pcs import (
    G,
    Curve,
    PcsProperties,
    TankGeometry,
    TankMeasurement,
    cp_approx_curve,
    cp_pcs,
    density_from_pressure,
    enthalpy_to_temperature,
    hp_heat_dhw,
    hp_heat_sh,
    latent_energy,
    liquid_fraction,
    load_curve_csv,
    save_curve_csv,
    stored_energy_dhw,
    stored_energy_sh,
    temperature_to_enthalpy,
)


def _meas(T_center, rho, T_top=55.0, dz=0.7):
    """Tank reading whose lower-zone pressure difference encodes ``rho``."""
    p_center = 5000.0
    return TankMeasurement(T_top=T_top, T_center=T_center, T_bottom=T_center, p_center=p_center,
                           p_bottom=p_center + rho * G * dz, z_center=0.8, z_bottom=0.8 - dz)


class TestCpPcs:
    def test_pure_water(self):
        assert cp_pcs(PcsProperties(w_P=0.0)) == pytest.approx(4.18)

    def test_pure_paraffin(self):
        assert cp_pcs(PcsProperties(w_P=1.0)) == pytest.approx(2.1)

    def test_default_mix(self):
        assert cp_pcs(PcsProperties(w_P=0.3)) == pytest.approx(3.556)


class TestDensity:
    @pytest.mark.parametrize("dp,dz,rho", [(9810, 1.0, 1000.0), (4905, 0.5, 1000.0), (9319.5, 1.0, 950.0)])
    def test_examples(self, dp, dz, rho):
        assert density_from_pressure(dp, dz) == pytest.approx(rho)

    @pytest.mark.parametrize("dp,dz", [(0.0, 1.0), (100.0, 0.0), (-5.0, 1.0), (5.0, -1.0)])
    def test_rejects_nonphysical(self, dp, dz):
        with pytest.raises(InvalidMeasurementError):
            density_from_pressure(dp, dz)

    @given(st.floats(1.0, 1e5), st.floats(0.01, 5.0), st.floats(0.1, 10.0))
    def test_homogeneous(self, dp, dz, k):
        assert density_from_pressure(k * dp, k * dz) == pytest.approx(density_from_pressure(dp, dz), rel=1e-12)


class TestLatent:
    def test_fraction_endpoints(self, props):
        assert liquid_fraction(props.rho_sol, props) == 0.0
        assert liquid_fraction(props.rho_liq, props) == 1.0
        assert liquid_fraction(0.5 * (props.rho_sol + props.rho_liq), props) == pytest.approx(0.5)

    def test_degenerate_material(self):
        p = PcsProperties(rho_liq=950.0, rho_sol=950.0)
        with pytest.raises(DegenerateMaterialError):
            liquid_fraction(950.0, p)

    def test_solid_holds_nothing(self, props):
        assert latent_energy(props.rho_sol, 300.0, props) == 0.0

    def test_full_melt_300kg(self, props):
        # 300 kg * 0.3 * 49 kJ/kg = 4410 kJ
        assert latent_energy(props.rho_liq, 300.0, props) == pytest.approx(1.225)

    def test_linear_in_fraction(self, props):
        full = latent_energy(props.rho_liq, 300.0, props)
        half = latent_energy(0.5 * (props.rho_sol + props.rho_liq), 300.0, props)
        assert half == pytest.approx(0.5 * full)

    @given(st.floats(900.0, 1000.0), st.floats(900.0, 1000.0))
    def test_monotone_and_clamped(self, r1, r2):
        p = PcsProperties()
        lo, hi = sorted((r1, r2))
        # density falls as paraffin melts, so lower density means more latent heat
        assert latent_energy(lo, 100.0, p) >= latent_energy(hi, 100.0, p)
        cap = 100.0 * p.w_P * p.dh_f / 3600.0
        assert 0.0 <= latent_energy(lo, 100.0, p) <= cap + 1e-15


class TestStoredEnergy:
    def test_empty_sh_zone(self, props, geom):
        assert stored_energy_sh(_meas(geom.T_sh_ref, props.rho_sol), geom, props) == 0.0

    def test_sensible_only(self, props):
        g = TankGeometry(m_sh=300.0)
        e = stored_energy_sh(_meas(g.T_sh_ref + 10.0, props.rho_sol), g, props)
        assert e == pytest.approx(10668.0 / 3600.0, rel=1e-4)

    def test_full_zone_matches_capacity(self, props, geom):
        e = stored_energy_sh(_meas(props.melt_range[1], props.rho_liq), geom, props)
        assert e == pytest.approx(8.4, rel=0.05)

    def test_implausible_temperature(self, props, geom):
        with pytest.raises(InvalidMeasurementError):
            stored_energy_sh(_meas(geom.T_sh_ref - 6.0, props.rho_sol), geom, props)

    def test_clamped_at_zero(self, props, geom):
        assert stored_energy_sh(_meas(geom.T_sh_ref - 3.0, props.rho_sol), geom, props) == 0.0

    def test_dhw_examples(self, props, geom):
        assert stored_energy_dhw(_meas(30.0, props.rho_sol, T_top=geom.T_dhw_ref), geom, props) == 0.0
        assert stored_energy_dhw(_meas(30.0, props.rho_sol, T_top=65.0), geom, props) == pytest.approx(3.6, rel=0.05)
        one_k = geom.m_dhw * cp_pcs(props) / 3600.0
        e1 = stored_energy_dhw(_meas(30.0, props.rho_sol, T_top=60.0), geom, props)
        e2 = stored_energy_dhw(_meas(30.0, props.rho_sol, T_top=61.0), geom, props)
        assert e2 - e1 == pytest.approx(one_k)

    @given(st.floats(24.0, 60.0), st.floats(940.0, 960.0))
    def test_water_reduces_to_sensible(self, T, rho):
        water = PcsProperties(w_P=0.0)
        g = TankGeometry()
        expected = g.m_sh * 4.18 * (T - g.T_sh_ref) / 3600.0
        assert stored_energy_sh(_meas(T, rho), g, water) == pytest.approx(max(0.0, expected), abs=1e-12)


class TestHeatFlows:
    def test_trivial_cases(self, props):
        assert hp_heat_sh(0.0, 35.0, 30.0, props) == 0.0
        assert hp_heat_sh(0.2, 33.0, 33.0, props) == 0.0
        assert hp_heat_dhw(0.0, 60.0, 50.0, props) == 0.0
        assert hp_heat_dhw(0.1, 55.0, 55.0, props) == 0.0

    def test_sensible_outside_band(self, props):
        vdot, T_sup, T_ret = 0.3, 55.0, 48.0
        plain = props.rho_liq * vdot / 1000.0 * cp_pcs(props) * (T_sup - T_ret)
        assert hp_heat_sh(vdot, T_sup, T_ret, props) == pytest.approx(plain, rel=0.02)

    def test_dhw_example(self):
        p = PcsProperties(rho_liq=950.0, rho_sol=960.0)
        assert hp_heat_dhw(0.1, 58.0, 50.0, p) == pytest.approx(0.95 * 3.556 * 0.8, rel=1e-9)

    def test_extrapolation_flagged(self, props):
        with pytest.warns(ExtrapolationWarning):
            hp_heat_sh(0.1, 120.0, 100.0, props)

    def test_negative_flow_rejected(self, props):
        with pytest.raises(ValueError):
            hp_heat_sh(-0.1, 35.0, 30.0, props)


class TestHysteresis:
    def test_single_phase_agreement(self, props):
        for T in (5.0, 15.0, 23.0):
            assert temperature_to_enthalpy(T, "melting", props) == pytest.approx(
                temperature_to_enthalpy(T, "freezing", props))
        for T in (45.0, 70.0):
            assert temperature_to_enthalpy(T, "melting", props) == pytest.approx(
                temperature_to_enthalpy(T, "freezing", props))

    def test_band_midpoint_inside_melt_range(self, props):
        lo, hi = props.melt_range
        h_mid = 0.5 * (temperature_to_enthalpy(lo, "melting", props) + temperature_to_enthalpy(hi, "melting", props))
        assert lo < enthalpy_to_temperature(h_mid, "melting", props) < hi

    def test_band_slope(self, props):
        lo, hi = props.melt_range
        dh = temperature_to_enthalpy(hi, "melting", props) - temperature_to_enthalpy(lo, "melting", props)
        assert dh / (hi - lo) == pytest.approx(cp_pcs(props) + props.w_P * props.dh_f / (hi - lo))
        d_out = temperature_to_enthalpy(60.0, "melting", props) - temperature_to_enthalpy(50.0, "melting", props)
        assert d_out / 10.0 == pytest.approx(cp_pcs(props))

    @given(st.floats(0.0, 100.0), st.sampled_from(["melting", "freezing"]))
    def test_round_trip(self, T, branch):
        p = PcsProperties()
        h = temperature_to_enthalpy(T, branch, p)
        assert enthalpy_to_temperature(h, branch, p) == pytest.approx(T, abs=1e-9)

    @given(st.floats(1.0, 99.0), st.floats(0.01, 1.0))
    def test_monotone_and_oriented(self, T, dT):
        p = PcsProperties()
        for br in ("melting", "freezing"):
            assert temperature_to_enthalpy(T + dT, br, p) > temperature_to_enthalpy(T, br, p)
        h = temperature_to_enthalpy(T, "melting", p)
        assert enthalpy_to_temperature(h, "freezing", p) <= enthalpy_to_temperature(h, "melting", p) + 1e-12

    def test_out_of_range_saturates(self, props):
        with pytest.warns(ExtrapolationWarning):
            assert enthalpy_to_temperature(1e6, "melting", props) == 100.0

    def test_cp_approx_integrates_to_melt_enthalpy(self, props):
        lo, hi = props.melt_range
        target = cp_pcs(props) * (hi - lo) + props.w_P * props.dh_f
        assert cp_approx_curve(props).integral(lo, hi) == pytest.approx(target, rel=0.01)

    def test_bad_cp_curve_rejected(self):
        flat = Curve(np.array([0.0, 100.0]), np.array([3.556, 3.556]))
        with pytest.raises(ValueError):
            PcsProperties(cp_approx_curve=flat)


class TestValidation:
    @pytest.mark.parametrize("kw", [
        {"w_P": 1.5}, {"dh_f": 0.0}, {"rho_sol": 930.0},
        {"freeze_range": (24.0, 45.0)}, {"melt_range": (30.0, 30.0)},
    ])
    def test_invalid_props(self, kw):
        with pytest.raises(ValueError):
            PcsProperties(**kw)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            TankGeometry(m_sh=0.0)
        with pytest.raises(ValueError):
            TankGeometry(T_sh_ref=60.0)


def test_curve_csv_round_trip(tmp_path):
    c = Curve(np.array([0.0, 30.0, 42.0, 100.0]), np.array([960.0, 960.0, 940.0, 940.0]), name="rho")
    path = tmp_path / "rho.csv"
    save_curve_csv(c, path)
    back = load_curve_csv(path)
    np.testing.assert_array_equal(back.temperature, c.temperature)
    np.testing.assert_array_equal(back.value, c.value)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert back(36.0) == pytest.approx(950.0)


def test_curve_requires_increasing_temperature():
    with pytest.raises(ValueError):
        Curve(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
