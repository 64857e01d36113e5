import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pierlab.envfields import MetoceanSample
from pierlab.errors import ConfigError
from pierlab.physics import (
    CALIBRATED_COEFFS,
    CALIBRATED_MODE,
    FUEL_CO2_FACTORS,
    GROUND_TRUTH_COEFFS,
    GROUND_TRUTH_MODE,
    MIN_SPEED_KTS,
    PhysicsCoefficients,
    SpeedLossInput,
    VESSEL_PRESETS,
    VesselFuelModel,
    along_track,
    directional_wave_factor,
    effective_speed,
    encounter_angle,
    fuel_and_co2,
    fuel_proxy_step,
    speed_loss,
    vessel_preset,
)


def make_sample(hs=3.0, tp=8.0, wave_from=45.0, cu=1.0, cv=0.2, wu=-3.0, wv=-4.0):
    e_hf = (hs / tp) * directional_wave_factor(0.0)
    return MetoceanSample(hs, tp, wave_from, cu, cv, wu, wv, e_hf)


class TestEncounterGeometry:
    def test_head_seas_zero(self):
        assert encounter_angle(45.0, 45.0) == 0.0

    def test_following_seas_180(self):
        assert encounter_angle(225.0, 45.0) == 180.0

    def test_beam_seas(self):
        assert encounter_angle(135.0, 45.0) == 90.0

    def test_wraps_across_north(self):
        assert encounter_angle(350.0, 10.0) == pytest.approx(20.0)

    @given(st.floats(-720, 720), st.floats(-720, 720))
    def test_range_and_symmetry(self, h, w):
        mu = encounter_angle(h, w)
        assert 0.0 <= mu <= 180.0
        assert mu == pytest.approx(encounter_angle(w, h), abs=1e-9)

    def test_directional_factor_head_seas(self):
        assert directional_wave_factor(0.0) == 1.0

    def test_directional_factor_zero_beyond_beam(self):
        assert directional_wave_factor(90.0) == pytest.approx(0.0, abs=1e-20)
        assert directional_wave_factor(120.0) == 0.0
        assert directional_wave_factor(180.0) == 0.0

    def test_directional_factor_spec_points(self):
        # (2/8)*1 = 0.25 and 0.55*(1/2)^1.5 for a 60 degree encounter.
        assert 2.0 / 8.0 * directional_wave_factor(0.0) == 0.25
        got = 5.5 / 10.0 * directional_wave_factor(60.0)
        assert got == pytest.approx(0.1944543648263006, rel=1e-12)

    @given(st.floats(0, 180))
    def test_directional_factor_bounded(self, mu):
        f = directional_wave_factor(mu)
        assert 0.0 <= f <= 1.0

    def test_directional_factor_monotone_to_beam(self):
        grid = [directional_wave_factor(mu) for mu in range(0, 91, 5)]
        assert all(a >= b for a, b in zip(grid, grid[1:]))

    def test_along_track_projection(self):
        assert along_track(0.0, 0.0, 2.0) == pytest.approx(2.0)
        assert along_track(90.0, 2.0, 0.0) == pytest.approx(2.0)
        assert along_track(180.0, 0.0, 2.0) == pytest.approx(-2.0)
        assert along_track(45.0, 1.0, 1.0) == pytest.approx(math.sqrt(2.0))


class TestSpeedLoss:
    def test_ground_truth_frozen_case(self):
        inp = SpeedLossInput(make_sample(), heading_deg=10.0, base_speed_kts=12.0)
        got = speed_loss(GROUND_TRUTH_COEFFS, inp, GROUND_TRUTH_MODE)
        assert got == pytest.approx(0.03161090075393111, rel=1e-13)

    def test_calibrated_frozen_case(self):
        inp = SpeedLossInput(make_sample(), heading_deg=10.0, base_speed_kts=12.0)
        got = speed_loss(CALIBRATED_COEFFS, inp, CALIBRATED_MODE)
        assert got == pytest.approx(0.23304122717193723, rel=1e-13)

    def test_mode_sign_convention(self):
        # Ground truth negates its drag coefficient; calibrated keeps the
        # regression sign. Identical coefficient magnitudes must agree.
        flipped = PhysicsCoefficients(a=-0.5, b=0.005, c=0.7, d=0.03)
        inp = SpeedLossInput(make_sample(), heading_deg=10.0, base_speed_kts=12.0)
        gt = speed_loss(GROUND_TRUTH_COEFFS, inp, GROUND_TRUTH_MODE)
        cal = speed_loss(flipped, inp, CALIBRATED_MODE)
        assert gt == pytest.approx(cal, rel=1e-12)

    def test_unknown_mode_rejected(self):
        inp = SpeedLossInput(make_sample(), heading_deg=10.0, base_speed_kts=12.0)
        with pytest.raises(ConfigError, match="mode"):
            speed_loss(GROUND_TRUTH_COEFFS, inp, "wishful")

    def test_head_seas_slow_the_ship(self):
        calm = make_sample(hs=0.5, cu=0.0, cv=0.0, wu=0.0, wv=0.0)
        rough = make_sample(hs=6.0, cu=0.0, cv=0.0, wu=0.0, wv=0.0)
        head = lambda met: SpeedLossInput(met, heading_deg=45.0, base_speed_kts=12.0)
        drag_small = speed_loss(GROUND_TRUTH_COEFFS, head(calm))
        drag_big = speed_loss(GROUND_TRUTH_COEFFS, head(rough))
        assert drag_big < drag_small < 0.1

    def test_tail_current_helps(self):
        still = make_sample(cu=0.0, cv=0.0)
        push = make_sample(cu=0.0, cv=1.0)
        inp_still = SpeedLossInput(still, heading_deg=0.0, base_speed_kts=12.0)
        inp_push = SpeedLossInput(push, heading_deg=0.0, base_speed_kts=12.0)
        gain = speed_loss(GROUND_TRUTH_COEFFS, inp_push) - speed_loss(GROUND_TRUTH_COEFFS, inp_still)
        assert gain == pytest.approx(0.7, rel=1e-12)

    def test_effective_speed_is_base_plus_loss(self):
        inp = SpeedLossInput(make_sample(), heading_deg=10.0, base_speed_kts=12.0)
        v = effective_speed(GROUND_TRUTH_COEFFS, inp)
        assert v == pytest.approx(12.0 + speed_loss(GROUND_TRUTH_COEFFS, inp), rel=1e-15)

    def test_effective_speed_floor(self):
        storm = make_sample(hs=6.0, tp=2.0, cu=-1.5, cv=0.0, wu=-20.0, wv=-20.0)
        inp = SpeedLossInput(storm, heading_deg=45.0, base_speed_kts=2.0)
        assert speed_loss(GROUND_TRUTH_COEFFS, inp) < -1.5
        assert effective_speed(GROUND_TRUTH_COEFFS, inp) == MIN_SPEED_KTS

    @given(
        st.floats(0.1, 10.0),
        st.floats(4.0, 18.0),
        st.floats(0, 360),
        st.floats(-1.5, 1.5),
        st.floats(-10, 10),
    )
    def test_effective_speed_never_below_floor(self, hs, tp, heading, cu, wu):
        met = make_sample(hs=hs, tp=tp, cu=cu, cv=0.0, wu=wu, wv=0.0)
        inp = SpeedLossInput(met, heading_deg=heading, base_speed_kts=12.0)
        for mode, coeffs in ((GROUND_TRUTH_MODE, GROUND_TRUTH_COEFFS), (CALIBRATED_MODE, CALIBRATED_COEFFS)):
            assert effective_speed(coeffs, inp, mode) >= MIN_SPEED_KTS


class TestCoefficients:
    def test_ground_truth_values(self):
        assert GROUND_TRUTH_COEFFS == PhysicsCoefficients(0.5, 0.005, 0.7, 0.03, 0.0)

    def test_calibrated_values(self):
        assert CALIBRATED_COEFFS == PhysicsCoefficients(-0.377, 0.002, 0.837, 0.029, 0.139)

    def test_as_dict_round_trip(self):
        d = GROUND_TRUTH_COEFFS.as_dict()
        assert PhysicsCoefficients(**d) == GROUND_TRUTH_COEFFS


class TestFuelAndEmissions:
    def test_proxy_is_cubic(self):
        assert fuel_proxy_step(10.0, 1.0) == pytest.approx(1.0)
        assert fuel_proxy_step(14.0, 24.0) == pytest.approx(65.856, rel=1e-14)

    def test_panamax_admiralty_constant(self):
        v = VESSEL_PRESETS["panamax"]
        assert v.c_adm == 10000.0 / 14.0**3
        assert v.k_fuel == pytest.approx(619.533527696793, rel=1e-14)

    def test_panamax_nameplate_consumption(self):
        # One day at service speed reproduces 40.8 t fuel, 128.56 t CO2.
        v = vessel_preset("panamax")
        proxy = fuel_proxy_step(14.0, 24.0)
        fuel_t, co2_t = fuel_and_co2(proxy, v)
        assert fuel_t == pytest.approx(40.8, rel=1e-12)
        assert co2_t == pytest.approx(128.5608, rel=1e-12)

    def test_carbon_factors(self):
        assert FUEL_CO2_FACTORS == {"vlsfo": 3.151, "hfo": 3.114, "mgo": 3.206}

    def test_fuel_type_changes_co2_only(self):
        proxy = fuel_proxy_step(14.0, 24.0)
        fuel_a, co2_a = fuel_and_co2(proxy, vessel_preset("panamax", "vlsfo"))
        fuel_b, co2_b = fuel_and_co2(proxy, vessel_preset("panamax", "mgo"))
        assert fuel_a == fuel_b
        assert co2_b == pytest.approx(fuel_b * 3.206, rel=1e-14)
        assert co2_b > co2_a

    def test_unknown_preset_and_fuel(self):
        with pytest.raises(ConfigError, match="preset"):
            vessel_preset("clipper")
        with pytest.raises(ConfigError, match="fuel type"):
            vessel_preset("panamax", "whale_oil")

    def test_vessel_validation(self):
        with pytest.raises(ConfigError):
            VesselFuelModel("broken", p_mcr_kw=0.0, v_service_kts=14.0, sfoc_g_per_kwh=170.0)
        with pytest.raises(ConfigError):
            VesselFuelModel("broken", p_mcr_kw=1.0, v_service_kts=14.0, sfoc_g_per_kwh=-1.0)

    def test_presets_cover_three_classes(self):
        assert set(VESSEL_PRESETS) == {"panamax", "handymax", "mr_tanker"}
