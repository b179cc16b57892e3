"""Thermal column: density closure, energy bookkeeping, stratification."""

import numpy as np
import pytest

from limnolearn.lake import (LakeConfig, SimParams, classify_stratification,
                             density, step_thermal, total_heat)
from limnolearn.lake.thermal import STEFAN_BOLTZMANN
from limnolearn.lake.water import (SPECIFIC_HEAT, temperature_from_heat,
                                   volumetric_heat)


def two_layer_lake(area=1e5):
    return LakeConfig(lake_id="toy", max_depth=2.0, surface_area=area,
                      hypsography=np.full(4, area), trophic_state=0.5,
                      land_use_fractions=np.array([0.5, 0.3, 0.2]),
                      latitude_proxy=1.0)


class TestDensity:
    def test_maximum_near_four_degrees(self):
        grid = np.arange(0.0, 10.0, 0.01)
        argmax = grid[np.argmax(density(grid))]
        assert 3.9 <= argmax <= 4.1

    def test_value_at_25(self):
        assert 996.9 <= density(25.0) <= 997.2

    def test_monotone_above_4_5(self):
        assert density(10.0) > density(20.0)
        grid = np.arange(4.5, 45.0, 0.1)
        assert np.all(np.diff(density(grid)) < 0)

    def test_out_of_range_errors(self):
        with pytest.raises(ValueError):
            density(-2.0)
        with pytest.raises(ValueError):
            density(50.0)


class TestHeatInversion:
    def test_round_trip(self):
        temps = np.linspace(-0.5, 44.0, 200)
        heat = volumetric_heat(temps)
        back = temperature_from_heat(heat)
        assert np.max(np.abs(back - temps)) < 1e-9

    def test_strictly_increasing(self):
        grid = np.linspace(-1.0, 45.0, 500)
        assert np.all(np.diff(volumetric_heat(grid)) > 0)


def _neutral_drivers(surface_temp):
    """Driver values whose net surface flux is ~0 for this temperature."""
    lw_in = STEFAN_BOLTZMANN * (surface_temp + 273.15) ** 4
    return dict(air_temp=surface_temp, shortwave=0.0, longwave_in=lw_in,
                wind=0.0, rel_humidity=0.9)


class TestStepThermal:
    def test_equilibrium_column_unchanged(self):
        lake = two_layer_lake()
        temps = np.full(4, 10.0)
        d = _neutral_drivers(10.0)
        new_temps, ledger = step_thermal(lake, temps, d["air_temp"],
                                         d["shortwave"], d["longwave_in"],
                                         d["wind"], d["rel_humidity"])
        assert np.allclose(new_temps, temps, rtol=0, atol=1e-9)

    def test_convective_mixing_restores_monotone_density(self):
        lake = two_layer_lake()
        temps = np.array([10.0, 14.0, 18.0, 22.0])  # denser water on top
        d = _neutral_drivers(10.0)
        new_temps, _ = step_thermal(lake, temps, d["air_temp"],
                                    d["shortwave"], d["longwave_in"],
                                    d["wind"], d["rel_humidity"])
        rho = density(new_temps)
        assert np.all(np.diff(rho) >= -1e-9)

    def test_prescribed_flux_energy_balance(self):
        # [DERIVED] hand energy balance: rise = F_E / (rho c_w V)
        lake = two_layer_lake(area=1e5)
        target = 8.64e9  # J over the day
        sw = target / ((1.0 - SimParams().alpha_sw) * lake.surface_area * 86400.0)
        temps = np.full(4, 10.0)
        d = _neutral_drivers(10.0)
        new_temps, ledger = step_thermal(lake, temps, d["air_temp"], sw,
                                         d["longwave_in"], d["wind"],
                                         d["rel_humidity"])
        assert ledger["f_e"] == pytest.approx(target, rel=1e-9)
        volumes = lake.layer_volumes
        du = total_heat(new_temps, volumes) - total_heat(temps, volumes)
        assert du == pytest.approx(ledger["f_e"], rel=1e-12)
        mean_rise = float(np.sum((new_temps - temps) * volumes)) \
            / lake.total_volume
        expected = target / (density(10.0) * SPECIFIC_HEAT * lake.total_volume)
        assert mean_rise == pytest.approx(expected, rel=1e-3)

    def test_flux_identity_of_recorded_terms(self):
        lake = two_layer_lake()
        temps = np.array([22.0, 20.0, 12.0, 11.0])
        _, ledger = step_thermal(lake, temps, 15.0, 250.0, 350.0, 4.0, 0.7)
        t = ledger["heat_terms"]
        signed = t[0] + t[1] - t[2] - t[3] - t[4]
        assert signed == pytest.approx(ledger["f_e"], rel=1e-12)

    def test_non_finite_state_rejected(self):
        lake = two_layer_lake()
        with pytest.raises(ValueError, match="non-finite"):
            step_thermal(lake, np.array([np.nan, 1, 1, 1]), 10, 100, 300,
                         2, 0.5)


def _solve_temp_for_density_difference(t_bottom, target_diff):
    """Surface temperature (> bottom) with rho(bottom) - rho(surface) = diff."""
    lo, hi = t_bottom, 45.0
    goal = density(t_bottom) - target_diff
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if density(mid) > goal:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestClassifyStratification:
    volumes = np.array([100.0, 100.0, 80.0, 60.0])

    def test_isothermal_unstratified(self):
        temps = np.full(4, 15.0)
        strat, tc, v_epi, v_hyp = classify_stratification(
            temps, density(temps), self.volumes)
        assert not strat and tc == -1
        assert v_epi == pytest.approx(self.volumes.sum())
        assert v_hyp == 0.0

    def test_summer_profile_stratified(self):
        # [DERIVED] density(10) - density(25) ~ 2.65 kg/m^3 > 0.05
        temps = np.array([25.0, 24.0, 11.0, 10.0])
        assert density(10.0) - density(25.0) > 2.6
        strat, tc, v_epi, v_hyp = classify_stratification(
            temps, density(temps), self.volumes)
        assert strat
        assert tc == 1  # largest density jump between layers 1 and 2
        assert v_epi == pytest.approx(200.0)
        assert v_hyp == pytest.approx(140.0)

    def test_paper_threshold_is_strict(self):
        # density difference of 0.04 kg/m^3 does not exceed the 0.05 threshold
        t_surface = _solve_temp_for_density_difference(10.0, 0.04)
        temps = np.array([t_surface, t_surface, 10.0, 10.0])
        rho = density(temps)
        assert rho[-1] - rho[0] == pytest.approx(0.04, abs=1e-6)
        strat, *_ = classify_stratification(temps, rho, self.volumes)
        assert not strat

    def test_cold_mean_temperature_blocks_stratification(self):
        temps = np.array([1.0, 2.0, 3.5, 3.8])  # inverse (winter) gradient
        rho = density(temps)
        assert rho[-1] - rho[0] > 0.05
        strat, *_ = classify_stratification(temps, rho, self.volumes)
        assert not strat

    def test_depends_only_on_profile(self):
        temps = np.array([25.0, 24.0, 11.0, 10.0])
        rho = density(temps)
        a = classify_stratification(temps, rho, self.volumes)
        b = classify_stratification(temps.copy(), rho.copy(),
                                    self.volumes.copy())
        assert a == b
        # doubling all volumes scales the partition, not the decision
        strat, tc, v_epi, v_hyp = classify_stratification(
            temps, rho, 2.0 * self.volumes)
        assert (strat, tc) == (a[0], a[1])
        assert v_epi == pytest.approx(2.0 * a[2])

    def test_requires_two_layers(self):
        with pytest.raises(ValueError):
            classify_stratification(np.array([5.0]), np.array([999.9]),
                                    np.array([1.0]))
