"""One-day thermal update of the layered column.

The update runs in volumetric-heat space: the net surface flux is added
to the top layer's energy, diffusion moves energy between adjacent
layers in antisymmetric pairs, and wind/convective mixing merge layers
to a common temperature solved from the merged energy.  Every operation
either transfers energy between layers or re-expresses it, so the column
energy change over a day equals the recorded net surface flux to
rounding.
"""

from __future__ import annotations

import numpy as np

from .params import SimParams
from .types import LakeConfig
from .water import (SPECIFIC_HEAT, _density_unchecked,
                    _volumetric_heat_derivative, heat_to_temperature_scalar,
                    temperature_from_heat_fast, volumetric_heat)

SECONDS_PER_DAY = 86400.0
STEFAN_BOLTZMANN = 5.670374419e-8
RHO_AIR = 1.2            # kg/m^3
CP_AIR = 1005.0          # J/(kg K)
LATENT_HEAT = 2.465e6    # J/kg
PRESSURE_HPA = 1013.25
RHO_REF = 998.0          # kg/m^3, conductance scaling only


def saturation_vapor_pressure(temperature):
    """Magnus formula, hPa."""
    t = np.asarray(temperature, dtype=np.float64)
    return 6.112 * np.exp(17.62 * t / (t + 243.12))


def _specific_humidity(vapor_pressure_hpa):
    e = vapor_pressure_hpa
    return 0.622 * e / (PRESSURE_HPA - 0.378 * e)


def surface_fluxes(surface_temp: float, air_temp: float, shortwave: float,
                   longwave_in: float, wind: float, rel_humidity: float,
                   params: SimParams) -> dict:
    """Raw daily-mean surface heat fluxes, W/m^2 (positive magnitudes)."""
    sw_abs = shortwave * (1.0 - params.alpha_sw)
    lw_in_abs = longwave_in * (1.0 - params.alpha_lw)
    lw_out = params.emissivity * STEFAN_BOLTZMANN * (surface_temp + 273.15) ** 4
    q_surface = _specific_humidity(saturation_vapor_pressure(surface_temp))
    q_air = _specific_humidity(rel_humidity
                               * saturation_vapor_pressure(air_temp))
    latent = max(0.0, params.c_latent * RHO_AIR * LATENT_HEAT * wind
                 * (q_surface - q_air))
    sensible = params.c_sensible * RHO_AIR * CP_AIR * wind \
        * (surface_temp - air_temp)
    return {"sw_abs": sw_abs, "lw_in_abs": lw_in_abs, "lw_out": lw_out,
            "latent": latent, "sensible": sensible}


def _bounded_daily_flux(raw: dict, surface_temp: float, surface_volume: float,
                        area: float, params: SimParams):
    """Convert W/m^2 terms to daily J and damp them so the surface layer
    stays inside the invertible temperature range.

    Damping rescales all same-sign contributions by a common factor, so
    the identity F_E = sw + lw_in - lw_out - latent - sensible holds for
    the recorded terms exactly.
    """
    scale = area * SECONDS_PER_DAY
    terms = np.array([raw["sw_abs"], raw["lw_in_abs"], raw["lw_out"],
                      raw["latent"], raw["sensible"]]) * scale
    signs = np.array([1.0, 1.0, -1.0, -1.0, -1.0])
    contrib = terms * signs
    pos = float(np.sum(contrib[contrib > 0]))
    neg = float(-np.sum(contrib[contrib < 0]))

    u0 = volumetric_heat(surface_temp)
    f_min = (volumetric_heat(params.t_floor) - u0) * surface_volume
    f_max = (volumetric_heat(params.t_ceil) - u0) * surface_volume
    f_e = pos - neg
    if f_e < f_min and neg > 0.0:
        s = max(0.0, (pos - f_min) / neg)
        contrib[contrib < 0] *= s
    elif f_e > f_max and pos > 0.0:
        s = max(0.0, (f_max + neg) / pos)
        contrib[contrib > 0] *= s
    terms = contrib * signs
    f_e = float(np.sum(contrib))
    return f_e, terms


def _merge_region(energies: np.ndarray, temps: np.ndarray,
                  volumes: np.ndarray, start: int, stop: int):
    """Mix layers [start, stop) to the energy-conserving common temperature."""
    u = float(np.sum(energies[start:stop]) / np.sum(volumes[start:stop]))
    t_star = heat_to_temperature_scalar(u, guess=float(temps[start]))
    temps[start:stop] = t_star
    energies[start:stop] = (_density_unchecked(t_star) * SPECIFIC_HEAT
                            * t_star) * volumes[start:stop]


def _convective_adjust(energies: np.ndarray, temps: np.ndarray,
                       volumes: np.ndarray):
    """Merge adjacent layers until density is non-decreasing with depth.

    Single top-down pass over a stack of stable regions: whenever the
    next layer is lighter than the region above, the regions merge to
    their energy-conserving common temperature.
    """
    n = len(temps)
    # stack rows: [start, stop, energy, volume, t_star, rho]
    stack: list[list] = []
    for d in range(n):
        e = float(energies[d])
        v = float(volumes[d])
        t = float(temps[d])
        rho = _density_unchecked(t)
        start = d
        while stack and stack[-1][5] > rho + 1e-12:
            prev = stack.pop()
            start = prev[0]
            e += prev[2]
            v += prev[3]
            t = heat_to_temperature_scalar(e / v, guess=t)
            rho = _density_unchecked(t)
        stack.append([start, d + 1, e, v, t, rho])
    for start, stop, _, _, t, _ in stack:
        if stop - start > 1:
            temps[start:stop] = t
            energies[start:stop] = (_density_unchecked(t) * SPECIFIC_HEAT
                                    * t) * volumes[start:stop]


def step_thermal(lake: LakeConfig, temps: np.ndarray, air_temp: float,
                 shortwave: float, longwave_in: float, wind: float,
                 rel_humidity: float, params: SimParams = SimParams()):
    """Advance layer temperatures one day.

    Returns (new_temps, ledger) where ledger holds the five recorded heat
    terms [J], the net flux f_e [J] and the column energies before/after.
    """
    temps = np.asarray(temps, dtype=np.float64)
    if not np.all(np.isfinite(temps)):
        raise ValueError("step_thermal: non-finite layer temperatures")
    volumes = lake.layer_volumes
    energies = volumetric_heat(temps) * volumes
    u_before = float(np.sum(energies))

    raw = surface_fluxes(float(temps[0]), air_temp, shortwave, longwave_in,
                         wind, rel_humidity, params)
    f_e, terms = _bounded_daily_flux(raw, float(temps[0]), float(volumes[0]),
                                     lake.surface_area, params)
    energies = energies.copy()
    energies[0] += f_e
    temps = temps.copy()
    temps[0] = heat_to_temperature_scalar(float(energies[0] / volumes[0]),
                                          guess=float(temps[0]))

    n = lake.n_layers
    if n > 1:
        interface_area = lake.hypsography[1:]
        interface_depth = np.arange(1, n) * lake.layer_thickness
        kappa = (params.kappa_background + params.kappa_wind * wind
                 * np.exp(-interface_depth / params.kappa_decay))
        dt_sub = SECONDS_PER_DAY / params.substeps
        conductance = (kappa * interface_area * dt_sub
                       / lake.layer_thickness * RHO_REF * SPECIFIC_HEAT)
        heat_capacity = RHO_REF * SPECIFIC_HEAT * volumes
        cap = 0.24 * np.minimum(heat_capacity[:-1], heat_capacity[1:])
        conductance = np.minimum(conductance, cap)
        for step in range(params.substeps):
            flux = conductance * (temps[1:] - temps[:-1])
            energies[:-1] += flux
            energies[1:] -= flux
            u = energies / volumes
            if step + 1 < params.substeps:
                # intermediate temperatures only parameterize the next
                # flux; one warm-started Newton iteration is ample
                temps = temps - (volumetric_heat(temps) - u) \
                    / _volumetric_heat_derivative(temps)
            else:
                temps = temperature_from_heat_fast(u, temps)

        mix_depth = params.wind_mix_base + params.wind_mix_coeff * wind ** 1.5
        n_mix = min(int(mix_depth / lake.layer_thickness), n)
        if n_mix >= 2:
            _merge_region(energies, temps, volumes, 0, n_mix)
        _convective_adjust(energies, temps, volumes)

    u_after = float(np.sum(volumetric_heat(temps) * volumes))
    ledger = {
        "heat_terms": terms,
        "f_e": f_e,
        "u_before": u_before,
        "u_after": u_after,
    }
    return temps, ledger


def classify_stratification(temps, densities, volumes):
    """Apply the three stratification criteria.

    Returns (stratified, tc, v_epi, v_hyp); tc is the index of the layer
    just above the maximum density gradient, or -1 when no thermocline
    exists.  Unstratified columns report v_epi = total volume, v_hyp = 0.
    """
    temps = np.asarray(temps, dtype=np.float64)
    rho = np.asarray(densities, dtype=np.float64)
    volumes = np.asarray(volumes, dtype=np.float64)
    if temps.shape[0] < 2:
        raise ValueError("classify_stratification: need at least 2 layers")
    total = float(np.sum(volumes))

    gradients = rho[1:] - rho[:-1]
    max_grad = float(gradients.max())
    tc = int(np.argmax(gradients)) if max_grad > 0.0 else -1

    density_difference = float(rho[-1] - rho[0])
    mean_temp = float(np.sum(temps * volumes) / total)
    stratified = (density_difference > 0.05 and mean_temp > 4.0 and tc >= 0)
    if not stratified:
        return False, -1, total, 0.0
    v_epi = float(np.sum(volumes[:tc + 1]))
    v_hyp = total - v_epi
    return True, tc, v_epi, v_hyp
