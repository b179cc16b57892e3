"""Dissolved-oxygen mass balance over epilimnion / hypolimnion pools.

Concentration updates reproduce the two stratified volume-ratio
equations and the mixed-season update exactly; the recorded fluxes are
the values actually applied (after the non-negativity limiter), so the
stored trajectory satisfies those equations to rounding.

Entrainment moves thermocline-displaced volume carrying the donor
layer's post-exogenous concentration, which conserves mass and keeps
pools non-negative without further clamping.
"""

from __future__ import annotations

import numpy as np

from .params import SimParams


def epi_hyp_volumes(layer_volumes: np.ndarray, tc: int) -> tuple[float, float]:
    """Volumes above/below the thermocline (layer tc belongs to the epi)."""
    v_epi = float(np.sum(layer_volumes[:tc + 1]))
    v_hyp = float(np.sum(layer_volumes)) - v_epi
    return v_epi, v_hyp


def piston_velocity(wind: float, params: SimParams) -> float:
    """Gas-exchange piston velocity, m/day, linear in wind speed."""
    return params.piston_base + params.piston_wind * wind


def atmospheric_flux(do_pool: float, t_surface: float, wind: float,
                     mean_depth: float, do_sat, params: SimParams) -> float:
    """F_ATM = k(wind) * (DO_sat(T_surface) - DO) / mean layer depth."""
    return piston_velocity(wind, params) * (do_sat(t_surface) - do_pool) \
        / mean_depth


def nep_flux(t_layer: float, shortwave: float, trophic: float,
             params: SimParams) -> float:
    """Net ecosystem production: light-scaled production minus respiration."""
    production = params.nep_production * shortwave / params.sw_reference
    respiration = params.nep_respiration * params.nep_theta ** (t_layer - 20.0)
    return trophic * (production - respiration)


def sediment_flux(t_layer: float, sediment_area: float, volume: float,
                  trophic: float, params: SimParams) -> float:
    """Sediment oxygen demand, always <= 0, Arrhenius-scaled."""
    demand = params.sed_areal * params.sed_theta ** (t_layer - 20.0) \
        * (0.2 + 0.8 * trophic)
    return -demand * sediment_area / volume


def _limit_exogenous(pool: float, components: list[float], dt: float):
    """Scale negative flux components so pool + sum * dt >= 0.

    Returns (scaled components, limited flag).  The scaled values are the
    recorded ones, so downstream bookkeeping stays exact.
    """
    comp = np.asarray(components, dtype=np.float64)
    pos = float(np.sum(comp[comp > 0]))
    neg = float(-np.sum(comp[comp < 0]))
    if neg <= 0.0 or pool + (pos - neg) * dt >= 0.0:
        return list(comp), False
    s = (pos + pool / dt) / neg
    comp[comp < 0] *= max(0.0, s)
    return list(comp), True


def entrainment_flux(donor_epi: float, donor_hyp: float, tc_prev: int,
                     tc_next: int, layer_volumes: np.ndarray):
    """Concentration increments from thermocline displacement.

    ``donor_epi``/``donor_hyp`` are the layer concentrations after the
    exogenous update.  Positive values point into the receiving layer.
    Both days must be stratified (tc >= 0).
    """
    if tc_prev < 0 or tc_next < 0:
        raise ValueError("entrainment_flux: both days must be stratified")
    if tc_next == tc_prev:
        return 0.0, 0.0
    v_epi_prev, v_hyp_prev = epi_hyp_volumes(layer_volumes, tc_prev)
    v_epi_next, v_hyp_next = epi_hyp_volumes(layer_volumes, tc_next)
    if tc_next > tc_prev:
        moved = (v_epi_next - v_epi_prev) * donor_hyp
        return moved / v_epi_next, -moved / v_hyp_next
    moved = (v_hyp_next - v_hyp_prev) * donor_epi
    return -moved / v_epi_next, moved / v_hyp_next


def step_do(lake, do_epi: float, do_hyp: float, do_total: float,
            strat_prev: bool, tc_prev: int, strat_next: bool, tc_next: int,
            t_surface: float, t_epi: float, t_hyp: float, t_mean: float,
            wind: float, shortwave: float, do_sat, params: SimParams,
            dt: float = 1.0):
    """Advance the oxygen pools one day.

    State arguments describe day t-1 (pools, regime, temperatures and
    drivers); ``strat_next``/``tc_next`` describe the regime the thermal
    step produced for day t.  Returns (new pools, ledger).
    """
    volumes = lake.layer_volumes
    trophic = lake.trophic_state
    area = lake.surface_area
    total_volume = lake.total_volume

    if strat_prev:
        v_epi_prev, v_hyp_prev = epi_hyp_volumes(volumes, tc_prev)
        z_epi = v_epi_prev / area
        f_atm = atmospheric_flux(do_epi, t_surface, wind, z_epi, do_sat, params)
        f_nep = nep_flux(t_epi, shortwave, trophic, params)
        f_sed = sediment_flux(t_hyp, float(lake.hypsography[tc_prev + 1]),
                              v_hyp_prev, trophic, params)
        (f_atm, f_nep), clamped_epi = _limit_exogenous(
            do_epi, [f_atm, f_nep], dt)
        (f_sed,), clamped_hyp = _limit_exogenous(do_hyp, [f_sed], dt)
        clamped = clamped_epi or clamped_hyp
        f_exo_epi = f_atm + f_nep
        f_exo_hyp = f_sed
        interim_epi = do_epi + f_exo_epi * dt
        interim_hyp = do_hyp + f_exo_hyp * dt

        if strat_next:
            f_ent_epi, f_ent_hyp = entrainment_flux(
                interim_epi, interim_hyp, tc_prev, tc_next, volumes)
            v_epi_next, v_hyp_next = epi_hyp_volumes(volumes, tc_next)
            new_epi = interim_epi * (v_epi_prev / v_epi_next) + f_ent_epi
            new_hyp = interim_hyp * (v_hyp_prev / v_hyp_next) + f_ent_hyp
            new_total = (new_epi * v_epi_next + new_hyp * v_hyp_next) \
                / total_volume
        else:
            f_ent_epi = f_ent_hyp = 0.0
            new_total = (interim_epi * v_epi_prev + interim_hyp * v_hyp_prev) \
                / total_volume
            new_epi = new_hyp = new_total
    else:
        mean_depth = total_volume / area
        f_atm = atmospheric_flux(do_total, t_surface, wind, mean_depth,
                                 do_sat, params)
        f_nep = nep_flux(t_mean, shortwave, trophic, params)
        f_sed = sediment_flux(t_mean, area, total_volume, trophic, params)
        (f_atm, f_nep, f_sed), clamped = _limit_exogenous(
            do_total, [f_atm, f_nep, f_sed], dt)
        f_ent_epi = f_ent_hyp = 0.0
        new_total = do_total + (f_atm + f_nep + f_sed) * dt
        new_epi = new_hyp = new_total

    ledger = {
        "f_atm": f_atm, "f_nep": f_nep, "f_sed": f_sed,
        "f_ent_epi": f_ent_epi, "f_ent_hyp": f_ent_hyp,
        "clamped": clamped,
    }
    return (new_epi, new_hyp, new_total), ledger
