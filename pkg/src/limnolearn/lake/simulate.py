"""Full trajectory integration: thermal column plus oxygen pools."""

from __future__ import annotations

import numpy as np

from .oxygen import step_do
from .params import SimParams
from .thermal import classify_stratification, step_thermal
from .types import HEAT_TERM_NAMES, DriverSeries, LakeConfig, SimTrajectory
from .water import _density_unchecked, do_saturation, total_heat

__all__ = ["SimParams", "simulate"]


def simulate(lake: LakeConfig, drivers: DriverSeries, seed: int,
             params: SimParams | None = None) -> SimTrajectory:
    """Integrate the column for the full driver series.

    Deterministic per (lake, drivers, seed); the seed only jitters the
    initial temperature profile.  Day t's flux entries are the fluxes
    applied over t -> t+1; the last day's entries are diagnostic.
    """
    if params is None:
        params = SimParams()
    n_days = drivers.n_days
    n_layers = lake.n_layers
    volumes = lake.layer_volumes

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x51A7E)))
    t0 = 4.5 + rng.uniform(0.0, 0.5)
    temps_now = np.full(n_layers, t0)

    temps = np.empty((n_days, n_layers))
    stratified = np.zeros(n_days, dtype=bool)
    tc = np.full(n_days, -1, dtype=np.int64)
    v_epi = np.empty(n_days)
    v_hyp = np.empty(n_days)
    do_epi = np.empty(n_days)
    do_hyp = np.empty(n_days)
    do_total = np.empty(n_days)
    f_atm = np.zeros(n_days)
    f_nep = np.zeros(n_days)
    f_sed = np.zeros(n_days)
    f_ent_epi = np.zeros(n_days)
    f_ent_hyp = np.zeros(n_days)
    u_t = np.empty(n_days)
    f_e = np.zeros(n_days)
    heat_terms = np.zeros((n_days, len(HEAT_TERM_NAMES)))
    do_clamped = np.zeros(n_days, dtype=bool)

    def regime(day, column):
        s, k, ve, vh = classify_stratification(
            column, _density_unchecked(column), volumes)
        stratified[day] = s
        tc[day] = k
        v_epi[day] = ve
        v_hyp[day] = vh

    temps[0] = temps_now
    regime(0, temps_now)
    sat0 = float(do_saturation(t0))
    do_epi[0] = do_hyp[0] = do_total[0] = sat0
    u_t[0] = total_heat(temps_now, volumes)

    for t in range(n_days - 1):
        new_temps, ledger = step_thermal(
            lake, temps[t], drivers.air_temperature[t], drivers.shortwave[t],
            drivers.longwave_in[t], drivers.wind_speed[t],
            drivers.rel_humidity[t], params)
        temps[t + 1] = new_temps
        regime(t + 1, new_temps)
        u_t[t + 1] = ledger["u_after"]
        f_e[t] = ledger["f_e"]
        heat_terms[t] = ledger["heat_terms"]

        t_epi, t_hyp = _epi_hyp_means(temps[t], volumes, int(tc[t]),
                                      bool(stratified[t]))
        t_mean = float(np.sum(temps[t] * volumes) / np.sum(volumes))
        pools, do_ledger = step_do(
            lake, float(do_epi[t]), float(do_hyp[t]), float(do_total[t]),
            bool(stratified[t]), int(tc[t]), bool(stratified[t + 1]),
            int(tc[t + 1]), float(temps[t][0]), t_epi, t_hyp, t_mean,
            float(drivers.wind_speed[t]), float(drivers.shortwave[t]),
            do_saturation, params)
        do_epi[t + 1], do_hyp[t + 1], do_total[t + 1] = pools
        f_atm[t] = do_ledger["f_atm"]
        f_nep[t] = do_ledger["f_nep"]
        f_sed[t] = do_ledger["f_sed"]
        f_ent_epi[t] = do_ledger["f_ent_epi"]
        f_ent_hyp[t] = do_ledger["f_ent_hyp"]
        do_clamped[t] = do_ledger["clamped"]

    # Diagnostic fluxes for the final day (not applied to any later state).
    last = n_days - 1
    _, ledger = step_thermal(
        lake, temps[last], drivers.air_temperature[last],
        drivers.shortwave[last], drivers.longwave_in[last],
        drivers.wind_speed[last], drivers.rel_humidity[last], params)
    f_e[last] = ledger["f_e"]
    heat_terms[last] = ledger["heat_terms"]

    return SimTrajectory(
        lake=lake, drivers=drivers, temps=temps, stratified=stratified,
        tc=tc, v_epi=v_epi, v_hyp=v_hyp, do_epi=do_epi, do_hyp=do_hyp,
        do_total=do_total, f_atm=f_atm, f_nep=f_nep, f_sed=f_sed,
        f_ent_epi=f_ent_epi, f_ent_hyp=f_ent_hyp, u_t=u_t, f_e=f_e,
        heat_terms=heat_terms, do_clamped=do_clamped)


def _epi_hyp_means(column: np.ndarray, volumes: np.ndarray, tc: int,
                   stratified: bool) -> tuple[float, float]:
    if not stratified:
        mean = float(np.sum(column * volumes) / np.sum(volumes))
        return mean, mean
    k = tc + 1
    epi = float(np.sum(column[:k] * volumes[:k]) / np.sum(volumes[:k]))
    hyp = float(np.sum(column[k:] * volumes[k:]) / np.sum(volumes[k:]))
    return epi, hyp
