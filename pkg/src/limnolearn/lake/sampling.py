"""Random lake populations and synthetic weather forcings."""

from __future__ import annotations

import numpy as np

from .types import LAYER_THICKNESS, DriverSeries, LakeConfig

DAYS_PER_YEAR = 365


def sample_lakes(count: int, seed: int, depth_range=(4.0, 30.0),
                 area_range=(1e4, 1e7)) -> list[LakeConfig]:
    """Draw ``count`` lake configurations, deterministic per seed."""
    if count < 1:
        raise ValueError("sample_lakes: count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lakes = []
    for k in range(count):
        raw_depth = rng.uniform(*depth_range)
        max_depth = max(
            round(raw_depth / LAYER_THICKNESS) * LAYER_THICKNESS,
            round(depth_range[0] / LAYER_THICKNESS) * LAYER_THICKNESS)
        max_depth = min(max_depth,
                        round(depth_range[1] / LAYER_THICKNESS) * LAYER_THICKNESS)
        area = float(np.exp(rng.uniform(np.log(area_range[0]),
                                        np.log(area_range[1]))))
        n = int(round(max_depth / LAYER_THICKNESS))
        shape = rng.uniform(0.3, 1.4)
        frac = 1.0 - (np.arange(n) + 0.5) / n
        hypsography = area * (0.08 + 0.92 * frac ** shape)
        land_use = rng.dirichlet(np.ones(3))
        lakes.append(LakeConfig(
            lake_id=f"lake{k:04d}",
            max_depth=float(max_depth),
            surface_area=area,
            hypsography=hypsography,
            trophic_state=float(rng.uniform(0.0, 1.0)),
            land_use_fractions=land_use,
            latitude_proxy=float(rng.uniform(0.6, 1.2)),
        ))
    return lakes


def _ar1(rng: np.random.Generator, n: int, sigma: float, phi: float) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(n)
    shocks = rng.normal(0.0, sigma * np.sqrt(1.0 - phi * phi), n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + shocks[i]
    return out


STEFAN_BOLTZMANN = 5.670374419e-8


def generate_drivers(lake: LakeConfig, days: int, seed: int,
                     noise_scale: float = 1.0) -> DriverSeries:
    """Seasonal sinusoid plus AR(1) noise per variable.

    Air temperature amplitude scales with the lake's latitude proxy;
    ``noise_scale=0`` yields exact sinusoids.
    """
    if days < 365:
        raise ValueError("generate_drivers: days must be >= 365")
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(seed).spawn(5)]
    t = np.arange(days, dtype=np.float64)
    phase = 2.0 * np.pi * (t - 105.0) / DAYS_PER_YEAR

    air = (11.0 + 14.0 * lake.latitude_proxy * np.sin(phase)
           + _ar1(streams[0], days, 2.2 * noise_scale, 0.7))
    shortwave = np.maximum(
        5.0, 170.0 + 130.0 * np.sin(phase)
        + _ar1(streams[1], days, 25.0 * noise_scale, 0.5))
    cloudiness = np.clip(0.5 + _ar1(streams[2], days, 0.3 * noise_scale, 0.6),
                         0.0, 1.0)
    emissivity = 0.75 + 0.2 * cloudiness
    longwave_in = emissivity * STEFAN_BOLTZMANN * (air + 273.15) ** 4
    wind = np.maximum(
        0.3, 3.4 - 1.2 * np.sin(phase)
        + _ar1(streams[3], days, 1.3 * noise_scale, 0.6))
    rel_humidity = np.clip(
        0.72 + 0.10 * np.cos(phase)
        + _ar1(streams[4], days, 0.08 * noise_scale, 0.6), 0.25, 0.98)

    out = DriverSeries(air_temperature=air, shortwave=shortwave,
                       longwave_in=longwave_in, wind_speed=wind,
                       rel_humidity=rel_humidity)
    out.validate()
    return out
