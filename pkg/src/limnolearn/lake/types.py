"""Domain records for the simulated lake environment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .water import _density_unchecked

LAYER_THICKNESS = 0.5  # m


@dataclass
class LakeConfig:
    """Static descriptors of one synthetic lake."""

    lake_id: str
    max_depth: float                 # m
    surface_area: float              # m^2
    hypsography: np.ndarray          # plan area per layer, m^2, non-increasing
    trophic_state: float             # [0, 1]
    land_use_fractions: np.ndarray   # simplex vector
    latitude_proxy: float            # seasonal-amplitude scalar
    layer_thickness: float = LAYER_THICKNESS

    def __post_init__(self):
        self.hypsography = np.asarray(self.hypsography, dtype=np.float64)
        self.land_use_fractions = np.asarray(self.land_use_fractions,
                                             dtype=np.float64)
        self.validate()

    def validate(self):
        if self.max_depth < 2.0:
            raise ValueError(f"{self.lake_id}: max_depth {self.max_depth} < 2 m")
        n = int(round(self.max_depth / self.layer_thickness))
        if abs(n * self.layer_thickness - self.max_depth) > 1e-9:
            raise ValueError(
                f"{self.lake_id}: max_depth must be a multiple of "
                f"{self.layer_thickness} m")
        if self.hypsography.shape != (n,):
            raise ValueError(
                f"{self.lake_id}: hypsography has {self.hypsography.shape} "
                f"entries, expected {n}")
        if np.any(np.diff(self.hypsography) > 1e-9):
            raise ValueError(f"{self.lake_id}: hypsography must be non-increasing")
        if np.any(self.hypsography <= 0):
            raise ValueError(f"{self.lake_id}: hypsography must be positive")
        if abs(float(self.land_use_fractions.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{self.lake_id}: land_use_fractions must sum to 1")
        if not 0.0 <= self.trophic_state <= 1.0:
            raise ValueError(f"{self.lake_id}: trophic_state outside [0, 1]")

    @property
    def n_layers(self) -> int:
        return self.hypsography.shape[0]

    @property
    def layer_volumes(self) -> np.ndarray:
        return self.hypsography * self.layer_thickness

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.layer_volumes))

    @property
    def layer_depths(self) -> np.ndarray:
        """Mid-depth of each layer, m."""
        n = self.n_layers
        return (np.arange(n) + 0.5) * self.layer_thickness


@dataclass
class DriverSeries:
    """Daily meteorological forcings."""

    air_temperature: np.ndarray   # degC
    shortwave: np.ndarray         # W/m^2
    longwave_in: np.ndarray       # W/m^2
    wind_speed: np.ndarray        # m/s
    rel_humidity: np.ndarray      # [0, 1]

    def __post_init__(self):
        for name in ("air_temperature", "shortwave", "longwave_in",
                     "wind_speed", "rel_humidity"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.n_days
        for name in ("shortwave", "longwave_in", "wind_speed", "rel_humidity"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"driver series: {name} length mismatch")
        if np.any(self.shortwave < 0):
            raise ValueError("driver series: shortwave must be non-negative")
        if np.any((self.rel_humidity < 0) | (self.rel_humidity > 1)):
            raise ValueError("driver series: rel_humidity outside [0, 1]")

    def validate(self):
        """Full-series invariants; windows and file fragments may be shorter."""
        if self.n_days < 365:
            raise ValueError(f"driver series: length {self.n_days} < 365 days")

    @property
    def n_days(self) -> int:
        return self.air_temperature.shape[0]

    def window(self, start: int, length: int) -> "DriverSeries":
        sl = slice(start, start + length)
        out = DriverSeries.__new__(DriverSeries)
        out.air_temperature = self.air_temperature[sl]
        out.shortwave = self.shortwave[sl]
        out.longwave_in = self.longwave_in[sl]
        out.wind_speed = self.wind_speed[sl]
        out.rel_humidity = self.rel_humidity[sl]
        return out


HEAT_TERM_NAMES = ("heat_sw_abs", "heat_lw_in_abs", "heat_lw_out",
                   "heat_latent", "heat_sensible")


@dataclass
class SimTrajectory:
    """Per-day simulated state, pools and flux ledger for one lake.

    Flux entries at day t are the fluxes applied over the step t -> t+1,
    so U[t+1] - U[t] = f_e[t] and the oxygen pools at t+1 follow from the
    pools and fluxes at t.  The last day's fluxes are diagnostic only.
    """

    lake: LakeConfig
    drivers: DriverSeries
    temps: np.ndarray          # (N, D) degC
    stratified: np.ndarray     # (N,) bool
    tc: np.ndarray             # (N,) int, -1 when unstratified
    v_epi: np.ndarray          # (N,) m^3
    v_hyp: np.ndarray          # (N,) m^3
    do_epi: np.ndarray         # (N,) g/m^3
    do_hyp: np.ndarray         # (N,) g/m^3
    do_total: np.ndarray       # (N,) g/m^3
    f_atm: np.ndarray          # (N,) g/m^3/day
    f_nep: np.ndarray          # (N,) g/m^3/day
    f_sed: np.ndarray          # (N,) g/m^3/day
    f_ent_epi: np.ndarray      # (N,) g/m^3/day
    f_ent_hyp: np.ndarray      # (N,) g/m^3/day
    u_t: np.ndarray            # (N,) J
    f_e: np.ndarray            # (N,) J
    heat_terms: np.ndarray     # (N, 5) J, columns per HEAT_TERM_NAMES
    do_clamped: np.ndarray = field(default=None)  # (N,) bool, flux limiting hit

    def __post_init__(self):
        if self.do_clamped is None:
            self.do_clamped = np.zeros(self.n_days, dtype=bool)

    @property
    def n_days(self) -> int:
        return self.temps.shape[0]

    @property
    def densities(self) -> np.ndarray:
        return _density_unchecked(self.temps)

    def epi_hyp_means(self, day: int) -> tuple[float, float]:
        """Volume-weighted epi/hyp mean temperatures for one day.

        Unstratified days return the whole-column mean for both.
        """
        v = self.lake.layer_volumes
        t = self.temps[day]
        if not self.stratified[day]:
            mean = float(np.sum(t * v) / np.sum(v))
            return mean, mean
        k = int(self.tc[day]) + 1
        epi = float(np.sum(t[:k] * v[:k]) / np.sum(v[:k]))
        hyp = float(np.sum(t[k:] * v[k:]) / np.sum(v[k:]))
        return epi, hyp
