"""Closure constants for the column model, perturbable for a truth variant."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np


@dataclass(frozen=True)
class SimParams:
    """All tunable closure constants of the thermal and oxygen models."""

    # surface heat budget
    alpha_sw: float = 0.07          # short-wave albedo
    alpha_lw: float = 0.03          # long-wave albedo
    emissivity: float = 0.97        # back-radiation emissivity
    c_latent: float = 1.5e-3        # bulk transfer coefficient, evaporation
    c_sensible: float = 1.4e-3      # bulk transfer coefficient, sensible heat
    # vertical mixing
    kappa_background: float = 1.5e-7   # m^2/s
    kappa_wind: float = 4.0e-6         # m^2/s per (m/s) of wind
    kappa_decay: float = 5.0           # e-folding depth of wind diffusivity, m
    wind_mix_base: float = 2.0         # m, mixed-layer depth at zero wind
    wind_mix_coeff: float = 0.5       # m per (m/s)^1.5
    substeps: int = 6
    t_floor: float = 0.1            # degC, surface bound after forcing
    t_ceil: float = 40.0
    # oxygen budget
    piston_base: float = 0.35       # m/day
    piston_wind: float = 0.23       # m/day per (m/s)
    nep_production: float = 0.9     # g/m^3/day at reference light, trophic=1
    nep_respiration: float = 0.35   # g/m^3/day at 20 degC, trophic=1
    nep_theta: float = 1.06
    sw_reference: float = 200.0     # W/m^2
    sed_areal: float = 0.8          # g/m^2/day at 20 degC, trophic=1
    sed_theta: float = 1.08

    def perturbed(self, seed: int, scale: float = 0.15) -> "SimParams":
        """Multiply the empirical closures by deterministic random factors.

        Used to build the truth-variant simulator whose behaviour differs
        from the pretraining world the way a real lake differs from a
        calibrated process model.
        """
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
        tweakable = ("c_latent", "c_sensible", "kappa_wind", "wind_mix_coeff",
                     "piston_base", "piston_wind", "nep_production",
                     "nep_respiration", "sed_areal")
        changes = {}
        for name in tweakable:
            factor = 1.0 + rng.uniform(-scale, scale)
            changes[name] = getattr(self, name) * factor
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
