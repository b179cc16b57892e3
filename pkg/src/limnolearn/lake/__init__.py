"""Synthetic lake environment: thermal column, oxygen budget, datasets."""

from .types import DriverSeries, LakeConfig, SimTrajectory
from .water import (SPECIFIC_HEAT, density, do_saturation, temperature_from_heat,
                    total_heat, volumetric_heat)
from .sampling import generate_drivers, sample_lakes
from .thermal import classify_stratification, step_thermal
from .oxygen import step_do
from .simulate import SimParams, simulate
from .dataset import export_dataset, import_dataset

__all__ = [
    "DriverSeries", "LakeConfig", "SimTrajectory", "SPECIFIC_HEAT",
    "density", "do_saturation", "temperature_from_heat", "total_heat",
    "volumetric_heat", "generate_drivers", "sample_lakes",
    "classify_stratification", "step_thermal", "step_do", "SimParams",
    "simulate", "export_dataset", "import_dataset",
]
