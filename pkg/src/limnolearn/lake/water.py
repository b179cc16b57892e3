"""Water property closures shared by the simulator and the loss code.

Density uses the standard fresh-water polynomial (maximum near 3.98 degC,
strictly decreasing above ~4.5 degC).  Heat bookkeeping works in terms of
the volumetric heat u(T) = rho(T) * c_w * T [J/m^3], which is strictly
increasing on the valid temperature range and therefore invertible; the
column model advances energies and recovers temperatures through
``temperature_from_heat`` so that every redistribution conserves energy
to rounding.
"""

from __future__ import annotations

import numpy as np

SPECIFIC_HEAT = 4186.0          # J/(kg K)
T_MIN, T_MAX = -1.0, 45.0       # validity range of the density polynomial

# rho(T) = sum(DENSITY_COEFFS[k] * T^k), lowest order first
DENSITY_COEFFS = (
    999.842594,
    6.793952e-2,
    -9.095290e-3,
    1.001685e-4,
    -1.120083e-6,
    6.536336e-9,
)


def density(temperature):
    """Fresh-water density [kg/m^3] for temperatures in [-1, 45] degC."""
    t = np.asarray(temperature, dtype=np.float64)
    if np.any(t < T_MIN) or np.any(t > T_MAX):
        raise ValueError(
            f"density: temperature outside [{T_MIN}, {T_MAX}] degC")
    return _density_unchecked(t)


def _density_unchecked(t):
    c0, c1, c2, c3, c4, c5 = DENSITY_COEFFS
    return ((((c5 * t + c4) * t + c3) * t + c2) * t + c1) * t + c0


def _density_derivative(t):
    c0, c1, c2, c3, c4, c5 = DENSITY_COEFFS
    return (((5.0 * c5 * t + 4.0 * c4) * t + 3.0 * c3) * t + 2.0 * c2) * t + c1


def volumetric_heat(temperature):
    """u(T) = rho(T) * c_w * T [J/m^3]."""
    t = np.asarray(temperature, dtype=np.float64)
    return _density_unchecked(t) * SPECIFIC_HEAT * t


def _volumetric_heat_derivative(t):
    return SPECIFIC_HEAT * (_density_unchecked(t) + _density_derivative(t) * t)


def temperature_from_heat(heat, guess=None):
    """Invert u(T) = heat by safeguarded Newton iteration (vectorized).

    ``heat`` is volumetric heat [J/m^3]; the result satisfies
    |u(T) - heat| <= 1e-12 * max(|heat|, u(1 degC)).
    """
    u = np.asarray(heat, dtype=np.float64)
    scalar = u.ndim == 0
    u = np.atleast_1d(u).astype(np.float64)
    lo = np.full_like(u, T_MIN)
    hi = np.full_like(u, T_MAX)
    if np.any(u < volumetric_heat(T_MIN)) or np.any(u > volumetric_heat(T_MAX)):
        raise ValueError("temperature_from_heat: heat outside invertible range")
    if guess is None:
        t = u / (999.8 * SPECIFIC_HEAT)
    else:
        t = np.array(np.broadcast_to(guess, u.shape), dtype=np.float64)
    np.clip(t, T_MIN, T_MAX, out=t)
    tol = 1e-12 * np.maximum(np.abs(u), 4.2e6)
    for _ in range(80):
        f = volumetric_heat(t) - u
        done = np.abs(f) <= tol
        if done.all():
            break
        lo = np.where((f < 0) & ~done, np.maximum(lo, t), lo)
        hi = np.where((f > 0) & ~done, np.minimum(hi, t), hi)
        step = f / _volumetric_heat_derivative(t)
        t_new = t - step
        bad = (t_new <= lo) | (t_new >= hi)
        t_new = np.where(bad & ~done, 0.5 * (lo + hi), t_new)
        t = np.where(done, t, t_new)
    else:
        raise FloatingPointError("temperature_from_heat: no convergence")
    return float(t[0]) if scalar else t


def temperature_from_heat_fast(u: np.ndarray, guess: np.ndarray) -> np.ndarray:
    """Warm-started Newton inversion without safeguards.

    Intended for small updates of an already-converged profile; falls
    back to the robust path when the fixed iteration count is not enough.
    """
    t = guess
    for _ in range(3):
        t = t - (volumetric_heat(t) - u) / _volumetric_heat_derivative(t)
    if np.all(np.abs(volumetric_heat(t) - u)
              <= 1e-12 * np.maximum(np.abs(u), 4.2e6)):
        return t
    return temperature_from_heat(u, guess=guess)


def heat_to_temperature_scalar(u: float, guess: float) -> float:
    """Scalar fast path of ``temperature_from_heat`` (plain float Newton)."""
    c0, c1, c2, c3, c4, c5 = DENSITY_COEFFS
    t = min(max(guess, T_MIN), T_MAX)
    tol = 1e-12 * max(abs(u), 4.2e6)
    lo, hi = T_MIN, T_MAX
    for _ in range(80):
        rho = ((((c5 * t + c4) * t + c3) * t + c2) * t + c1) * t + c0
        f = rho * SPECIFIC_HEAT * t - u
        if abs(f) <= tol:
            return t
        if f < 0.0:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
        drho = (((5.0 * c5 * t + 4.0 * c4) * t + 3.0 * c3) * t
                + 2.0 * c2) * t + c1
        t_new = t - f / (SPECIFIC_HEAT * (rho + drho * t))
        t = t_new if lo < t_new < hi else 0.5 * (lo + hi)
    raise FloatingPointError("heat_to_temperature_scalar: no convergence")


def total_heat(temperatures, volumes) -> float:
    """Column thermal energy U = sum_d rho(T_d) c_w V_d T_d [J]."""
    t = np.asarray(temperatures, dtype=np.float64)
    v = np.asarray(volumes, dtype=np.float64)
    return float(np.sum(volumetric_heat(t) * v))


# Dissolved-oxygen saturation [g/m^3]; strictly decreasing on [0, 45] degC.
DO_SAT_COEFFS = (14.652, -0.41022, 7.9910e-3, -7.7774e-5)


def do_saturation(temperature):
    t = np.asarray(temperature, dtype=np.float64)
    out = np.full_like(t, DO_SAT_COEFFS[3])
    for c in DO_SAT_COEFFS[2::-1]:
        out = out * t + c
    return out if out.ndim else float(out)
