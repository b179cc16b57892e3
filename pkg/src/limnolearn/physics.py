"""Conservation-law penalties and physical-inconsistency metrics.

The energy loss penalizes day-to-day changes of predicted column energy
that disagree with the recorded net surface flux beyond a tolerance; the
oxygen loss penalizes predicted pool concentrations that disagree with
the volume-ratio / entrainment bookkeeping.  Budgets (flux terms, layer
volumes, regime flags) come from the simulator's ledger, never
re-derived here, so the simulator's own trajectories score exactly zero.

Losses accept either plain arrays or tape tensors for the predictions;
tensors make them differentiable training penalties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lake.oxygen import epi_hyp_volumes
from .lake.types import SimTrajectory
from .lake.water import DENSITY_COEFFS, SPECIFIC_HEAT
from .tensor import Tensor


@dataclass
class EnergyBudget:
    """Per-day heat ledger for one lake window.

    ``u_ref`` is the ledger's own column energy, used only to express
    conservation residuals in relative units: a column holding ~1e15 J
    cannot meet any absolute tolerance float64 roundoff does not already
    break, so the loss works with |dU - F_E| / max(|u_ref|, 1).
    """

    heat_terms: np.ndarray    # (N, 5) J: sw_abs, lw_in_abs, lw_out, E, H
    f_e: np.ndarray           # (N,) J
    u_ref: np.ndarray         # (N,) J
    layer_volumes: np.ndarray  # (D,) m^3

    def __post_init__(self):
        signed = (self.heat_terms[:, 0] + self.heat_terms[:, 1]
                  - self.heat_terms[:, 2] - self.heat_terms[:, 3]
                  - self.heat_terms[:, 4])
        scale = np.maximum(np.abs(self.f_e), 1.0)
        if np.any(np.abs(signed - self.f_e) > 1e-12 * scale):
            raise ValueError(
                "energy budget: f_e does not equal the signed term sum")

    @property
    def residual_scale(self) -> np.ndarray:
        return np.maximum(np.abs(self.u_ref), 1.0)

    def default_tolerance(self, fraction: float = 0.005) -> float:
        """``fraction`` of the mean daily |F_E|, in relative units."""
        return float(fraction * np.mean(np.abs(self.f_e)
                                        / self.residual_scale))

    @classmethod
    def from_trajectory(cls, traj: SimTrajectory, start: int = 0,
                        stop: int | None = None) -> "EnergyBudget":
        sl = slice(start, stop)
        return cls(heat_terms=traj.heat_terms[sl], f_e=traj.f_e[sl],
                   u_ref=traj.u_t[sl], layer_volumes=traj.lake.layer_volumes)


@dataclass
class MassBudget:
    """Per-day oxygen ledger for one lake window (dt = 1 day)."""

    f_exo_epi: np.ndarray   # (N,) g/m^3/day, stratified days
    f_exo_hyp: np.ndarray   # (N,)
    f_exo_total: np.ndarray  # (N,) mixed days
    v_epi: np.ndarray       # (N,) m^3
    v_hyp: np.ndarray       # (N,)
    tc: np.ndarray          # (N,) int, -1 when unstratified
    stratified: np.ndarray  # (N,) bool
    layer_volumes: np.ndarray

    def __post_init__(self):
        strat = self.stratified.astype(bool)
        if np.any(self.v_epi[strat] <= 0) or np.any(self.v_hyp[strat] <= 0):
            raise ValueError("mass budget: volumes must be positive when "
                             "stratified")

    @classmethod
    def from_trajectory(cls, traj: SimTrajectory, start: int = 0,
                        stop: int | None = None) -> "MassBudget":
        sl = slice(start, stop)
        return cls(
            f_exo_epi=(traj.f_atm + traj.f_nep)[sl],
            f_exo_hyp=traj.f_sed[sl],
            f_exo_total=(traj.f_atm + traj.f_nep + traj.f_sed)[sl],
            v_epi=traj.v_epi[sl], v_hyp=traj.v_hyp[sl], tc=traj.tc[sl],
            stratified=traj.stratified[sl],
            layer_volumes=traj.lake.layer_volumes)


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _scalar(x) -> float:
    return x.item() if _is_tensor(x) else float(x)


def total_energy(layer_temps, volumes):
    """U = sum_d rho(T_d) c_w V_d T_d over the trailing layer axis.

    ``layer_temps`` may be (D,) or (N, D); tensors stay differentiable.
    The density polynomial is evaluated without its domain guard so that
    wild early-training predictions produce gradients instead of errors.
    """
    volumes = np.asarray(volumes, dtype=np.float64)
    if np.any(volumes < 0):
        raise ValueError("total_energy: negative layer volume")
    if _is_tensor(layer_temps):
        if layer_temps.values.shape[-1] != volumes.shape[0]:
            raise ValueError("total_energy: layer count does not match volumes")
        rho = T.polyval(list(reversed(DENSITY_COEFFS)), layer_temps)
        per_layer = T.multiply(T.multiply(rho, layer_temps),
                               T.constant(volumes * SPECIFIC_HEAT))
        return T.reduce_sum(per_layer, axis=-1)
    temps = np.asarray(layer_temps, dtype=np.float64)
    if temps.shape[-1] != volumes.shape[0]:
        raise ValueError("total_energy: layer count does not match volumes")
    rho = np.polyval(list(reversed(DENSITY_COEFFS)), temps)
    return np.sum(rho * temps * (volumes * SPECIFIC_HEAT), axis=-1)


def energy_conservation_loss(pred_temps, budget: EnergyBudget,
                             tolerance: float):
    """sum_t relu(|U_{t+1} - U_t - F_E(t)| / scale_t - tolerance).

    ``pred_temps`` is (N, D) predicted layer temperatures; scale_t is
    max(|u_ref_t|, 1) so residuals and the tolerance are relative to the
    column's energy content.  Returns (loss, residuals).
    """
    if tolerance < 0:
        raise ValueError("energy loss: tolerance must be >= 0")
    n = pred_temps.values.shape[0] if _is_tensor(pred_temps) \
        else np.asarray(pred_temps).shape[0]
    if n < 2:
        raise ValueError("energy loss: need at least 2 days")
    if budget.f_e.shape[0] < n - 1:
        raise ValueError("energy loss: budget shorter than predictions")
    f_e = budget.f_e[:n - 1]
    inv_scale = 1.0 / budget.residual_scale[:n - 1]
    u = total_energy(pred_temps, budget.layer_volumes)
    if _is_tensor(pred_temps):
        du = T.subtract(T.gather(u, np.arange(1, n)),
                        T.gather(u, np.arange(n - 1)))
        resid = T.multiply(T.absolute(T.subtract(du, T.constant(f_e))),
                           T.constant(inv_scale))
        loss = T.reduce_sum(T.relu(T.subtract(resid, T.constant(tolerance))))
        return loss, resid.values.copy()
    du = u[1:] - u[:-1]
    resid = np.abs(du - f_e) * inv_scale
    return float(np.sum(np.maximum(resid - tolerance, 0.0))), resid


def do_update_mixed(do_prev, f_exo, dt: float = 1.0):
    """Mixed-season pool update: DO + F_EXO * dt."""
    if dt <= 0:
        raise ValueError("do_update_mixed: dt must be positive")
    if _is_tensor(do_prev):
        return T.add(do_prev, T.constant(np.asarray(f_exo) * dt))
    return do_prev + f_exo * dt


def do_update_stratified(do_epi_prev, do_hyp_prev, f_exo_epi, f_exo_hyp,
                         v_epi_prev, v_epi_next, v_hyp_prev, v_hyp_next,
                         f_ent_epi, f_ent_hyp, dt: float = 1.0):
    """Volume-ratio update for both layers.

    do_tilde = (do_prev + f_exo * dt) * (v_prev / v_next) + f_ent
    """
    for v in (v_epi_prev, v_epi_next, v_hyp_prev, v_hyp_next):
        if v <= 0:
            raise ValueError("do_update_stratified: volumes must be positive")
    if _is_tensor(do_epi_prev):
        epi = T.add(T.multiply(T.add(do_epi_prev,
                                     T.constant(f_exo_epi * dt)),
                               T.constant(v_epi_prev / v_epi_next)), f_ent_epi)
        hyp = T.add(T.multiply(T.add(do_hyp_prev,
                                     T.constant(f_exo_hyp * dt)),
                               T.constant(v_hyp_prev / v_hyp_next)), f_ent_hyp)
        return epi, hyp
    epi = (do_epi_prev + f_exo_epi * dt) * (v_epi_prev / v_epi_next) + f_ent_epi
    hyp = (do_hyp_prev + f_exo_hyp * dt) * (v_hyp_prev / v_hyp_next) + f_ent_hyp
    return epi, hyp


def entrainment_flux(donor_epi, donor_hyp, tc_prev: int, tc_next: int,
                     layer_volumes: np.ndarray):
    """Per-layer concentration increments from thermocline displacement.

    ``donor_epi``/``donor_hyp`` are the predicted layer concentrations
    after the exogenous update (the donor layer's water carries that
    concentration).  Mirrors the simulator's bookkeeping exactly; works
    on floats or tensors.
    """
    if tc_prev < 0 or tc_next < 0:
        raise ValueError("entrainment_flux: both days must be stratified")
    tensor_mode = _is_tensor(donor_epi)
    zero = T.constant(0.0) if tensor_mode else 0.0
    if tc_next == tc_prev:
        return zero, zero
    v_epi_prev, v_hyp_prev = epi_hyp_volumes(layer_volumes, tc_prev)
    v_epi_next, v_hyp_next = epi_hyp_volumes(layer_volumes, tc_next)
    if tc_next > tc_prev:
        dv = v_epi_next - v_epi_prev
        if tensor_mode:
            moved = T.multiply(T.constant(dv), donor_hyp)
            return (T.multiply(moved, T.constant(1.0 / v_epi_next)),
                    T.multiply(moved, T.constant(-1.0 / v_hyp_next)))
        moved = dv * donor_hyp
        return moved / v_epi_next, -moved / v_hyp_next
    dv = v_hyp_next - v_hyp_prev
    if tensor_mode:
        moved = T.multiply(T.constant(dv), donor_epi)
        return (T.multiply(moved, T.constant(-1.0 / v_epi_next)),
                T.multiply(moved, T.constant(1.0 / v_hyp_next)))
    moved = dv * donor_epi
    return -moved / v_epi_next, moved / v_hyp_next


def _mass_targets(pred, budget: MassBudget, dt: float = 1.0):
    """Per valid day pair: (index of day t, predicted-vs-target pairs).

    Returns a list of (t, kind, target expr, prediction expr) covering
    stratified pairs (epi and hyp rows) and mixed pairs (total row);
    regime-transition pairs are skipped.
    """
    tensor_mode = _is_tensor(pred)
    n = pred.values.shape[0] if tensor_mode else np.asarray(pred).shape[0]
    if budget.stratified.shape[0] < n:
        raise ValueError("mass loss: budget shorter than predictions")

    def cell(t, col):
        if tensor_mode:
            return T.gather(T.reshape(pred, (n * 3,)), [t * 3 + col])
        return pred[t, col]

    rows = []
    for t in range(1, n):
        s_prev = bool(budget.stratified[t - 1])
        s_next = bool(budget.stratified[t])
        if s_prev != s_next:
            continue
        if s_prev:
            donor_epi = do_update_mixed(cell(t - 1, 0),
                                        budget.f_exo_epi[t - 1], dt)
            donor_hyp = do_update_mixed(cell(t - 1, 1),
                                        budget.f_exo_hyp[t - 1], dt)
            f_ent_epi, f_ent_hyp = entrainment_flux(
                donor_epi, donor_hyp, int(budget.tc[t - 1]),
                int(budget.tc[t]), budget.layer_volumes)
            tilde_epi, tilde_hyp = do_update_stratified(
                cell(t - 1, 0), cell(t - 1, 1),
                budget.f_exo_epi[t - 1], budget.f_exo_hyp[t - 1],
                budget.v_epi[t - 1], budget.v_epi[t],
                budget.v_hyp[t - 1], budget.v_hyp[t],
                f_ent_epi, f_ent_hyp, dt)
            rows.append((t, "epi", tilde_epi, cell(t, 0)))
            rows.append((t, "hyp", tilde_hyp, cell(t, 1)))
        else:
            tilde = do_update_mixed(cell(t - 1, 2),
                                    budget.f_exo_total[t - 1], dt)
            rows.append((t, "total", tilde, cell(t, 2)))
    return rows


def mass_conservation_loss(pred_do, budget: MassBudget, tolerance: float,
                           dt: float = 1.0):
    """sum over valid day pairs of relu(|DO_hat - DO_tilde| - tolerance).

    ``pred_do`` is (N, 3) predicted concentrations (epi, hyp, total).
    Returns (loss, residuals) with residuals as plain floats per row.
    """
    if tolerance < 0:
        raise ValueError("mass loss: tolerance must be >= 0")
    rows = _mass_targets(pred_do, budget, dt)
    residuals = []
    if _is_tensor(pred_do):
        if not rows:
            return T.constant(0.0), np.zeros(0)
        diffs = T.concatenate([T.subtract(pred_cell, tilde)
                               for _, _, tilde, pred_cell in rows])
        resid = T.absolute(diffs)
        loss = T.reduce_sum(T.relu(T.subtract(resid, T.constant(tolerance))))
        return loss, resid.values.copy()
    for _, _, tilde, pred_cell in rows:
        residuals.append(abs(pred_cell - tilde))
    residuals = np.asarray(residuals)
    return float(np.sum(np.maximum(residuals - tolerance, 0.0))), residuals


def inconsistency_metrics(pred_temps, pred_do, energy_budget: EnergyBudget,
                          mass_budget: MassBudget) -> dict:
    """Zero-tolerance diagnostics of Fig-style physical consistency.

    energy: mean |dU - F_E| normalized by the mean |U|; mass: mean
    |DO_hat - DO_tilde| in g/m^3.  Either prediction may be None.
    """
    out = {}
    if pred_temps is not None:
        values = np.asarray(pred_temps.values if _is_tensor(pred_temps)
                            else pred_temps)
        u = total_energy(values, energy_budget.layer_volumes)
        raw = np.abs(u[1:] - u[:-1] - energy_budget.f_e[:len(u) - 1])
        out["energy_inconsistency"] = float(np.mean(raw)
                                            / max(np.mean(np.abs(u)), 1.0))
    if pred_do is not None:
        values = pred_do.values if _is_tensor(pred_do) else pred_do
        _, resid = mass_conservation_loss(np.asarray(values), mass_budget, 0.0)
        out["mass_inconsistency"] = float(np.mean(resid)) if resid.size \
            else 0.0
    return out
