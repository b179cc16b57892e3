"""Per-task fine-tuning on sparse noisy observations.

The total objective is L_FT = L_ML + lambda_phy * L_PHY: a masked MSE
over the observed cells plus the conservation penalty over every day of
each training window.  Temperature fine-tunes first (energy penalty);
the oxygen task then consumes the fine-tuned temperature predictions in
its input slots (mass penalty).  Operations and the pruning pattern stay
frozen; weights and the surviving relevance magnitudes train by Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import TEMP_SLOTS, build_fields, layer_index
from .lake.types import SimTrajectory
from .model import (OXYGEN_TASK, TEMPERATURE_TASK, ModelGenome, forward_batch)
from .optim import Adam
from .physics import (EnergyBudget, MassBudget, energy_conservation_loss,
                      inconsistency_metrics, mass_conservation_loss)


@dataclass
class ObservationSet:
    """Sparse observations for one task over a set of lakes.

    ``values``/``mask`` have one row per day of the source trajectory;
    unobserved cells carry mask 0.  Temperature columns are layers,
    oxygen columns are (epi, hyp, total).
    """

    task: str
    values: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]
    fraction: float
    noise_sd: float

    def count(self) -> int:
        return int(sum(m.sum() for m in self.mask.values()))


def generate_observations(truth: dict[str, SimTrajectory], task: str,
                          fraction: float, noise_sd: float,
                          seed: int) -> ObservationSet:
    """Sample observation days from the truth trajectories.

    A sampled day yields a full depth profile (temperature) or the
    regime's pools (oxygen), plus measurement noise.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("observation fraction must lie in (0, 1]")
    values: dict[str, np.ndarray] = {}
    mask: dict[str, np.ndarray] = {}
    for lake_id in sorted(truth):
        traj = truth[lake_id]
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, hash(lake_id) & 0xFFFF, 0x0B5)))
        n = traj.n_days
        n_obs = max(1, int(round(fraction * n)))
        days = np.sort(rng.choice(n, size=n_obs, replace=False))
        if task == TEMPERATURE_TASK:
            vals = np.zeros((n, traj.temps.shape[1]))
            msk = np.zeros_like(vals)
            vals[days] = traj.temps[days] + rng.normal(
                0.0, noise_sd, (n_obs, traj.temps.shape[1]))
            msk[days] = 1.0
        elif task == OXYGEN_TASK:
            vals = np.zeros((n, 3))
            msk = np.zeros((n, 3))
            noise = rng.normal(0.0, noise_sd, (n_obs, 3))
            for row, day in enumerate(days):
                if traj.stratified[day]:
                    vals[day, 0] = traj.do_epi[day] + noise[row, 0]
                    vals[day, 1] = traj.do_hyp[day] + noise[row, 1]
                    msk[day, 0] = msk[day, 1] = 1.0
                else:
                    vals[day, 2] = traj.do_total[day] + noise[row, 2]
                    msk[day, 2] = 1.0
        else:
            raise ValueError(f"unknown task {task!r}")
        values[lake_id] = vals
        mask[lake_id] = msk
    return ObservationSet(task=task, values=values, mask=mask,
                          fraction=fraction, noise_sd=noise_sd)


def masked_ml_loss(predictions, observed_values: np.ndarray,
                   observed_mask: np.ndarray):
    """MSE over observed cells only; unobserved cells contribute nothing."""
    if float(np.sum(observed_mask)) <= 0:
        raise ValueError("masked_ml_loss: empty observation set")
    return T.mse(predictions, observed_values, weights=observed_mask)


@dataclass
class FinetuneConfig:
    lambda_phy: float = 0.1
    tau_ec_fraction: float = 0.005   # energy tolerance, fraction of mean |F_E|
    tau_mc: float = 0.1              # g/m^3
    epochs: int = 4
    learning_rate: float = 2e-3
    window: int = 60
    window_stride: int = 30
    freeze_structure: bool = True
    per_lake: bool = False

    def __post_init__(self):
        if self.lambda_phy < 0:
            raise ValueError("lambda_phy must be >= 0")


@dataclass
class LakeFinetuneInputs:
    """Precomputed per-lake arrays for one fine-tuning task."""

    lake_id: str
    truth: SimTrajectory
    temp_fields: np.ndarray      # (N, m), slot 0 overwritten per depth
    do_fields: np.ndarray        # (N, m)
    energy_budget: EnergyBudget
    mass_budget: MassBudget


def build_lake_inputs(truth: SimTrajectory,
                      features: SimTrajectory) -> LakeFinetuneInputs:
    """Budgets come from the truth ledger, temperature features from the
    process model re-run on the same drivers."""
    return LakeFinetuneInputs(
        lake_id=truth.lake.lake_id,
        truth=truth,
        temp_fields=build_fields(truth, features, TEMPERATURE_TASK, depth=0.0),
        do_fields=build_fields(truth, features, OXYGEN_TASK),
        energy_budget=EnergyBudget.from_trajectory(truth),
        mass_budget=MassBudget.from_trajectory(truth),
    )


def predict_temperature(model: ModelGenome, inputs: LakeFinetuneInputs,
                        start: int, length: int) -> T.Tensor:
    """(L, D) layer-temperature predictions for one window."""
    lake = inputs.truth.lake
    depths = lake.layer_depths
    fields = np.repeat(inputs.temp_fields[start:start + length][None],
                       len(depths), axis=0)
    fields[:, :, 0] = depths[:, None]
    preds = forward_batch(model, fields, TEMPERATURE_TASK)
    return T.reshape(preds, (length, len(depths)))


def predict_oxygen(model: ModelGenome, inputs: LakeFinetuneInputs, start: int,
                   length: int,
                   temp_override: np.ndarray | None = None) -> T.Tensor:
    """(L, 3) oxygen predictions; ``temp_override`` is an optional (L, D)
    temperature matrix substituted into the temperature input slots."""
    fields = inputs.do_fields[start:start + length].copy()
    if temp_override is not None:
        fields[:, list(TEMP_SLOTS)] = temperature_aggregates(
            temp_override, inputs.truth, start)
    return T.reshape(forward_batch(model, fields[None], OXYGEN_TASK),
                     (length, 3))


def temperature_aggregates(temps: np.ndarray, truth: SimTrajectory,
                           start: int) -> np.ndarray:
    """(L, 3) surface / epi-mean / hyp-mean summaries of a layer matrix,
    using the ledger's thermocline partition."""
    length = temps.shape[0]
    volumes = truth.lake.layer_volumes
    total = volumes.sum()
    out = np.empty((length, 3))
    for i in range(length):
        day = start + i
        row = temps[i]
        out[i, 0] = row[0]
        if truth.stratified[day]:
            k = int(truth.tc[day]) + 1
            v_epi = volumes[:k].sum()
            out[i, 1] = np.sum(row[:k] * volumes[:k]) / v_epi
            out[i, 2] = np.sum(row[k:] * volumes[k:]) / (total - v_epi)
        else:
            mean = float(np.sum(row * volumes) / total)
            out[i, 1] = out[i, 2] = mean
    return out


def build_do_inputs(inputs: LakeFinetuneInputs,
                    temp_model: ModelGenome | None) -> np.ndarray:
    """Oxygen input fields for a whole lake, with the fine-tuned
    temperature model's predictions substituted into the simulated-
    temperature slots (``temp_model=None`` keeps the simulator values)."""
    fields = inputs.do_fields.copy()
    if temp_model is None:
        return fields
    n = fields.shape[0]
    preds = predict_full_temperature(temp_model, inputs)
    fields[:, list(TEMP_SLOTS)] = temperature_aggregates(preds, inputs.truth, 0)
    if not np.all(np.isfinite(fields)):
        raise ValueError("build_do_inputs: non-finite temperature coverage")
    return fields


def predict_full_temperature(model: ModelGenome,
                             inputs: LakeFinetuneInputs,
                             window: int = 60) -> np.ndarray:
    """Stitch non-overlapping windows into an (N, D) prediction matrix."""
    n = inputs.truth.n_days
    out = np.empty((n, inputs.truth.lake.n_layers))
    filled = 0
    with T.no_tape():
        while filled < n:
            start = min(filled, n - window)
            preds = predict_temperature(model, inputs, start, window)
            out[filled:start + window] = preds.values[filled - start:]
            filled = start + window
    return out


def predict_full_oxygen(model: ModelGenome, fields: np.ndarray,
                        window: int = 60) -> np.ndarray:
    n = fields.shape[0]
    out = np.empty((n, 3))
    filled = 0
    with T.no_tape():
        while filled < n:
            start = min(filled, n - window)
            preds = forward_batch(model, fields[None, start:start + window],
                                  OXYGEN_TASK)
            vals = preds.values.reshape(window, 3)
            out[filled:start + window] = vals[filled - start:]
            filled = start + window
    return out


@dataclass
class FinetuneTrace:
    steps: list[dict] = field(default_factory=list)

    def log(self, step: int, ml: float, phy: float, lambda_phy: float):
        self.steps.append({"step": step, "loss_ml": ml, "loss_phy": phy,
                           "loss_total": ml + lambda_phy * phy})


class _StructureFrozenAdam:
    """Adam over weights plus relevance magnitudes with pinned zeros."""

    def __init__(self, model: ModelGenome, lr: float):
        self.model = model
        self.adam = Adam(model.all_parameters(), lr=lr)
        self.alpha_zero = model.alpha.values == 0.0
        self.beta_zero = model.beta.values == 0.0

    def step(self):
        self.adam.step()
        self.model.alpha.values[self.alpha_zero] = 0.0
        self.model.beta.values[self.beta_zero] = 0.0
        self.model.genome.alpha = self.model.alpha.values.reshape(-1).copy()
        self.model.genome.beta = self.model.beta.values.reshape(-1).copy()


def _window_starts(n_days: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, max(n_days - window, 0) + 1, stride))
    if starts and starts[-1] != n_days - window:
        starts.append(n_days - window)
    return starts or [0]


def finetune_task(model: ModelGenome, task: str,
                  lakes: list[LakeFinetuneInputs], obs: ObservationSet,
                  config: FinetuneConfig, seed: int,
                  temp_model: ModelGenome | None = None):
    """Fine-tune one task; returns (fine-tuned model, trace).

    For the oxygen task, ``temp_model`` switches the temperature input
    slots to that model's predictions (the coupled configuration).
    """
    if obs.task != task:
        raise ValueError("observation set task does not match")
    if obs.count() == 0:
        raise ValueError("finetune_task: empty observation set")
    out = model.clone()
    out.stats = model.stats
    opt = _StructureFrozenAdam(out, config.learning_rate)
    trace = FinetuneTrace()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF17E)))

    do_fields = {}
    if task == OXYGEN_TASK:
        for lake in lakes:
            do_fields[lake.lake_id] = build_do_inputs(lake, temp_model)

    jobs = []
    for li, lake in enumerate(lakes):
        for start in _window_starts(lake.truth.n_days, config.window,
                                    config.window_stride):
            jobs.append((li, start))
    step = 0
    for _ in range(config.epochs):
        for li, start in [jobs[k] for k in rng.permutation(len(jobs))]:
            lake = lakes[li]
            sl = slice(start, start + config.window)
            T.clear_tape()
            if task == TEMPERATURE_TASK:
                preds = predict_temperature(out, lake, start, config.window)
                tau = lake.energy_budget.default_tolerance(
                    config.tau_ec_fraction)
                phy, _ = energy_conservation_loss(
                    preds, _window_energy(lake.energy_budget, start,
                                          config.window), tau)
            else:
                fields = do_fields[lake.lake_id][sl]
                preds = T.reshape(
                    forward_batch(out, fields[None], OXYGEN_TASK),
                    (config.window, 3))
                phy, _ = mass_conservation_loss(
                    preds, _window_mass(lake.mass_budget, start,
                                        config.window), config.tau_mc)
            mask = obs.mask[lake.lake_id][sl]
            if mask.sum() > 0:
                ml = masked_ml_loss(preds, obs.values[lake.lake_id][sl], mask)
            else:
                ml = T.constant(0.0)
            loss = T.add(ml, T.multiply(T.constant(config.lambda_phy), phy))
            T.backward(loss)
            opt.step()
            trace.log(step, ml.item(), phy.item(), config.lambda_phy)
            step += 1
    T.clear_tape()
    return out, trace


def _window_energy(budget: EnergyBudget, start: int, length: int):
    sl = slice(start, start + length)
    return EnergyBudget(heat_terms=budget.heat_terms[sl], f_e=budget.f_e[sl],
                        u_ref=budget.u_ref[sl],
                        layer_volumes=budget.layer_volumes)


def _window_mass(budget: MassBudget, start: int, length: int):
    sl = slice(start, start + length)
    return MassBudget(f_exo_epi=budget.f_exo_epi[sl],
                      f_exo_hyp=budget.f_exo_hyp[sl],
                      f_exo_total=budget.f_exo_total[sl],
                      v_epi=budget.v_epi[sl], v_hyp=budget.v_hyp[sl],
                      tc=budget.tc[sl], stratified=budget.stratified[sl],
                      layer_volumes=budget.layer_volumes)


def seasonal_squared_errors(truth: SimTrajectory,
                            temp_preds: np.ndarray | None,
                            do_preds: np.ndarray | None) -> dict:
    """Squared errors routed into season buckets.

    Every observable cell lands in exactly one bucket: temperature cells
    split by the day's regime; oxygen epi/hyp count on stratified days
    and the total pool on mixed days.
    """
    strat = truth.stratified
    out = {}
    if temp_preds is not None:
        err = (temp_preds - truth.temps) ** 2
        out["temperature_stratified"] = err[strat].ravel()
        out["temperature_mixed"] = err[~strat].ravel()
    if do_preds is not None:
        out["do_epi"] = (do_preds[strat, 0] - truth.do_epi[strat]) ** 2
        out["do_hyp"] = (do_preds[strat, 1] - truth.do_hyp[strat]) ** 2
        out["do_total"] = (do_preds[~strat, 2] - truth.do_total[~strat]) ** 2
    return out


def pooled_rmse(chunks: list[np.ndarray]) -> float:
    pooled = np.concatenate(chunks) if chunks else np.zeros(0)
    return float(np.sqrt(pooled.mean())) if pooled.size else float("nan")


def evaluate(temp_model: ModelGenome | None, do_model: ModelGenome | None,
             lakes: list[LakeFinetuneInputs],
             temp_model_for_do: ModelGenome | None = None,
             window: int = 60) -> dict:
    """Held-out evaluation against the truth trajectories.

    Returns RMSE per task/season bucket, the physical-inconsistency
    metrics and the surface-temperature / epilimnion-oxygen correlation
    over stratified days.
    """
    if not lakes:
        raise ValueError("evaluate: empty lake split")
    buckets = {k: [] for k in ("temperature_stratified", "temperature_mixed",
                               "do_epi", "do_hyp", "do_total")}
    energy_inc = []
    mass_inc = []
    surf_pairs = []
    for lake in lakes:
        truth = lake.truth
        strat = truth.stratified
        preds = do_preds = None
        if temp_model is not None:
            preds = predict_full_temperature(temp_model, lake, window)
            energy_inc.append(inconsistency_metrics(
                preds, None, lake.energy_budget,
                lake.mass_budget)["energy_inconsistency"])
        if do_model is not None:
            fields = build_do_inputs(lake, temp_model_for_do)
            do_preds = predict_full_oxygen(do_model, fields, window)
            mass_inc.append(inconsistency_metrics(
                None, do_preds, lake.energy_budget,
                lake.mass_budget)["mass_inconsistency"])
            if temp_model is not None and strat.sum() > 2:
                surf_pairs.append(np.column_stack(
                    [preds[strat, 0], do_preds[strat, 0]]))
        for key, chunk in seasonal_squared_errors(truth, preds,
                                                  do_preds).items():
            buckets[key].append(chunk)

    out = {}
    if temp_model is not None:
        out["temperature"] = {
            "stratified": pooled_rmse(buckets["temperature_stratified"]),
            "mixed": pooled_rmse(buckets["temperature_mixed"]),
            "all": pooled_rmse(buckets["temperature_stratified"]
                               + buckets["temperature_mixed"]),
        }
        out["energy_inconsistency"] = float(np.mean(energy_inc))
    if do_model is not None:
        out["do"] = {
            "epi_stratified": pooled_rmse(buckets["do_epi"]),
            "hyp_stratified": pooled_rmse(buckets["do_hyp"]),
            "total_mixed": pooled_rmse(buckets["do_total"]),
            "stratified": pooled_rmse(buckets["do_epi"] + buckets["do_hyp"]),
            "all": pooled_rmse(buckets["do_epi"] + buckets["do_hyp"]
                               + buckets["do_total"]),
        }
        out["mass_inconsistency"] = float(np.mean(mass_inc))
    if surf_pairs:
        stacked = np.concatenate(surf_pairs, axis=0)
        out["surface_temp_do_correlation"] = float(
            np.corrcoef(stacked[:, 0], stacked[:, 1])[0, 1])
    return out
