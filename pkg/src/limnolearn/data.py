"""Model-ready instances built from simulated trajectories.

Field layout (shared by both tasks; slot 0 is the only task-dependent
slot).  Temperature aggregates, the exogenous oxygen flux and the
dynamic volume come from a physics trajectory: during pretraining that
is the training simulator itself, during fine-tuning the same simulator
re-run on the observed drivers (the oxygen task later swaps the
temperature slots for the fine-tuned model's own predictions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lake.types import SimTrajectory
from .model import (OXYGEN_TASK, TEMPERATURE_TASK, FieldStats, InputInstance,
                    TaskBatch)

FIELD_NAMES = (
    "depth_or_tc",      # temperature: target depth; oxygen: thermocline depth
    "log_area",
    "air_temperature",
    "shortwave",
    "longwave_in",
    "wind_speed",
    "rel_humidity",
    "trophic_state",
    "land_use_0",
    "land_use_1",
    "log_volume",       # mixed-layer volume when stratified, else total
    "season_phase",
    "sim_surface_temp",  # slots replaced by predictions for the oxygen task
    "sim_epi_temp",
    "sim_hyp_temp",
    "sim_f_exo",
)
N_FIELDS = len(FIELD_NAMES)
TEMP_SLOTS = (12, 13, 14)   # the three temperature-derived fields
DAYS_PER_YEAR = 365


def _epi_hyp_temp_series(traj: SimTrajectory) -> tuple[np.ndarray, np.ndarray]:
    volumes = traj.lake.layer_volumes
    total = volumes.sum()
    n = traj.n_days
    epi = np.empty(n)
    hyp = np.empty(n)
    weighted = traj.temps * volumes
    mean = weighted.sum(axis=1) / total
    for t in range(n):
        if traj.stratified[t]:
            k = int(traj.tc[t]) + 1
            v_epi = volumes[:k].sum()
            epi[t] = weighted[t, :k].sum() / v_epi
            hyp[t] = weighted[t, k:].sum() / (total - v_epi)
        else:
            epi[t] = hyp[t] = mean[t]
    return epi, hyp


def exogenous_flux_series(traj: SimTrajectory) -> np.ndarray:
    """Per-day F_EXO of the oxygen pool the day's regime uses."""
    strat = traj.stratified
    return np.where(strat, traj.f_atm + traj.f_nep,
                    traj.f_atm + traj.f_nep + traj.f_sed)


def volume_series(traj: SimTrajectory) -> np.ndarray:
    return np.where(traj.stratified, traj.v_epi, traj.lake.total_volume)


def thermocline_depth_series(traj: SimTrajectory) -> np.ndarray:
    dz = traj.lake.layer_thickness
    return np.where(traj.stratified, (traj.tc + 1) * dz, traj.lake.max_depth)


def build_fields(budget_traj: SimTrajectory, feature_traj: SimTrajectory,
                 task: str, depth: float | None = None) -> np.ndarray:
    """(N_days, N_FIELDS) raw field matrix for one lake and task.

    ``budget_traj`` supplies regime, volumes and fluxes (the physics
    bookkeeping the losses use); ``feature_traj`` supplies the simulated
    temperature aggregates used as input features.  During pretraining
    both arguments are the same trajectory.
    """
    lake = budget_traj.lake
    d = budget_traj.drivers
    n = budget_traj.n_days
    epi_t, hyp_t = _epi_hyp_temp_series(feature_traj)
    out = np.empty((n, N_FIELDS))
    if task == TEMPERATURE_TASK:
        if depth is None:
            raise ValueError("temperature task requires a target depth")
        out[:, 0] = depth
    elif task == OXYGEN_TASK:
        out[:, 0] = thermocline_depth_series(budget_traj)
    else:
        raise ValueError(f"unknown task {task!r}")
    out[:, 1] = np.log10(lake.surface_area)
    out[:, 2] = d.air_temperature[:n]
    out[:, 3] = d.shortwave[:n]
    out[:, 4] = d.longwave_in[:n]
    out[:, 5] = d.wind_speed[:n]
    out[:, 6] = d.rel_humidity[:n]
    out[:, 7] = lake.trophic_state
    out[:, 8] = lake.land_use_fractions[0]
    out[:, 9] = lake.land_use_fractions[1]
    out[:, 10] = np.log10(volume_series(budget_traj))
    out[:, 11] = np.sin(2.0 * np.pi * (np.arange(n) % DAYS_PER_YEAR)
                        / DAYS_PER_YEAR)
    out[:, 12] = feature_traj.temps[:, 0]
    out[:, 13] = epi_t
    out[:, 14] = hyp_t
    out[:, 15] = exogenous_flux_series(budget_traj)
    return out


def depth_grid(lake, max_count: int = 5) -> np.ndarray:
    """Representative target depths: surface and bottom always included."""
    mids = lake.layer_depths
    if len(mids) <= max_count:
        return mids
    picks = np.unique(np.linspace(0, len(mids) - 1, max_count).astype(int))
    return mids[picks]


def layer_index(lake, depth: float) -> int:
    return int(np.clip(round(depth / lake.layer_thickness - 0.5), 0,
                       lake.n_layers - 1))


@dataclass
class LakeTable:
    """Per-lake precomputed field matrices and labels for the stream."""

    traj: SimTrajectory
    temp_fields: np.ndarray      # (N, m) with slot 0 overwritten per depth
    do_fields: np.ndarray        # (N, m)
    depths: np.ndarray           # candidate target depths
    do_labels: np.ndarray        # (N, 3) epi, hyp, total
    stratified: np.ndarray       # (N,)


class PretrainData:
    """Simulated train/validation streams plus dataset statistics."""

    def __init__(self, trajectories: list[SimTrajectory], window: int,
                 val_fraction: float = 0.2, seed: int = 0,
                 depths_per_lake: int = 5):
        if not trajectories:
            raise ValueError("pretrain data needs at least one trajectory")
        self.window = window
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
        order = rng.permutation(len(trajectories))
        n_val = max(1, int(round(val_fraction * len(trajectories)))) \
            if len(trajectories) > 1 else 0
        val_ids = set(int(i) for i in order[:n_val])
        self.train_tables = []
        self.val_tables = []
        for k, traj in enumerate(trajectories):
            table = self._build_table(traj, depths_per_lake)
            (self.val_tables if k in val_ids else self.train_tables).append(table)
        if not self.train_tables:
            self.train_tables = list(self.val_tables)
        self.stats = self._compute_stats()
        self.val_batches = self._build_val_batches(
            np.random.default_rng(np.random.SeedSequence((seed, 0xEA1))))

    @staticmethod
    def _build_table(traj: SimTrajectory, depths_per_lake: int) -> LakeTable:
        temp_fields = build_fields(traj, traj, TEMPERATURE_TASK, depth=0.0)
        do_fields = build_fields(traj, traj, OXYGEN_TASK)
        labels = np.column_stack([traj.do_epi, traj.do_hyp, traj.do_total])
        return LakeTable(traj=traj, temp_fields=temp_fields,
                         do_fields=do_fields,
                         depths=depth_grid(traj.lake, depths_per_lake),
                         do_labels=labels, stratified=traj.stratified.copy())

    def _compute_stats(self) -> FieldStats:
        rows = []
        temps = []
        do_rows = []
        for table in self.train_tables:
            rows.append(table.do_fields)
            for depth in table.depths:
                f = table.temp_fields.copy()
                f[:, 0] = depth
                rows.append(f)
                temps.append(table.traj.temps[:, layer_index(table.traj.lake,
                                                             depth)])
            do_rows.append(table.do_labels)
        stacked = np.concatenate(rows, axis=0)
        means = stacked.mean(axis=0)
        stds = stacked.std(axis=0)
        stds[stds < 1e-9] = 1.0
        all_do = np.concatenate(do_rows, axis=0)
        target_means = {
            "temperature": float(np.concatenate(temps).mean()),
            "do_epi": float(all_do[:, 0].mean()),
            "do_hyp": float(all_do[:, 1].mean()),
            "do_total": float(all_do[:, 2].mean()),
        }
        return FieldStats(means, stds, target_means)

    # -- sampling ------------------------------------------------------------
    def _sample_temp(self, tables, rng) -> InputInstance:
        table = tables[rng.integers(len(tables))]
        depth = float(table.depths[rng.integers(len(table.depths))])
        start = int(rng.integers(0, table.traj.n_days - self.window))
        sl = slice(start, start + self.window)
        fields = table.temp_fields[sl].copy()
        fields[:, 0] = depth
        d = layer_index(table.traj.lake, depth)
        return InputInstance(fields=fields, task=TEMPERATURE_TASK,
                             labels=table.traj.temps[sl, d].copy())

    def _sample_do(self, tables, rng) -> InputInstance:
        table = tables[rng.integers(len(tables))]
        start = int(rng.integers(0, table.traj.n_days - self.window))
        sl = slice(start, start + self.window)
        return InputInstance(fields=table.do_fields[sl].copy(),
                             task=OXYGEN_TASK,
                             labels=table.do_labels[sl].copy(),
                             stratified=table.stratified[sl].copy())

    def sample_batch(self, rng: np.random.Generator, n_temp: int = 2,
                     n_do: int = 1, split: str = "train") -> TaskBatch:
        tables = self.train_tables if split == "train" else self.val_tables
        instances = [self._sample_temp(tables, rng) for _ in range(n_temp)]
        instances += [self._sample_do(tables, rng) for _ in range(n_do)]
        return TaskBatch.from_instances(instances)

    def _build_val_batches(self, rng, count: int = 6) -> list[TaskBatch]:
        tables = self.val_tables or self.train_tables
        batches = []
        for _ in range(count):
            instances = [self._sample_temp(tables, rng) for _ in range(2)]
            instances.append(self._sample_do(tables, rng))
            batches.append(TaskBatch.from_instances(instances))
        return batches
