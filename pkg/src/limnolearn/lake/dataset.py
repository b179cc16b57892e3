"""CSV round-trip for simulated trajectories.

Main file: one row per (lake_id, day) with drivers, per-layer
temperatures, regime, pools and the flux ledger.  Floats use 17
significant digits so float64 values survive the round trip bitwise.
A sidecar file (``<stem>.lakes.csv``) carries the static lake
configurations needed to rebuild model inputs and budgets.

Lines starting with '#' are metadata comments and are skipped on import.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .types import HEAT_TERM_NAMES, DriverSeries, LakeConfig, SimTrajectory

DRIVER_COLUMNS = ("air_temperature", "shortwave", "longwave_in",
                  "wind_speed", "rel_humidity")
FIXED_COLUMNS = ("stratified", "tc", "V_epi", "V_hyp", "DO_epi", "DO_hyp",
                 "DO_total", "F_ATM", "F_NEP", "F_SED", "F_ENT_epi",
                 "F_ENT_hyp", "U_t", "F_E") + HEAT_TERM_NAMES


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def lakes_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".lakes" + path.suffix)


class DatasetFormatError(ValueError):
    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


def export_dataset(trajectories: list[SimTrajectory], path,
                   metadata: dict | None = None):
    """Write trajectories plus the lake sidecar; lossless round trip."""
    path = Path(path)
    max_layers = max((t.temps.shape[1] for t in trajectories), default=0)
    temp_columns = [f"T_{d:03d}" for d in range(max_layers)]
    header = (["lake_id", "day_index"] + list(DRIVER_COLUMNS) + temp_columns
              + list(FIXED_COLUMNS))

    meta_line = None
    if metadata:
        joined = " ".join(f"{k}={v}" for k, v in sorted(metadata.items()))
        meta_line = f"# {joined}"

    with open(path, "w", newline="") as fh:
        if meta_line:
            fh.write(meta_line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for traj in trajectories:
            n_layers = traj.temps.shape[1]
            for day in range(traj.n_days):
                row = [traj.lake.lake_id, str(day)]
                row += [_fmt(getattr(traj.drivers, c)[day])
                        for c in DRIVER_COLUMNS]
                row += [_fmt(traj.temps[day, d]) for d in range(n_layers)]
                row += [""] * (max_layers - n_layers)
                row += [str(int(traj.stratified[day])), str(int(traj.tc[day])),
                        _fmt(traj.v_epi[day]), _fmt(traj.v_hyp[day]),
                        _fmt(traj.do_epi[day]), _fmt(traj.do_hyp[day]),
                        _fmt(traj.do_total[day]), _fmt(traj.f_atm[day]),
                        _fmt(traj.f_nep[day]), _fmt(traj.f_sed[day]),
                        _fmt(traj.f_ent_epi[day]), _fmt(traj.f_ent_hyp[day]),
                        _fmt(traj.u_t[day]), _fmt(traj.f_e[day])]
                row += [_fmt(traj.heat_terms[day, k])
                        for k in range(len(HEAT_TERM_NAMES))]
                writer.writerow(row)

    side = lakes_sidecar_path(path)
    with open(side, "w", newline="") as fh:
        if meta_line:
            fh.write(meta_line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["lake_id", "max_depth", "surface_area",
                         "layer_thickness", "trophic_state", "latitude_proxy",
                         "land_use_fractions", "hypsography", "do_clamped_days"])
        for traj in trajectories:
            lake = traj.lake
            clamped = ";".join(str(i) for i in np.nonzero(traj.do_clamped)[0])
            writer.writerow([
                lake.lake_id, _fmt(lake.max_depth), _fmt(lake.surface_area),
                _fmt(lake.layer_thickness), _fmt(lake.trophic_state),
                _fmt(lake.latitude_proxy),
                ";".join(_fmt(x) for x in lake.land_use_fractions),
                ";".join(_fmt(x) for x in lake.hypsography),
                clamped,
            ])


def _read_rows(path):
    rows = []
    with open(path, newline="") as fh:
        for i, line in enumerate(fh, start=1):
            if line.startswith("#"):
                continue
            rows.append((i, next(csv.reader([line]))))
    return rows


def import_dataset(path) -> list[SimTrajectory]:
    """Rebuild trajectories (and their lake configs) from CSV files."""
    path = Path(path)
    rows = _read_rows(path)
    if not rows:
        raise DatasetFormatError(path, 1, "missing header row")
    header_line, header = rows[0]
    expected_prefix = ["lake_id", "day_index"] + list(DRIVER_COLUMNS)
    if header[:len(expected_prefix)] != expected_prefix:
        raise DatasetFormatError(path, header_line,
                                 f"unexpected header {header[:7]}")
    temp_cols = [c for c in header if c.startswith("T_")]
    n_temp = len(temp_cols)
    fixed_start = len(expected_prefix) + n_temp
    if header[fixed_start:] != list(FIXED_COLUMNS):
        raise DatasetFormatError(path, header_line,
                                 "trailing columns do not match schema")

    lakes = _import_lakes(lakes_sidecar_path(path))
    per_lake: dict[str, list] = {}
    for line_number, row in rows[1:]:
        if len(row) != len(header):
            raise DatasetFormatError(
                path, line_number,
                f"expected {len(header)} fields, found {len(row)}")
        try:
            per_lake.setdefault(row[0], []).append(
                (int(row[1]), row[2:]))
        except ValueError as exc:
            raise DatasetFormatError(path, line_number, str(exc)) from None

    out = []
    for lake_id, entries in per_lake.items():
        if lake_id not in lakes:
            raise DatasetFormatError(path, 1,
                                     f"lake {lake_id!r} missing from sidecar")
        lake, clamped_days = lakes[lake_id]
        entries.sort(key=lambda e: e[0])
        n_days = len(entries)
        n_layers = lake.n_layers
        drivers = {c: np.empty(n_days) for c in DRIVER_COLUMNS}
        temps = np.empty((n_days, n_layers))
        fixed = {c: np.empty(n_days) for c in FIXED_COLUMNS}
        for day, (_, values) in enumerate(entries):
            for j, c in enumerate(DRIVER_COLUMNS):
                drivers[c][day] = float(values[j])
            base = len(DRIVER_COLUMNS)
            for d in range(n_layers):
                temps[day, d] = float(values[base + d])
            base += n_temp
            for j, c in enumerate(FIXED_COLUMNS):
                fixed[c][day] = float(values[base + j])
        do_clamped = np.zeros(n_days, dtype=bool)
        do_clamped[clamped_days] = True
        out.append(SimTrajectory(
            lake=lake,
            drivers=DriverSeries(**drivers),
            temps=temps,
            stratified=fixed["stratified"].astype(bool),
            tc=fixed["tc"].astype(np.int64),
            v_epi=fixed["V_epi"], v_hyp=fixed["V_hyp"],
            do_epi=fixed["DO_epi"], do_hyp=fixed["DO_hyp"],
            do_total=fixed["DO_total"],
            f_atm=fixed["F_ATM"], f_nep=fixed["F_NEP"], f_sed=fixed["F_SED"],
            f_ent_epi=fixed["F_ENT_epi"], f_ent_hyp=fixed["F_ENT_hyp"],
            u_t=fixed["U_t"], f_e=fixed["F_E"],
            heat_terms=np.column_stack([fixed[c] for c in HEAT_TERM_NAMES]),
            do_clamped=do_clamped))
    return out


def _import_lakes(path) -> dict:
    rows = _read_rows(path)
    if not rows:
        raise DatasetFormatError(path, 1, "missing header row")
    out = {}
    for line_number, row in rows[1:]:
        try:
            lake = LakeConfig(
                lake_id=row[0],
                max_depth=float(row[1]),
                surface_area=float(row[2]),
                hypsography=np.array([float(x) for x in row[7].split(";")]),
                trophic_state=float(row[4]),
                land_use_fractions=np.array(
                    [float(x) for x in row[6].split(";")]),
                latitude_proxy=float(row[5]),
                layer_thickness=float(row[3]),
            )
            clamped = [int(x) for x in row[8].split(";") if x]
        except (ValueError, IndexError) as exc:
            raise DatasetFormatError(path, line_number, str(exc)) from None
        out[lake.lake_id] = (lake, clamped)
    return out
