"""Readers for the CSV artifacts the training CLI writes.

Three shapes appear:

- run.csv: headered, one row per step
  (step, train_loss, val_loss, effective_lr, wall_micros)
- spectra.csv / neuron_norms.csv: headerless wide rows
  (step, label, v1, ..., vk) whose tail length varies with the matrix
- steps_to_loss.csv: headered
  (optimizer, reached_step, total_steps, gain_percent) with blank
  reached_step / gain_percent when an optimizer never hit the target
"""

import csv
from dataclasses import dataclass

import numpy as np


class InputError(Exception):
    """An input file is missing, empty, or not one of the known shapes."""


RUN_COLUMNS = ("step", "train_loss", "val_loss", "effective_lr")


def read_run_csv(path):
    """Columns of a run.csv as arrays: step int64, the rest float64."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        raise InputError(str(err)) from err
    if not rows:
        raise InputError(f"{path}: no data rows")
    missing = [c for c in RUN_COLUMNS if c not in rows[0]]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    out = {"step": np.array([int(r["step"]) for r in rows])}
    for col in RUN_COLUMNS[1:]:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


@dataclass(frozen=True)
class WideRow:
    step: int
    label: str
    values: np.ndarray


def read_wide_csv(path):
    """All rows of a spectra/neuron_norms file, in file order."""
    try:
        with open(path, newline="") as fh:
            raw = [row for row in csv.reader(fh) if row]
    except OSError as err:
        raise InputError(str(err)) from err
    if not raw:
        raise InputError(f"{path}: no data rows")
    rows = []
    for row in raw:
        if len(row) < 3:
            raise InputError(f"{path}: row has {len(row)} fields, need step, "
                             "label, and at least one value")
        try:
            rows.append(WideRow(int(row[0]), row[1],
                                np.array([float(v) for v in row[2:]])))
        except ValueError as err:
            raise InputError(f"{path}: {err}") from err
    return rows


def latest_rows(rows):
    """The rows of the most recent step, in file order."""
    last = max(r.step for r in rows)
    return [r for r in rows if r.step == last]


@dataclass(frozen=True)
class EfficiencyRow:
    optimizer: str
    reached_step: int | None
    total_steps: int
    gain_percent: float | None


def read_steps_to_loss(path):
    try:
        with open(path, newline="") as fh:
            raw = list(csv.DictReader(fh))
    except OSError as err:
        raise InputError(str(err)) from err
    if not raw:
        raise InputError(f"{path}: no data rows")
    rows = []
    for r in raw:
        try:
            rows.append(EfficiencyRow(
                optimizer=r["optimizer"],
                reached_step=int(r["reached_step"]) if r["reached_step"] else None,
                total_steps=int(r["total_steps"]),
                gain_percent=float(r["gain_percent"]) if r["gain_percent"] else None,
            ))
        except (KeyError, ValueError) as err:
            raise InputError(f"{path}: {err}") from err
    return rows
