"""Spectral and per-neuron geometry of update matrices.

A `GeometryReport` captures the singular-value spectrum, the condition
number over the numerically nonzero spectrum, and the spread of row
norms (one row per neuron). `trajectory_probe` drives a training run
and reports the geometry of each optimizer stage at a fixed stride.
"""

from dataclasses import dataclass
import csv

import numpy as np

from .errors import ConfigError, DomainError
from .matrix_core import svd_small
from .optimizers import per_neuron_cv


@dataclass
class GeometryReport:
    source_label: str
    spectrum: np.ndarray          # descending
    condition_number: float
    per_neuron_norms: np.ndarray  # row L2 norms
    norm_cv: float


def geometry_report(update: np.ndarray, source_label: str = "",
                    rank_tol: float = 1e-12) -> GeometryReport:
    """Geometry of a nonzero update matrix.

    The condition number divides sigma_max by the smallest singular
    value above rank_tol * sigma_max, so an exactly rank-deficient
    matrix reports the conditioning of its numerical range instead of
    infinity.
    """
    if not np.any(update):
        raise DomainError("geometry of the zero matrix is undefined")
    spectrum = svd_small(update).sigma
    sigma_max = float(spectrum[0])
    significant = spectrum[spectrum > rank_tol * sigma_max]
    cond = sigma_max / float(significant[-1])
    norms = np.sqrt(np.sum(update * update, axis=1))
    return GeometryReport(
        source_label=source_label,
        spectrum=spectrum,
        condition_number=cond,
        per_neuron_norms=norms,
        norm_cv=per_neuron_cv(update),
    )


def probe_steps(total_steps: int, step_stride: int) -> list[int]:
    """Steps to probe: every multiple of the stride, and always the last.

    len(result) == ceil(total_steps / step_stride); a stride longer than
    the run clamps to a single probe at the final step.
    """
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if step_stride < 1:
        raise ConfigError(f"step_stride must be >= 1, got {step_stride}")
    steps = list(range(step_stride, total_steps + 1, step_stride))
    if not steps or steps[-1] != total_steps:
        steps.append(total_steps)
    return steps


def trajectory_probe(run, param_id: str, step_stride: int):
    """Drive `run` to completion, yielding (step, GeometryReport) tuples.

    At each probed step one report per optimizer stage is emitted (raw
    momentum, orthogonalized update, final update direction), three per
    probe. `run` is a trainer TrainingRun or anything exposing the same
    total_steps / current_step / param_ids / advance() surface.
    """
    if param_id not in run.param_ids:
        raise KeyError(f"unknown parameter id {param_id!r}; have {sorted(run.param_ids)}")
    targets = set(probe_steps(run.total_steps, step_stride))
    while run.current_step < run.total_steps:
        traces = run.advance()
        step = run.current_step
        if step in targets:
            for label, mat in traces[param_id].stages:
                yield step, geometry_report(mat, source_label=label)


PROBE_HEADER = ["step", "param", "label", "cond", "sigma_max", "sigma_min", "norm_cv"]


def write_probe_csv(rows, path) -> None:
    """rows: (step, param, GeometryReport). One summary line per report."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBE_HEADER)
        for step, param, rep in rows:
            writer.writerow([
                step, param, rep.source_label,
                repr(rep.condition_number),
                repr(float(rep.spectrum[0])),
                repr(float(rep.spectrum[-1])),
                repr(rep.norm_cv),
            ])


def _write_wide_csv(rows, path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for step, _param, rep in rows:
            writer.writerow([step, rep.source_label] + [repr(float(v)) for v in values(rep)])


def write_spectra_csv(rows, path) -> None:
    """Companion file: step, label, then the sorted singular values."""
    _write_wide_csv(rows, path, lambda rep: rep.spectrum)


def write_neuron_norms_csv(rows, path) -> None:
    """Companion file: step, label, then the per-neuron (row) norms."""
    _write_wide_csv(rows, path, lambda rep: rep.per_neuron_norms)
