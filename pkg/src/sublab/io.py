"""CSV and JSON writers with fixed column sets.

Floats are written with ``repr`` so files round-trip exactly and are
byte-identical across runs with the same inputs. Every writer refuses
non-finite numbers.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .exceptions import SublabError

__all__ = [
    "OutputInvariantError",
    "eigensystem_summary",
    "to_jsonable",
    "write_csv",
    "write_eigensystem_csv",
    "write_exit_batch_csv",
    "write_heat_content_csv",
    "write_json",
    "write_regularity_csv",
    "write_scaling_csv",
    "write_small_deviation_csv",
    "write_survival_csv",
]

SURVIVAL_COLUMNS = ("t", "survival", "ci_lo", "ci_hi")
EXIT_COLUMNS = ("index", "exit_time", "censored")
SMALLDEV_COLUMNS = ("epsilon", "t", "survival", "ci_lo", "ci_hi", "rate")
HEAT_COLUMNS = ("t", "Q", "ci_lo", "ci_hi", "rescaled", "reference")
SCALING_COLUMNS = ("epsilon", "t", "stretched", "stretched_lo", "stretched_hi",
                   "dilated", "dilated_lo", "dilated_hi", "z")
REGULARITY_COLUMNS = ("point", "step_size", "t", "survival", "ci_lo", "ci_hi")


class OutputInvariantError(SublabError, RuntimeError):
    """A value about to be written is not finite."""


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if not math.isfinite(x):
        raise OutputInvariantError(f"refusing to write non-finite value {x!r}")
    return repr(x)


def write_csv(path, header, columns) -> Path:
    """Write equally long columns under ``header``."""
    cols = [np.asarray(c).ravel() for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and column count differ")
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError("columns have different lengths")
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(_cell(v) for v in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def to_jsonable(obj):
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise OutputInvariantError(f"refusing to write non-finite value {x!r}")
        return x
    return obj


def write_json(path, obj) -> Path:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path = Path(path)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_survival_csv(path, curve) -> Path:
    return write_csv(path, SURVIVAL_COLUMNS, [curve.times, curve.survival, curve.ci_lo, curve.ci_hi])


def write_exit_batch_csv(path, batch) -> Path:
    """Censored trajectories are written with ``exit_time`` equal to the horizon."""
    cens = batch.censored
    horizon = batch.config.n_steps * batch.config.step_size
    times = np.where(cens, horizon, batch.exit_times)
    return write_csv(path, EXIT_COLUMNS, [np.arange(batch.size), times, cens])


def write_small_deviation_csv(path, report) -> Path:
    n = report.epsilons.size
    return write_csv(path, SMALLDEV_COLUMNS, [report.epsilons, np.full(n, report.t), report.survival,
                                              report.ci_lo, report.ci_hi, report.rates])


def write_heat_content_csv(path, curve) -> Path:
    return write_csv(path, HEAT_COLUMNS, [curve.times, curve.q, curve.ci_lo, curve.ci_hi,
                                          curve.rescaled, curve.reference])


def write_scaling_csv(path, reports) -> Path:
    cols = [[r.epsilon for r in reports], [r.t for r in reports],
            [r.stretched for r in reports], [r.stretched_ci[0] for r in reports],
            [r.stretched_ci[1] for r in reports], [r.dilated for r in reports],
            [r.dilated_ci[0] for r in reports], [r.dilated_ci[1] for r in reports],
            [r.z for r in reports]]
    return write_csv(path, SCALING_COLUMNS, cols)


def write_regularity_csv(path, report) -> Path:
    p, r, j = np.meshgrid(np.arange(len(report.points)), np.arange(report.step_sizes.size),
                          np.arange(report.times.size), indexing="ij")
    return write_csv(path, REGULARITY_COLUMNS,
                     [p, report.step_sizes[r], report.times[j], report.survival,
                      report.ci_lo, report.ci_hi])


def write_eigensystem_csv(path, system) -> Path:
    """Node coordinates followed by the eigenfunction values."""
    pts = system.operator.points
    header = [f"x{k}" for k in range(pts.shape[1])] + [f"phi{n + 1}" for n in range(system.k)]
    cols = [pts[:, k] for k in range(pts.shape[1])] + [system.eigenvectors[:, n] for n in range(system.k)]
    return write_csv(path, header, cols)


def eigensystem_summary(system) -> dict:
    op = system.operator
    return {
        "eigenvalues": system.eigenvalues,
        "residuals": system.residuals,
        "c_n": system.mass,
        "mesh": op.h,
        "difference": op.difference,
        "interior_nodes": op.size,
        "method": system.method,
        "domain": op.domain.describe(),
    }
