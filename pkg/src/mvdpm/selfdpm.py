"""Single-path self-interacting DPM for stationary distributions.

The law of X_t is replaced by the occupation measure of the trajectory
itself, sampled on the grid: for t_k <= t < t_{k+1},

    kappa_t = (1/k) sum_{i=1..k} delta_{Y_{t_i}},

normalised to a probability measure. The t = 0 sample is left out; at t = 0
itself the measure degenerates to delta_{Y_0}. Across epochs only network
parameters and optimiser moments persist; each epoch rebuilds the measures
from the current outputs along the single path.
"""

from __future__ import annotations

import csv
from typing import Optional

import numpy as np

from mvdpm.dpm import SHARED, TrainConfig, TrainedSolver, evaluate, fit
from mvdpm.errors import InvalidArgument
from mvdpm.metrics import moments
from mvdpm.models import EmpiricalMeasure, MeasureSequence, ModelSpec
from mvdpm.noise import PathSet, TimeGrid


def occupation_measure(values, grid: TimeGrid, t: float) -> EmpiricalMeasure:
    """Uniform measure over the trajectory samples at positive grid times <= t."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != len(grid):
        raise InvalidArgument("trajectory and grid lengths differ")
    if t < grid.points[1]:
        raise InvalidArgument(f"t={t} precedes the first positive grid time {grid.points[1]}")
    k = int(np.searchsorted(grid.points, t, side="right")) - 1
    return EmpiricalMeasure(values[1:k + 1])


def occupation_measures(y: np.ndarray, grid: TimeGrid, start: int = 1) -> MeasureSequence:
    """Occupation measures of the single row of ``y`` at grid columns ``start`` onwards."""
    return MeasureSequence.occupation(y, start)


def train_self(model: ModelSpec, path: PathSet, x0=None, config: Optional[TrainConfig] = None,
               callback=None) -> TrainedSolver:
    """Train one network along one noise path against its own occupation measure."""
    if path.n_paths != 1:
        raise InvalidArgument(f"self-interacting training needs exactly one path, got {path.n_paths}")
    config = config or TrainConfig(mode=SHARED)
    return fit(model, path, x0, config, occupation_measures, callback)


def stationary_stats(solver: TrainedSolver, grid: Optional[TimeGrid] = None, burn_in: float = 0.2):
    """Mean and population sd of Y over the grid times left after dropping the first ``burn_in`` fraction."""
    if not 0.0 <= burn_in < 1.0:
        raise InvalidArgument(f"burn_in must lie in [0, 1), got {burn_in}")
    y = evaluate(solver, grid).states.reshape(-1)
    return trajectory_stats(y, burn_in)


def trajectory_stats(y, burn_in: float = 0.2):
    y = np.asarray(y, dtype=float).reshape(-1)
    kept = y[int(np.floor(burn_in * y.size)):]
    if kept.size == 0:
        raise InvalidArgument("no samples left after burn-in")
    return moments(kept)


class StatsRecorder:
    """Training callback collecting per-epoch (mean, sd) of the trajectory."""

    def __init__(self, burn_in: float = 0.2, every: int = 1):
        self.burn_in, self.every = burn_in, every
        self.rows = []

    def __call__(self, epoch, loss, y):
        if epoch % self.every == 0:
            self.rows.append((epoch,) + trajectory_stats(y, self.burn_in))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean", "sd"])
            for epoch, mean, sd in self.rows:
                writer.writerow([epoch, f"{mean:.17g}", f"{sd:.17g}"])
