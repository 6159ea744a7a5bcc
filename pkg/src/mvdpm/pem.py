"""Euler-Maruyama for the interacting particle system (the PEM baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mvdpm.errors import InvalidArgument, NumericalFailure
from mvdpm.models import EmpiricalMeasure, ModelSpec
from mvdpm.noise import TimeGrid, make_grid, read_matrix_csv, sample_paths, write_matrix_csv


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Particle states, one row per particle, one column per grid time."""

    grid: TimeGrid
    states: np.ndarray
    model_name: str = ""

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != len(self.grid):
            raise InvalidArgument(f"states must have shape (N, {len(self.grid)}), got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise NumericalFailure("ensemble states must be finite")
        object.__setattr__(self, "states", states)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def at(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.grid.points - t)))
        if not np.isclose(self.grid.points[j], t, rtol=0, atol=1e-12):
            raise InvalidArgument(f"time {t} is not a grid point")
        return self.states[:, j]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


def write_ensemble_csv(ensemble: Ensemble, path) -> None:
    write_matrix_csv(path, ensemble.grid.points, ensemble.states, "particle")


def read_ensemble_csv(path, model_name: str = "") -> Ensemble:
    times, states = read_matrix_csv(path, "particle")
    return Ensemble(TimeGrid(times), states, model_name)


def simulate(model: ModelSpec, paths, x0=None) -> Ensemble:
    """Explicit Euler steps with the empirical measure of the current states.

    X_{m+1} = X_m + h_m b(t_m, X_m, mu_m) + sigma(t_m, X_m, mu_m) (W_{m+1} - W_m),
    where h_m = t_{m+1} - t_m, so non-uniform grids are allowed.
    """
    if paths.kind != model.noise_kind:
        raise InvalidArgument(f"model expects {model.noise_kind} noise, got {paths.kind}")
    if model.noise_kind == "fbm" and not np.isclose(paths.hurst, model.hurst):
        raise InvalidArgument("Hurst index of paths and model differ")
    x0 = model.x0 if x0 is None else x0
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (paths.n_paths,))
    if not np.all(np.isfinite(x0)):
        raise InvalidArgument("x0 must be finite")
    t = paths.grid.points
    dw = np.diff(paths.values, axis=1)
    states = np.empty_like(paths.values)
    states[:, 0] = x0
    x = x0.copy()
    for m in range(len(t) - 1):
        mu = EmpiricalMeasure(x)
        h = t[m + 1] - t[m]
        x = x + h * model.drift(t[m], x, mu) + model.diffusion(t[m], x, mu) * dw[:, m]
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"non-finite particle state at step {m + 1}", index=m + 1)
        states[:, m + 1] = x
    return Ensemble(paths.grid, states, model.name)


def reference_ensemble(model: ModelSpec, t_eval: float, fine_h: float, big_n: int, seed: int) -> Ensemble:
    m_points = int(round(t_eval / fine_h)) + 1
    if not np.isclose((m_points - 1) * fine_h, t_eval, rtol=1e-9, atol=1e-12):
        raise InvalidArgument(f"fine_h={fine_h} does not divide t_eval={t_eval}")
    grid = make_grid(t_eval, m_points)
    paths = sample_paths(grid, big_n, seed, model.noise_kind, model.hurst)
    return simulate(model, paths)


def reference_cdf(model: ModelSpec, t_eval: float, fine_h: float, big_n: int, seed: int):
    """Empirical CDF at ``t_eval`` of a fine-step, many-particle PEM run."""
    from mvdpm.metrics import ecdf

    return ecdf(reference_ensemble(model, t_eval, fine_h, big_n, seed).terminal)
