"""Deep particle method: fit Y = F(t, W_t) so its Ito pseudo-coefficients match b and sigma.

Applying the chain rule to Y_t = F(t, W_t) gives

    dY = (F_t + c(t) F_ww) dt + F_w dW,

with c(t) = 1/2 for Brownian noise and c(t) = H t^(2H-1) for fractional
Brownian noise of Hurst index H. Training minimises

    L1 = mean_n (F(0, W_0^n) - x0)^2
    L2 = mean_{n, j} lambda_j (b(t_j, Y_j^n, nu_j) - (F_t + c F_ww))^2
    L3 = mean_{n, j} lambda_j (sigma(t_j, Y_j^n, nu_j) - F_w)^2

where nu_j is the empirical measure of {Y_j^n}_n. The residual sums run over
every grid time including t = 0 unless ``include_initial`` is off, in which
case they start at the first positive time. The measure atoms are held
constant while differentiating, so each per-particle network only receives
gradient from its own residuals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from mvdpm.autonet import AdamState, Jet, MlpBank, adam_step, save_checkpoint
from mvdpm.errors import InvalidArgument, NumericalFailure
from mvdpm.models import MeasureSequence, ModelSpec
from mvdpm.noise import BROWNIAN, FBM, PathSet, TimeGrid
from mvdpm.pem import Ensemble

SHARED = "shared"
PER_PARTICLE = "per_particle"


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 1e-3
    loss_weights: Optional[Sequence[float]] = None
    thresholds: tuple = (0.0, 0.0, 0.0)
    mode: str = PER_PARTICLE
    layer_sizes: tuple = (2, 32, 32, 1)
    seed: int = 0
    detach_measure: bool = True
    include_initial: bool = True

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidArgument("epochs must be a positive integer")
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")
        self.thresholds = tuple(float(e) for e in self.thresholds)
        if len(self.thresholds) != 3 or min(self.thresholds) < 0:
            raise InvalidArgument("thresholds must be three non-negative numbers")
        if self.mode not in (SHARED, PER_PARTICLE):
            raise InvalidArgument(f"mode must be {SHARED!r} or {PER_PARTICLE!r}")
        if not self.detach_measure:
            raise InvalidArgument("differentiating through the empirical measure is not supported")
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)


class LossBreakdown(NamedTuple):
    L1: float
    L2: float
    L3: float

    @property
    def total(self) -> float:
        return self.L1 + self.L2 + self.L3

    def below(self, thresholds) -> bool:
        return all(v < e for v, e in zip(self, thresholds))


@dataclass
class TrainedSolver:
    nets: MlpBank
    paths: PathSet
    config: TrainConfig
    model: ModelSpec
    loss_history: list = field(default_factory=list)

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def final_loss(self) -> LossBreakdown:
        return self.loss_history[-1]


def chain_rule_factor(noise_kind: str, hurst: float, t):
    """Coefficient multiplying F_ww in the drift of F(t, W_t)."""
    if noise_kind == BROWNIAN:
        return np.full(np.shape(t), 0.5) if np.ndim(t) else 0.5
    if noise_kind == FBM:
        return hurst * np.power(np.asarray(t, dtype=float), 2.0 * hurst - 1.0)
    raise InvalidArgument(f"unknown noise kind {noise_kind!r}")


def pseudo_coefficients(j: Jet, noise_kind: str = BROWNIAN, hurst: float = 0.5, t=None):
    """(b_pseudo, sigma_pseudo) of Y = F(t, W_t) from the jet of F."""
    if noise_kind == FBM and t is None:
        raise InvalidArgument("fractional noise needs the time t")
    factor = chain_rule_factor(noise_kind, hurst, 0.0 if t is None else t)
    return j.f_t + factor * j.f_ww, j.f_w


def _points(nets: MlpBank, paths: PathSet, mode: str):
    n, m = paths.values.shape
    t = np.broadcast_to(paths.grid.points, (n, m))
    if mode == SHARED:
        return t.reshape(1, -1), paths.values.reshape(1, -1)
    if nets.count != n:
        raise InvalidArgument(f"{nets.count} networks for {n} paths")
    return t, paths.values


def cross_section_measures(y: np.ndarray, grid: TimeGrid, start: int = 1) -> MeasureSequence:
    """nu_j = uniform measure over all particles, for grid columns ``start`` onwards."""
    return MeasureSequence.cross_section(y, start)


def _loss_weights(config: TrainConfig, n_interior: int) -> np.ndarray:
    if config.loss_weights is None:
        return np.ones(n_interior)
    lam = np.broadcast_to(np.asarray(config.loss_weights, dtype=float), (n_interior,))
    if np.any(lam < 0):
        raise InvalidArgument("loss weights must be non-negative")
    return lam


def _check_inputs(model: ModelSpec, paths: PathSet):
    if paths.kind != model.noise_kind:
        raise InvalidArgument(f"model expects {model.noise_kind} noise, got {paths.kind}")
    if paths.kind == FBM and not np.isclose(paths.hurst, model.hurst):
        raise InvalidArgument("Hurst index of paths and model differ")


def _loss_and_gradient(nets, paths, model, x0, config, measure_fn, want_grad=True):
    n, m = paths.values.shape
    grid = paths.grid
    t, w = _points(nets, paths, config.mode)
    jet, pullback = nets.jet_and_pullback(t, w)
    f, f_t, f_w, f_ww = (c.reshape(n, m) for c in jet)

    start = 0 if config.include_initial else 1
    d = m - start
    times = grid.points[start:]
    measures = measure_fn(f, grid, start)
    b_target, s_target, b_slope, s_slope = model.coefficient_columns(times, f[:, start:], measures)

    factor = chain_rule_factor(paths.kind, paths.hurst, times)
    r1 = f[:, 0] - np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    r2 = b_target - (f_t[:, start:] + factor * f_ww[:, start:])
    r3 = s_target - f_w[:, start:]
    lam = _loss_weights(config, d)
    scale = 1.0 / (n * d)
    loss = LossBreakdown(float(np.mean(r1 * r1)),
                         float(scale * np.sum(lam * r2 * r2)),
                         float(scale * np.sum(lam * r3 * r3)))
    if not want_grad:
        return loss, None, f

    c_f = np.zeros((n, m))
    c_t = np.zeros((n, m))
    c_w = np.zeros((n, m))
    c_ww = np.zeros((n, m))
    g2 = 2.0 * scale * lam * r2
    g3 = 2.0 * scale * lam * r3
    c_f[:, start:] = g2 * b_slope + g3 * s_slope
    c_f[:, 0] += 2.0 * r1 / n
    c_t[:, start:] = -g2
    c_ww[:, start:] = -g2 * factor
    c_w[:, start:] = -g3
    shape = t.shape
    grad = pullback([c.reshape(shape) for c in (c_f, c_t, c_w, c_ww)])
    return loss, grad, f


def init_nets(config: TrainConfig, n_paths: int) -> MlpBank:
    count = 1 if config.mode == SHARED else n_paths
    return MlpBank.init(config.layer_sizes, config.seed, count)


def compute_loss(nets: MlpBank, paths: PathSet, model: ModelSpec, x0, config: TrainConfig,
                 measure_fn=cross_section_measures) -> LossBreakdown:
    _check_inputs(model, paths)
    x0 = model.x0 if x0 is None else x0
    return _loss_and_gradient(nets, paths, model, x0, config, measure_fn, want_grad=False)[0]


def fit(model: ModelSpec, paths: PathSet, x0, config: TrainConfig, measure_fn,
        callback=None) -> TrainedSolver:
    """Full-batch Adam on L1 + L2 + L3 with measures rebuilt from each epoch's outputs.

    Stops early, before updating, once every loss component is below its
    threshold, so the returned networks are the ones the last recorded loss
    describes. ``callback(epoch, loss, y)`` sees each epoch's outputs.
    """
    _check_inputs(model, paths)
    x0 = model.x0 if x0 is None else x0
    nets = init_nets(config, paths.n_paths)
    state = AdamState.zeros_like(nets.theta)
    history = []
    for epoch in range(config.epochs):
        try:
            loss, grad, y = _loss_and_gradient(nets, paths, model, x0, config, measure_fn)
        except NumericalFailure as exc:
            raise NumericalFailure(f"epoch {epoch}: {exc}", index=epoch) from exc
        if not (np.isfinite(loss.total) and np.all(np.isfinite(grad))):
            raise NumericalFailure(f"non-finite loss at epoch {epoch}", index=epoch)
        history.append(loss)
        if callback is not None:
            callback(epoch, loss, y)
        if loss.below(config.thresholds):
            break
        adam_step(state, nets, grad, config.lr)
    return TrainedSolver(nets, paths, config, model, history)


def train(model: ModelSpec, paths: PathSet, x0=None, config: Optional[TrainConfig] = None,
          callback=None) -> TrainedSolver:
    """Train shared or per-particle networks against the cross-sectional empirical measure."""
    config = config or TrainConfig()
    return fit(model, paths, x0, config, cross_section_measures, callback)


def evaluate(solver: TrainedSolver, grid: Optional[TimeGrid] = None,
             paths: Optional[PathSet] = None) -> Ensemble:
    """Y^n_t = F^n(t, W^n_t) at the times of ``grid``; no time stepping involved."""
    paths = solver.paths if paths is None else paths
    if grid is not None and not grid == paths.grid:
        paths = paths.restrict(grid)
    if solver.mode == PER_PARTICLE and paths.n_paths != solver.nets.count:
        raise InvalidArgument(f"{solver.nets.count} networks but {paths.n_paths} paths")
    t, w = _points(solver.nets, paths, solver.mode)
    y = solver.nets.jet(t, w).f.reshape(paths.values.shape)
    return Ensemble(paths.grid, y, solver.model.name)


def write_loss_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L1", "L2", "L3"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch] + [f"{v:.17g}" for v in loss])


def save_solver(solver: TrainedSolver, prefix) -> list:
    files = save_checkpoint(solver.nets, f"{prefix}_nets")
    cfg = asdict(solver.config)
    cfg["loss_weights"] = None if cfg["loss_weights"] is None else list(cfg["loss_weights"])
    cfg["model"] = solver.model.name
    with open(f"{prefix}_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2)
    return files + [f"{prefix}_config.json"]
