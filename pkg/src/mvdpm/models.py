"""Scalar McKean-Vlasov models: drift b(t, x, mu) and diffusion sigma(t, x, mu).

Measures are uniform-weight atom lists. All coefficient functions accept
``x`` as a scalar or an array and evaluate elementwise against one measure.

Built-in models and the structural hypotheses they satisfy (documented, not
machine-checked):

* ``burgers``: b = mu((-inf, x]), sigma constant. Bounded drift; Lipschitz
  in mu only in the Wasserstein sense because the interaction kernel is an
  indicator.
* ``linear_meanfield``: b = -2x - E[mu], sigma constant. Lipschitz with
  constant 2 in x and 1 in the mean; dissipative, so it has a unique Gaussian
  stationary law N(0, sigma^2 / 4).
* ``fbm_interaction``: b = x - E[mu], sigma constant, driven by fractional
  noise. Lipschitz with constant 1 in both arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mvdpm.errors import InvalidArgument
from mvdpm.noise import BROWNIAN, FBM


class EmpiricalMeasure:
    """Uniform probability measure over a finite list of atoms."""

    __slots__ = ("atoms", "_sorted", "_mean")

    def __init__(self, atoms):
        atoms = np.array(atoms, dtype=float).reshape(-1)
        if atoms.size == 0:
            raise InvalidArgument("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise InvalidArgument("measure atoms must be finite")
        atoms.setflags(write=False)
        self.atoms = atoms
        self._sorted = None
        self._mean = None

    def __len__(self):
        return self.atoms.size

    @property
    def weight(self) -> float:
        return 1.0 / self.atoms.size

    @property
    def sorted_atoms(self) -> np.ndarray:
        if self._sorted is None:
            self._sorted = np.sort(self.atoms)
        return self._sorted

    def mean(self) -> float:
        if self._mean is None:
            self._mean = float(np.mean(self.atoms))
        return self._mean

    def cdf(self, x):
        """mu((-inf, x]), counting ties at x."""
        return np.searchsorted(self.sorted_atoms, x, side="right") / self.atoms.size


class MeasureSequence:
    """One empirical measure per training time, built from an output matrix.

    ``cross_section`` takes column j of ``y`` (all particles at t_j);
    ``occupation`` takes the samples of a single path at positive times up to
    t_j, or the t = 0 sample alone at j = 0.
    """

    def __init__(self, kind: str, y: np.ndarray, start: int):
        self.kind, self.y, self.start = kind, np.asarray(y, dtype=float), start

    @classmethod
    def cross_section(cls, y, start: int = 1):
        return cls("cross_section", y, start)

    @classmethod
    def occupation(cls, y, start: int = 1):
        return cls("occupation", np.asarray(y, dtype=float).reshape(1, -1), start)

    def __len__(self):
        return self.y.shape[1] - self.start

    def atoms(self, i: int) -> np.ndarray:
        j = self.start + i
        if self.kind == "cross_section":
            return self.y[:, j]
        path = self.y[0]
        return path[1:j + 1] if j >= 1 else path[:1]

    def __getitem__(self, i: int) -> EmpiricalMeasure:
        if not 0 <= i < len(self):
            raise IndexError(i)
        return EmpiricalMeasure(self.atoms(i))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def means(self) -> np.ndarray:
        if self.kind == "cross_section":
            return self.y[:, self.start:].mean(axis=0)
        path = self.y[0]
        csum = np.cumsum(path[1:])
        j = np.arange(self.start, path.size)
        out = np.empty(j.size)
        pos = j >= 1
        out[pos] = csum[j[pos] - 1] / j[pos]
        out[~pos] = path[0]
        return out


def burgers_drift(x, mu: EmpiricalMeasure):
    """Integral of the indicator H(x - y) = 1{x >= y} against mu."""
    return mu.cdf(x)


def linear_meanfield_drift(x, mu: EmpiricalMeasure):
    return -2.0 * np.asarray(x, dtype=float) - mu.mean()


def fbm_interaction_drift(x, mu: EmpiricalMeasure):
    return np.asarray(x, dtype=float) - mu.mean()


def constant_diffusion(sigma: float) -> Callable:
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")

    def diffusion(t, x, mu):
        return np.full(np.shape(x), float(sigma)) if np.ndim(x) else float(sigma)

    return diffusion


def _zero_slope(t, x, mu):
    return np.zeros(np.shape(x)) if np.ndim(x) else 0.0


def _constant_slope(value):
    def slope(t, x, mu):
        return np.full(np.shape(x), value) if np.ndim(x) else value
    return slope


@dataclass(frozen=True)
class ModelSpec:
    """A scalar MV-SDE dX = b(t, X, mu) dt + sigma(t, X, mu) dW.

    ``drift_dx`` / ``diffusion_dx`` give the partial derivatives in ``x`` with the
    measure held fixed; training uses them to differentiate the residual
    targets. When omitted a central difference is used.
    """

    name: str
    drift: Callable
    diffusion: Callable
    x0: float = 0.0
    noise_kind: str = BROWNIAN
    hurst: float = 0.5
    drift_dx: Optional[Callable] = None
    diffusion_dx: Optional[Callable] = None
    params: tuple = ()
    columns: Optional[Callable] = None

    def coefficient_columns(self, times, y, measures: MeasureSequence):
        """(b, sigma, db/dx, dsigma/dx), each shaped like ``y``, column j using ``measures[j]``."""
        if self.columns is not None:
            return self.columns(times, y, measures)
        out = [np.empty_like(y) for _ in range(4)]
        for j, (tj, mu) in enumerate(zip(times, measures)):
            x = y[:, j]
            out[0][:, j] = self.drift(tj, x, mu)
            out[1][:, j] = self.diffusion(tj, x, mu)
            out[2][:, j] = self.drift_slope(tj, x, mu)
            out[3][:, j] = self.diffusion_slope(tj, x, mu)
        return tuple(out)

    def drift_slope(self, t, x, mu):
        if self.drift_dx is not None:
            return self.drift_dx(t, x, mu)
        return _central_difference(self.drift, t, x, mu)

    def diffusion_slope(self, t, x, mu):
        if self.diffusion_dx is not None:
            return self.diffusion_dx(t, x, mu)
        return _central_difference(self.diffusion, t, x, mu)


def _central_difference(fn, t, x, mu, step=1e-6):
    x = np.asarray(x, dtype=float)
    return (np.asarray(fn(t, x + step, mu)) - np.asarray(fn(t, x - step, mu))) / (2 * step)


def _mean_field_columns(slope: float, sigma: float):
    # b = slope * x - mean(mu), sigma constant
    def columns(times, y, measures):
        b = slope * y - measures.means()
        return b, np.full_like(y, sigma), np.full_like(y, slope), np.zeros_like(y)
    return columns


def _burgers_columns(sigma: float):
    def columns(times, y, measures):
        if measures.kind == "cross_section" and y.shape[0] <= 256:
            # column-wise count of atoms <= each particle, ties included
            b = (measures.y[:, None, measures.start:] <= y[None, :, :]).mean(axis=0)
        else:
            b = np.column_stack([mu.cdf(y[:, j]) for j, mu in enumerate(measures)])
        return b, np.full_like(y, sigma), np.zeros_like(y), np.zeros_like(y)
    return columns


def burgers(sigma: float = 0.5, x0: float = 0.0) -> ModelSpec:
    return ModelSpec(
        name="burgers",
        drift=lambda t, x, mu: burgers_drift(x, mu),
        diffusion=constant_diffusion(sigma),
        x0=x0,
        drift_dx=_zero_slope,
        diffusion_dx=_zero_slope,
        params=(("sigma", sigma), ("x0", x0)),
        columns=_burgers_columns(sigma),
    )


def linear_meanfield(sigma: float = 0.5, x0: float = 0.0) -> ModelSpec:
    return ModelSpec(
        name="linear_meanfield",
        drift=lambda t, x, mu: linear_meanfield_drift(x, mu),
        diffusion=constant_diffusion(sigma),
        x0=x0,
        drift_dx=_constant_slope(-2.0),
        diffusion_dx=_zero_slope,
        params=(("sigma", sigma), ("x0", x0)),
        columns=_mean_field_columns(-2.0, sigma),
    )


def fbm_interaction(sigma: float = 0.5, hurst: float = 0.7, x0: float = 0.0) -> ModelSpec:
    if not 0.5 <= hurst < 1.0:
        raise InvalidArgument(f"Hurst index must lie in [0.5, 1), got {hurst}")
    return ModelSpec(
        name="fbm_interaction",
        drift=lambda t, x, mu: fbm_interaction_drift(x, mu),
        diffusion=constant_diffusion(sigma),
        x0=x0,
        noise_kind=FBM,
        hurst=hurst,
        drift_dx=_constant_slope(1.0),
        diffusion_dx=_zero_slope,
        params=(("sigma", sigma), ("hurst", hurst), ("x0", x0)),
        columns=_mean_field_columns(1.0, sigma),
    )


def constant_coefficients(drift: float, sigma: float, x0: float = 0.0,
                          noise_kind: str = BROWNIAN, hurst: float = 0.5) -> ModelSpec:
    """b = drift, sigma constant: the exact solution is x0 + drift t + sigma W_t."""

    def b(t, x, mu):
        return np.full(np.shape(x), float(drift)) if np.ndim(x) else float(drift)

    return ModelSpec(
        name="constant",
        drift=b,
        diffusion=constant_diffusion(sigma),
        x0=x0,
        noise_kind=noise_kind,
        hurst=hurst,
        drift_dx=_zero_slope,
        diffusion_dx=_zero_slope,
        params=(("drift", drift), ("sigma", sigma), ("x0", x0)),
    )


MODELS = {
    "burgers": burgers,
    "linear_meanfield": linear_meanfield,
    "fbm_interaction": fbm_interaction,
}


def get_model(name: str, **params) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise InvalidArgument(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)
