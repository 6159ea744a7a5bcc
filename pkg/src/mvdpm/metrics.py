"""Distribution and trajectory metrics."""

from __future__ import annotations

import numpy as np
from scipy import integrate

from mvdpm.errors import InvalidArgument, NumericalFailure

DEFAULT_RANGE = (-1.5, 2.5)
DEFAULT_POINTS = 10_000


class ECDF:
    """Right-continuous empirical CDF, F(x) = #{samples <= x} / n."""

    def __init__(self, samples):
        values = np.sort(np.asarray(samples, dtype=float).reshape(-1))
        if values.size == 0:
            raise InvalidArgument("ecdf needs at least one sample")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("ecdf samples must be finite")
        self.values = values

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size

    def __len__(self):
        return self.values.size


def ecdf(samples) -> ECDF:
    return ECDF(samples)


def evaluation_points(n_points: int = DEFAULT_POINTS, lo: float = DEFAULT_RANGE[0],
                      hi: float = DEFAULT_RANGE[1], seed: int = 0, mode: str = "random") -> np.ndarray:
    if not lo < hi:
        raise InvalidArgument(f"invalid range ({lo}, {hi})")
    if n_points < 1:
        raise InvalidArgument("n_points must be >= 1")
    if mode == "random":
        return np.random.Generator(np.random.Philox(key=[int(seed), 0])).uniform(lo, hi, n_points)
    if mode == "grid":
        # midpoints, so the mean is a midpoint-rule integral over (lo, hi)
        return lo + (np.arange(n_points) + 0.5) * (hi - lo) / n_points
    raise InvalidArgument(f"unknown mode {mode!r}")


def mse_dist(f, g, n_points: int = DEFAULT_POINTS, range=DEFAULT_RANGE, seed: int = 0,
             mode: str = "random") -> float:
    """Mean squared gap between two CDFs over uniform points in ``range``.

    ``f`` and ``g`` are callables accepting an array of points (an ECDF, a
    vectorised exact CDF, ...).
    """
    lo, hi = range
    x = evaluation_points(n_points, lo, hi, seed, mode)
    gap = np.asarray(f(x), dtype=float) - np.asarray(g(x), dtype=float)
    return float(np.mean(gap * gap))


def _quad(fn, a, b, tol):
    value, err = integrate.quad(fn, a, b, epsabs=tol, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or err > max(tol * 10, 1e-8 * abs(value)):
        raise NumericalFailure(f"quadrature did not converge on [{a}, {b}] (err={err:g})")
    return value


def _burgers_cdf_scalar(x: float, sigma: float, t: float, tol: float) -> float:
    s2 = sigma * sigma
    width = 12.0 * sigma * np.sqrt(t)

    def energy(y):
        return (x - y) ** 2 / (2.0 * t) + max(y, 0.0)

    # both integrands are bounded by exp(-(E(y) - e_min) / s2); rescale so the peak is O(1)
    centre_right = max(x - t, 0.0)
    e_min = min(energy(centre_right), energy(min(x, 0.0)))
    lo = min(x - t, x) - width
    hi = x + width

    def weight(y):
        return np.exp(-(energy(y) - e_min) / s2)

    right = _quad(weight, max(lo, 0.0), hi, tol) if hi > 0 else 0.0
    left = _quad(weight, lo, 0.0, tol) if lo < 0 else 0.0
    total = left + right
    if not total > 0:
        raise NumericalFailure(f"degenerate normaliser in Burgers CDF at x={x}")
    return right / total


def burgers_exact_cdf(x, sigma: float = 0.5, t: float = 1.0, tol: float = 1e-10):
    """Law of X_t for dX = mu_t((-inf, X]) dt + sigma dW, X_0 = 0.

    By the Cole-Hopf transform of the CDF equation,

        F(x) = int_0^inf exp(-[(x-y)^2/(2t) + y]/sigma^2) dy
               / int_R exp(-[(x-y)^2/(2t) + max(y, 0)]/sigma^2) dy,

    evaluated by adaptive quadrature on the window |y - x| <= 12 sigma sqrt(t)
    widened by the drift shift t; the Gaussian tail beyond 12 standard
    deviations is below 1e-30 of the peak.
    """
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    if not t > 0:
        raise InvalidArgument(f"t must be positive, got {t}")
    arr = np.asarray(x, dtype=float)
    out = np.array([_burgers_cdf_scalar(float(v), sigma, t, tol) for v in arr.reshape(-1)])
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


class BurgersCDF:
    """Vectorised exact Burgers CDF, tabulated once on a fine grid and interpolated."""

    def __init__(self, sigma: float = 0.5, t: float = 1.0, lo: float = -4.0, hi: float = 5.0,
                 n_nodes: int = 4001):
        self.nodes = np.linspace(lo, hi, n_nodes)
        self.table = burgers_exact_cdf(self.nodes, sigma, t)
        self.sigma, self.t = sigma, t

    def __call__(self, x):
        return np.interp(x, self.nodes, self.table, left=0.0, right=1.0)


def wasserstein_p_1d(a, b, p: float = 2.0) -> float:
    """W_p between two uniform empirical measures of equal size (sorted coupling)."""
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size != b.size:
        raise InvalidArgument(f"sample counts differ ({a.size} vs {b.size})")
    if a.size == 0:
        raise InvalidArgument("samples must be non-empty")
    if p < 1:
        raise InvalidArgument(f"p must be >= 1, got {p}")
    return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))


def trajectory_error(y, x_ref) -> np.ndarray:
    """Per grid time, the particle-averaged squared gap between paired trajectories."""
    if y.states.shape != x_ref.states.shape:
        raise InvalidArgument(f"shape mismatch {y.states.shape} vs {x_ref.states.shape}")
    if not np.allclose(y.grid.points, x_ref.grid.points, rtol=0, atol=1e-12):
        raise InvalidArgument("ensembles live on different grids")
    return np.mean((y.states - x_ref.states) ** 2, axis=0)


def moments(samples):
    """Arithmetic mean and population standard deviation."""
    values = np.asarray(samples, dtype=float).reshape(-1)
    if values.size == 0:
        raise InvalidArgument("moments need at least one sample")
    return float(values.mean()), float(values.std())
