"""Time grids and seeded Brownian / fractional Brownian driving paths.

Every path row ``i`` is drawn from its own Philox stream keyed on
``(seed, i)``, so a row does not depend on how many other rows were drawn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from mvdpm.errors import InvalidArgument, NumericalFailure

BROWNIAN = "brownian"
FBM = "fbm"

CHOLESKY_JITTER = 1e-12


def row_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for stream ``index`` under ``seed``."""
    if seed < 0 or index < 0:
        raise InvalidArgument("seed and index must be non-negative")
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidArgument("a time grid needs at least 2 points")
        if pts[0] != 0.0:
            raise InvalidArgument("a time grid must start at 0")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise InvalidArgument("time grid points must be finite and strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    @property
    def t_end(self) -> float:
        return float(self.points[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    def indices_of(self, other: TimeGrid) -> np.ndarray:
        """Column indices of ``other``'s points within this grid (must be a subset)."""
        idx = np.searchsorted(self.points, other.points)
        idx = np.clip(idx, 0, len(self) - 1)
        if not np.allclose(self.points[idx], other.points, rtol=0, atol=1e-12):
            raise InvalidArgument("grid is not a subset of this grid")
        return idx


def make_grid(t_end: float, m_points: int) -> TimeGrid:
    """Uniform grid of ``m_points`` points on ``[0, t_end]``."""
    if not t_end > 0:
        raise InvalidArgument(f"t_end must be positive, got {t_end}")
    if int(m_points) != m_points or m_points < 2:
        raise InvalidArgument(f"m_points must be an integer >= 2, got {m_points}")
    pts = np.linspace(0.0, float(t_end), int(m_points))
    return TimeGrid(pts)


def thin_grid(grid: TimeGrid, deletion_rate: float, rng) -> TimeGrid:
    """Randomly delete interior points, keeping both endpoints.

    Exactly ``round(deletion_rate * (M - 2))`` interior points are removed,
    chosen uniformly without replacement. ``rng`` is a numpy Generator or an
    integer seed.
    """
    if not 0.0 <= deletion_rate < 1.0:
        raise InvalidArgument(f"deletion_rate must lie in [0, 1), got {deletion_rate}")
    if not isinstance(rng, np.random.Generator):
        rng = row_rng(int(rng), 0)
    n_interior = len(grid) - 2
    n_delete = int(np.floor(deletion_rate * n_interior + 0.5))
    if n_delete == 0:
        return grid
    dropped = rng.choice(np.arange(1, len(grid) - 1), size=n_delete, replace=False)
    keep = np.ones(len(grid), dtype=bool)
    keep[dropped] = False
    return TimeGrid(grid.points[keep])


@dataclass(frozen=True, eq=False)
class PathSet:
    """Noise trajectories, one row per particle, sampled on ``grid``."""

    grid: TimeGrid
    values: np.ndarray
    kind: str = BROWNIAN
    hurst: float = 0.5
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != len(self.grid):
            raise InvalidArgument(
                f"values must have shape (n_paths, {len(self.grid)}), got {vals.shape}")
        if self.kind not in (BROWNIAN, FBM):
            raise InvalidArgument(f"unknown noise kind {self.kind!r}")
        if self.kind == FBM and not 0.5 <= self.hurst < 1.0:
            raise InvalidArgument(f"Hurst index must lie in [0.5, 1), got {self.hurst}")
        if not np.all(np.isfinite(vals)):
            raise NumericalFailure("path values must be finite")
        if np.any(vals[:, 0] != 0.0):
            raise InvalidArgument("every path must start at 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def restrict(self, grid: TimeGrid) -> PathSet:
        """The same paths observed only at the points of ``grid``."""
        idx = self.grid.indices_of(grid)
        return PathSet(grid, self.values[:, idx], self.kind, self.hurst, self.seed)

    def take(self, rows) -> PathSet:
        return PathSet(self.grid, self.values[np.asarray(rows)], self.kind, self.hurst, self.seed)


def _normals(n_paths: int, n_cols: int, seed: int) -> np.ndarray:
    out = np.empty((n_paths, n_cols))
    for i in range(n_paths):
        out[i] = row_rng(seed, i).standard_normal(n_cols)
    return out


def sample_brownian(grid: TimeGrid, n_paths: int, seed: int) -> PathSet:
    """Standard Brownian paths on ``grid`` built from independent increments."""
    if n_paths < 1:
        raise InvalidArgument("n_paths must be >= 1")
    z = _normals(n_paths, len(grid) - 1, seed)
    values = np.zeros((n_paths, len(grid)))
    values[:, 1:] = np.cumsum(z * np.sqrt(grid.steps), axis=1)
    return PathSet(grid, values, BROWNIAN, 0.5, seed)


def fbm_covariance(times, hurst: float) -> np.ndarray:
    """Cov(W_s, W_t) = (s^2H + t^2H - |t - s|^2H) / 2."""
    t = np.asarray(times, dtype=float)
    two_h = 2.0 * hurst
    s, u = t[:, None], t[None, :]
    return 0.5 * (s ** two_h + u ** two_h - np.abs(u - s) ** two_h)


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + CHOLESKY_JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("fBM covariance is not positive definite even with jitter") from exc


def sample_fbm(grid: TimeGrid, hurst: float, n_paths: int, seed: int) -> PathSet:
    """Exact fractional Brownian paths by Cholesky factorisation of the grid covariance."""
    if not 0.5 <= hurst < 1.0:
        raise InvalidArgument(f"Hurst index must lie in [0.5, 1), got {hurst}")
    if n_paths < 1:
        raise InvalidArgument("n_paths must be >= 1")
    lower = _cholesky_with_jitter(fbm_covariance(grid.points[1:], hurst))
    z = _normals(n_paths, len(grid) - 1, seed)
    values = np.zeros((n_paths, len(grid)))
    values[:, 1:] = z @ lower.T
    return PathSet(grid, values, FBM, float(hurst), seed)


def sample_paths(grid: TimeGrid, n_paths: int, seed: int, kind: str = BROWNIAN,
                 hurst: float = 0.5) -> PathSet:
    if kind == BROWNIAN:
        return sample_brownian(grid, n_paths, seed)
    if kind == FBM:
        return sample_fbm(grid, hurst, n_paths, seed)
    raise InvalidArgument(f"unknown noise kind {kind!r}")


def write_matrix_csv(path, times, matrix, prefix: str) -> None:
    """Write ``t,<prefix>_0,...`` with one row per time point, 17 significant digits."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"{prefix}_{i}" for i in range(matrix.shape[0])])
        for j, t in enumerate(times):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in matrix[:, j]])


def read_matrix_csv(path, prefix: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t" or any(
                h != f"{prefix}_{i}" for i, h in enumerate(header[1:])):
            raise InvalidArgument(f"unexpected CSV header in {path}")
        rows = [[float(x) for x in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return data[:, 0], data[:, 1:].T


def write_paths_csv(paths: PathSet, path) -> None:
    write_matrix_csv(path, paths.grid.points, paths.values, "path")


def read_paths_csv(path, kind: str = BROWNIAN, hurst: float = 0.5, seed: int = 0) -> PathSet:
    times, values = read_matrix_csv(path, "path")
    return PathSet(TimeGrid(times), values, kind, hurst, seed)
