"""Uniform 1D grid arithmetic: fields, densities, quadrature, stencils, distances.

Everything downstream (free energies, dynamics, proximal flow, diagnostics)
lives on a fixed uniform grid. Quadrature is trapezoid throughout, first
derivatives are second-order central with second-order one-sided boundary
rows, and the Laplacian is the standard 3-point stencil with boundary nodes
copying the nearest interior value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

# Density floor: pure underflow guard. Valid densities produced by the
# dynamics carry Gaussian lower bounds, so the floor is inert except at
# Dirichlet-truncated boundary nodes.
DENSITY_FLOOR = 1e-300

# Unit-mass tolerance for GridDensity.
MASS_TOL = 1e-10


class GridError(ValueError):
    """Invalid grid, field, or density input."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of n nodes on [x_min, x_max], node i at x_min + i*dx."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise GridError("grid needs n >= 3 nodes")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise GridError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise GridError("grid requires x_min < x_max")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    def same_as(self, other: "Grid1D") -> bool:
        return (
            self.n == other.n
            and self.x_min == other.x_min
            and self.x_max == other.x_max
        )


def _as_values(grid: Grid1D, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n,):
        raise GridError(f"expected {grid.n} values, got shape {v.shape}")
    return v


@dataclass
class GridField:
    """Samples of a real function on a grid; arbitrary sign, all finite."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_values(self.grid, self.values)
        if not np.all(np.isfinite(self.values)):
            raise GridError("non-finite field")


@dataclass
class GridDensity:
    """Strictly positive unit-mass density on a grid.

    Use :func:`normalize` to construct one from raw samples; the constructor
    only verifies the invariants (floor and unit trapezoid mass).
    """

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_values(self.grid, self.values)
        if not np.all(np.isfinite(self.values)):
            raise GridError("non-finite density")
        if np.any(self.values < DENSITY_FLOOR):
            raise GridError("density below floor")
        mass = float(np.trapezoid(self.values, dx=self.grid.dx))
        if abs(mass - 1.0) > MASS_TOL:
            raise GridError(f"density mass {mass!r} not 1 within {MASS_TOL}")

    def as_field(self) -> GridField:
        return GridField(self.grid, self.values.copy())


def integrate(f: GridField) -> float:
    """Trapezoid quadrature of f over [x_min, x_max]."""
    if not np.all(np.isfinite(f.values)):
        raise GridError("non-finite field")
    return float(np.trapezoid(f.values, dx=f.grid.dx))


def integrate_values(grid: Grid1D, values: np.ndarray) -> float:
    """Trapezoid quadrature of raw samples (internal fast path)."""
    return float(np.trapezoid(values, dx=grid.dx))


def gradient_values(grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """Central differences inside, second-order one-sided at the two ends."""
    return np.gradient(values, grid.dx, edge_order=2)


def gradient(f: GridField) -> GridField:
    return GridField(f.grid, gradient_values(f.grid, f.values))


def laplacian_values(grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """3-point second difference; boundary nodes copy the nearest interior value."""
    out = np.empty_like(values)
    dx2 = grid.dx * grid.dx
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / dx2
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def laplacian(f: GridField) -> GridField:
    return GridField(f.grid, laplacian_values(f.grid, f.values))


def normalize_values(grid: Grid1D, values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n,):
        raise GridError(f"expected {grid.n} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GridError("degenerate mass: non-finite values")
    if not np.any(v > 0.0):
        raise GridError("degenerate mass: no positive values")
    v = np.maximum(v, DENSITY_FLOOR)
    mass = float(np.trapezoid(v, dx=grid.dx))
    if not np.isfinite(mass) or mass <= 0.0:
        raise GridError("degenerate mass")
    # Re-apply the floor after scaling; the mass perturbation is ~n*floor*dx,
    # far below MASS_TOL.
    return np.maximum(v / mass, DENSITY_FLOOR)


def normalize(f: GridField) -> GridDensity:
    """Clamp below the floor, rescale to unit trapezoid mass."""
    return GridDensity(f.grid, normalize_values(f.grid, f.values))


def density_from_values(grid: Grid1D, values) -> GridDensity:
    return normalize(GridField(grid, np.asarray(values, dtype=float)))


def moment(p: GridDensity, k: int) -> float:
    """k-th raw moment of p via trapezoid, k <= 4."""
    if not 0 <= k <= 4:
        raise GridError("moment order k must satisfy 0 <= k <= 4")
    return float(np.trapezoid(p.grid.x**k * p.values, dx=p.grid.dx))


def cdf_values(p: GridDensity) -> np.ndarray:
    return cumulative_trapezoid(p.values, dx=p.grid.dx, initial=0.0)


def wasserstein1(p: GridDensity, q: GridDensity) -> float:
    """W1 in 1D: integral of |CDF_p - CDF_q| over the domain."""
    if not p.grid.same_as(q.grid):
        raise GridError("wasserstein1 requires densities on the same grid")
    diff = np.abs(cdf_values(p) - cdf_values(q))
    return float(np.trapezoid(diff, dx=p.grid.dx))


def gaussian_density(grid: Grid1D, mean: float = 0.0, var: float = 1.0) -> GridDensity:
    """Gaussian N(mean, var) restricted to the grid and renormalized."""
    if var <= 0:
        raise GridError("variance must be positive")
    z = (grid.x - mean) ** 2 / (2.0 * var)
    return density_from_values(grid, np.exp(-z) / np.sqrt(2.0 * np.pi * var))


def interp_at(f: GridField, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation of a grid field; clamps to edge values outside."""
    return np.interp(positions, f.grid.x, f.values)


def refine(grid: Grid1D, factor: int) -> Grid1D:
    """Same domain with (n-1)*factor + 1 nodes."""
    if factor < 1:
        raise GridError("refinement factor must be >= 1")
    return Grid1D(grid.x_min, grid.x_max, (grid.n - 1) * factor + 1)


def resample_density(p: GridDensity, target: Grid1D) -> GridDensity:
    """Move a density to another grid by cubic interpolation of log p.

    Interpolating in log space keeps positivity and respects the Gaussian
    envelope; the result is renormalized on the target grid.
    """
    from scipy.interpolate import CubicSpline

    logp = np.log(p.values)
    spline = CubicSpline(p.grid.x, logp)
    x = np.clip(target.x, p.grid.x_min, p.grid.x_max)
    return density_from_values(target, np.exp(spline(x)))
