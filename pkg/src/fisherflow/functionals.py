"""Free-energy models, information functionals, and the first-order residual.

A model is a convex potential functional F on densities with an evaluable
linear derivative: Linear F(p) = ∫V p with derivative V, or Interaction
F(p) = ∫V p + ½∬K(x−y) p p with derivative V + K⋆p. The confining potential
is supplied as an explicit g + w split (g strongly convex with certified
modulus, w a Lipschitz perturbation) so convexity is a construction-time
contract, not an inference. Interaction kernels must be even with a
nonnegative discrete cosine spectrum; indefinite kernels are rejected.

The regularized objective is

    energy(p) = F(p) + sigma^2 * fisher_sqrt(p) + gamma * entropy(p)

and ``first_order_residual`` returns its normalized variational derivative,
the field whose L2(p) norm is the dissipation rate of the dynamics and which
vanishes exactly at the minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import (
    Grid1D,
    GridDensity,
    GridField,
    gradient_values,
    integrate_values,
    laplacian_values,
    normalize,
)


class ModelError(ValueError):
    """Invalid model construction or incompatible inputs."""


@dataclass(frozen=True)
class Params:
    """Temperature sigma > 0 and entropy weight gamma >= 0.

    gamma = 0 selects the pure Fisher-regularized objective; gamma > 0 adds
    an entropy term (used internally by the proximal inner problems).
    """

    sigma: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ModelError("sigma > 0 required")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ModelError("gamma >= 0 required")


def _sample(grid: Grid1D, fn_or_values) -> np.ndarray:
    if callable(fn_or_values):
        v = np.asarray(fn_or_values(grid.x), dtype=float)
    else:
        v = np.asarray(fn_or_values, dtype=float)
    if v.shape == ():
        v = np.full(grid.n, float(v))
    if v.shape != (grid.n,):
        raise ModelError(f"potential samples have shape {v.shape}, expected ({grid.n},)")
    if not np.all(np.isfinite(v)):
        raise ModelError("potential contains non-finite values")
    return v


def kernel_cosine_spectrum(grid: Grid1D, kernel: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Cosine spectrum of the kernel sampled on the displacement grid.

    The kernel is sampled at r = k*dx for k = -(n-1)..(n-1); for an even
    kernel the DFT of the centered sample vector is real, and its sign
    pattern certifies (semi)definiteness of the induced quadratic form.
    """
    r = grid.dx * np.arange(-(grid.n - 1), grid.n)
    samples = np.asarray(kernel(r), dtype=float)
    if samples.shape != r.shape:
        raise ModelError("kernel must map displacement arrays to arrays")
    if not np.all(np.isfinite(samples)):
        raise ModelError("kernel has non-finite samples")
    if not np.allclose(samples, samples[::-1], rtol=0.0, atol=1e-12 * (1.0 + np.max(np.abs(samples)))):
        raise ModelError("interaction kernel must be even in x - y")
    return np.real(np.fft.fft(np.fft.ifftshift(samples)))


class FreeEnergyModel:
    """Convex free-energy functional with an evaluable linear derivative."""

    def __init__(
        self,
        grid: Grid1D,
        g,
        w=None,
        kernel: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        kappa_lower: float = 1.0,
        _skip_kernel_check: bool = False,
    ):
        if not (np.isfinite(kappa_lower) and kappa_lower > 0):
            raise ModelError("kappa_lower > 0 required")
        self.grid = grid
        self.kappa_lower = float(kappa_lower)
        self.g_values = _sample(grid, g)
        self.w_values = _sample(grid, w) if w is not None else np.zeros(grid.n)
        self.v_values = self.g_values + self.w_values
        self.kernel = kernel
        if kernel is not None and not _skip_kernel_check:
            spectrum = kernel_cosine_spectrum(grid, kernel)
            scale = max(1.0, float(np.max(np.abs(spectrum))))
            if float(np.min(spectrum)) < -1e-9 * scale:
                raise ModelError(
                    "interaction kernel is not positive definite "
                    "(negative discrete cosine spectrum)"
                )
        if kernel is not None:
            r = grid.dx * np.arange(-(grid.n - 1), grid.n)
            self._kernel_samples = np.asarray(kernel(r), dtype=float)
        else:
            self._kernel_samples = None

    @property
    def variant(self) -> str:
        return "interaction" if self.kernel is not None else "linear"

    @property
    def potential(self) -> GridField:
        return GridField(self.grid, self.v_values.copy())

    def with_extra_potential(self, extra: np.ndarray) -> "FreeEnergyModel":
        """New model with V + extra; skips the kernel re-check.

        Used by the proximal inner problems, where the added term −h⁻¹·log p̃
        inherits the convex-plus-Lipschitz split from the previous iterate and
        the kernel is unchanged.
        """
        m = FreeEnergyModel(
            self.grid,
            self.g_values + np.asarray(extra, dtype=float),
            self.w_values,
            kernel=self.kernel,
            kappa_lower=self.kappa_lower,
            _skip_kernel_check=True,
        )
        return m

    def convolve_density(self, p_values: np.ndarray) -> np.ndarray:
        """(K ⋆ p) on the grid by direct convolution with trapezoid weights."""
        if self._kernel_samples is None:
            return np.zeros(self.grid.n)
        wts = np.full(self.grid.n, self.grid.dx)
        wts[0] *= 0.5
        wts[-1] *= 0.5
        n = self.grid.n
        return np.convolve(p_values * wts, self._kernel_samples)[n - 1 : 2 * n - 1]

    def kernel_sum_at(self, positions: np.ndarray, sources: np.ndarray) -> np.ndarray:
        """(1/N) Σ_j K(x − X_j) at given positions, for particle closures."""
        if self.kernel is None:
            return np.zeros_like(positions)
        diffs = positions[:, None] - sources[None, :]
        return np.asarray(self.kernel(diffs), dtype=float).mean(axis=1)

    def _check_density(self, p: GridDensity):
        if not p.grid.same_as(self.grid):
            raise ModelError("density grid does not match model grid")


def free_energy(m: FreeEnergyModel, p: GridDensity) -> float:
    """F(p): ∫V p, plus ½∫(K⋆p) p for interaction models."""
    m._check_density(p)
    value = integrate_values(p.grid, m.v_values * p.values)
    if m.kernel is not None:
        conv = m.convolve_density(p.values)
        value += 0.5 * integrate_values(p.grid, conv * p.values)
    return value


def linear_derivative(m: FreeEnergyModel, p: GridDensity) -> GridField:
    """δF/δp(p, ·): the potential V, plus K⋆p for interaction models."""
    m._check_density(p)
    values = m.v_values.copy()
    if m.kernel is not None:
        values += m.convolve_density(p.values)
    return GridField(p.grid, values)


def entropy(p: GridDensity) -> float:
    """∫ p log p (the floor keeps the integrand finite)."""
    return integrate_values(p.grid, p.values * np.log(p.values))


def fisher_sqrt(p: GridDensity) -> float:
    """∫ |∇√p|² dx; equals ¼∫|∇log p|² p up to discretization."""
    root = np.sqrt(p.values)
    grad = gradient_values(p.grid, root)
    return integrate_values(p.grid, grad * grad)


def generalized_free_energy(params: Params, m: FreeEnergyModel, p: GridDensity) -> float:
    """F(p) + sigma² I(p) + gamma H(p)."""
    value = free_energy(m, p) + params.sigma**2 * fisher_sqrt(p)
    if params.gamma != 0.0:
        value += params.gamma * entropy(p)
    return value


def first_order_residual(
    params: Params, m: FreeEnergyModel, p: GridDensity
) -> tuple[GridField, float]:
    """Normalized variational derivative of the regularized objective.

    With u = −log p the unnormalized field is

        δF/δp(p,·) + (σ²/2)Δu − (σ²/4)|∇u|² − γ u,

    and λ is the constant making it mean-zero under p. Returns
    (field − λ, λ).
    """
    m._check_density(p)
    u = -np.log(p.values)
    du = gradient_values(p.grid, u)
    lap_u = laplacian_values(p.grid, u)
    raw = linear_derivative(m, p).values + 0.5 * params.sigma**2 * lap_u
    raw -= 0.25 * params.sigma**2 * du * du
    if params.gamma != 0.0:
        raw -= params.gamma * u
    lam = integrate_values(p.grid, raw * p.values)
    return GridField(p.grid, raw - lam), lam


def lambda_identity(params: Params, m: FreeEnergyModel, p: GridDensity) -> float:
    """λ(p) through integration by parts: ∫(δF/δp)p + σ²I(p) + γH(p)."""
    value = integrate_values(p.grid, linear_derivative(m, p).values * p.values)
    value += params.sigma**2 * fisher_sqrt(p)
    if params.gamma != 0.0:
        value += params.gamma * entropy(p)
    return value


def residual_l2p(residual: GridField, p: GridDensity) -> float:
    """L²(p) norm of the residual field; its square is the dissipation rate."""
    return float(
        np.sqrt(max(0.0, integrate_values(p.grid, residual.values**2 * p.values)))
    )


def relative_entropy(p: GridDensity, q: GridDensity) -> float:
    """KL(p | q) = ∫ p log(p/q)."""
    if not p.grid.same_as(q.grid):
        raise ModelError("relative_entropy requires a common grid")
    return integrate_values(p.grid, p.values * (np.log(p.values) - np.log(q.values)))


def relative_fisher(p: GridDensity, q: GridDensity) -> float:
    """I(p | q) = ∫ |∇log(p/q)|² p."""
    if not p.grid.same_as(q.grid):
        raise ModelError("relative_fisher requires a common grid")
    grad = gradient_values(p.grid, np.log(p.values) - np.log(q.values))
    return integrate_values(p.grid, grad * grad * p.values)


@dataclass
class InitialCondition:
    """Initial density p0 ∝ exp(−(v0 + w0)).

    v0 is the strongly convex part (eta_lower-convex with eta_upper-Lipschitz
    gradient), w0 the Lipschitz perturbation; the constants are carried as
    metadata of the admissibility contract.
    """

    v0: Callable[[np.ndarray], np.ndarray]
    w0: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eta_lower: float = 1.0
    eta_upper: float = 1.0

    def density(self, grid: Grid1D) -> GridDensity:
        u = np.asarray(self.v0(grid.x), dtype=float)
        if self.w0 is not None:
            u = u + np.asarray(self.w0(grid.x), dtype=float)
        u = u - float(np.min(u))
        return normalize(GridField(grid, np.exp(-u)))

    @classmethod
    def gaussian(cls, mean: float, var: float) -> "InitialCondition":
        if var <= 0:
            raise ModelError("variance must be positive")
        return cls(
            v0=lambda x: (x - mean) ** 2 / (2.0 * var),
            w0=None,
            eta_lower=1.0 / var,
            eta_upper=1.0 / var,
        )


def harmonic_model(grid: Grid1D, curvature: float = 1.0) -> FreeEnergyModel:
    """Linear model with V(x) = curvature · x²."""
    return FreeEnergyModel(grid, lambda x: curvature * x * x, kappa_lower=2.0 * curvature)
