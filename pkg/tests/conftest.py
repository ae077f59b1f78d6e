import numpy as np
import pytest

from fisherflow import Grid1D, Params, gaussian_density, harmonic_model
from fisherflow.dynamics import solve_stationary


@pytest.fixture(scope="session")
def grid_2048():
    return Grid1D(-8.0, 8.0, 2048)


@pytest.fixture(scope="session")
def grid_1024():
    return Grid1D(-8.0, 8.0, 1024)


@pytest.fixture(scope="session")
def harmonic_2048(grid_2048):
    return harmonic_model(grid_2048)


@pytest.fixture(scope="session")
def harmonic_1024(grid_1024):
    return harmonic_model(grid_1024)


@pytest.fixture(scope="session")
def sigma1():
    return Params(sigma=1.0)


@pytest.fixture(scope="session")
def p0_offset_2048(grid_2048):
    return gaussian_density(grid_2048, 0.5, 0.8)


@pytest.fixture(scope="session")
def p0_offset_1024(grid_1024):
    return gaussian_density(grid_1024, 0.5, 0.8)


@pytest.fixture(scope="session")
def harmonic_stationary_2048(harmonic_2048, sigma1, p0_offset_2048):
    """Shared fixed point of the harmonic reference model."""
    return solve_stationary(harmonic_2048, sigma1, p0_offset_2048, tol=5e-5)


def heat_kernel_matrix(grid, sigma, dt):
    """Dense exact heat-kernel step (trapezoid-discretized integral operator).

    Matches the Feynman-Kac estimator's exact Gaussian increments, unlike
    Crank-Nicolson, so oracle-vs-estimator gaps are purely Monte Carlo.
    """
    x = grid.x
    var = sigma**2 * dt
    k = np.exp(-((x[:, None] - x[None, :]) ** 2) / (2.0 * var))
    k /= np.sqrt(2.0 * np.pi * var)
    w = np.full(grid.n, grid.dx)
    w[0] *= 0.5
    w[-1] *= 0.5
    return k * w[None, :]
