import math

import numpy as np
import pytest

from fisherflow.dynamics import DynamicsConfig, evolve
from fisherflow.functionals import (
    Params,
    generalized_free_energy,
    relative_entropy,
    residual_l2p,
)
from fisherflow.grid import density_from_values, gaussian_density, moment, wasserstein1
from fisherflow.proximal import (
    ProxConfig,
    compare_to_continuous,
    jko_flow,
    prox_step,
    step_equation_residual,
)


@pytest.fixture(scope="module")
def flow_setup(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = ProxConfig(h=0.1, T=1.0, inner_tol=1e-4)
    flow = jko_flow(p0_offset_1024, harmonic_1024, sigma1, cfg)
    return cfg, flow


def test_prox_config_validation():
    with pytest.raises(ValueError, match="h <= T"):
        ProxConfig(h=2.0, T=1.0)
    with pytest.raises(ValueError, match="h > 0"):
        ProxConfig(h=-0.1, T=1.0)
    assert ProxConfig(h=0.25, T=1.0).n_steps == 4


def test_prox_step_requires_gamma_zero(grid_1024, harmonic_1024, p0_offset_1024):
    with pytest.raises(ValueError, match="gamma"):
        prox_step(p0_offset_1024, harmonic_1024, Params(1.0, 1.0), 0.1, ProxConfig(h=0.1, T=1.0))


def test_prox_fixed_point(harmonic_1024, sigma1, p0_offset_1024):
    stat = __import__("fisherflow.dynamics", fromlist=["solve_stationary"]).solve_stationary(
        harmonic_1024, sigma1, p0_offset_1024, tol=5e-5
    )
    cfg = ProxConfig(h=0.1, T=1.0, inner_tol=5e-5)
    out = prox_step(stat.p_star, harmonic_1024, sigma1, 0.1, cfg)
    assert wasserstein1(out.p_next, stat.p_star) <= 1e-6


def test_prox_step_argmin_against_competitors(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    h = 0.1
    cfg = ProxConfig(h=h, T=1.0, inner_tol=1e-4)
    out = prox_step(p0_offset_1024, harmonic_1024, sigma1, h, cfg)

    def objective(q):
        return generalized_free_energy(sigma1, harmonic_1024, q) + relative_entropy(
            q, p0_offset_1024
        ) / h

    best = objective(out.p_next)
    assert best <= objective(p0_offset_1024) + 1e-8
    rng = np.random.default_rng(31)
    for _ in range(20):
        bump = 1.0 + 0.3 * np.sin(rng.uniform(0.5, 3.0) * grid_1024.x + rng.uniform(0, 6))
        q = density_from_values(grid_1024, out.p_next.values * bump)
        assert best <= objective(q) + 1e-8


def test_step_equation_residual_small(grid_1024, harmonic_1024, sigma1, p0_offset_1024, flow_setup):
    cfg, flow = flow_setup
    for i in range(1, len(flow)):
        field, _ = step_equation_residual(
            flow.densities[i], flow.densities[i - 1], harmonic_1024, sigma1, cfg.h
        )
        assert residual_l2p(field, flow.densities[i]) <= cfg.inner_tol * 1.5


def test_flow_energy_monotone(flow_setup):
    _, flow = flow_setup
    assert np.all(np.diff(flow.energies) <= 1e-8)


def test_kl_chain_rule_sanity(flow_setup, sigma1, harmonic_1024):
    cfg, flow = flow_setup
    for i in range(1, len(flow)):
        inner = flow.energies[i] + relative_entropy(
            flow.densities[i], flow.densities[i - 1]
        ) / cfg.h
        assert inner <= flow.energies[i - 1] + 1e-8


def test_lambda_columns_agree(flow_setup):
    _, flow = flow_setup
    for raw, eq in zip(flow.lambdas_raw[1:], flow.lambdas_eq[1:]):
        assert raw == pytest.approx(eq, abs=2e-4)


def test_single_step_horizon_equals_prox_step(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = ProxConfig(h=1.0, T=1.0, inner_tol=1e-4)
    flow = jko_flow(p0_offset_1024, harmonic_1024, sigma1, cfg)
    assert len(flow) == 2
    out = prox_step(p0_offset_1024, harmonic_1024, sigma1, 1.0, cfg)
    assert np.array_equal(flow.densities[1].values, out.p_next.values)


def test_second_moment_bound(flow_setup, harmonic_1024, sigma1, p0_offset_1024):
    # F(p) >= 1 * m2(p) for V = x^2, so m2 along the flow is bounded by the
    # initial energy (energies only decrease).
    _, flow = flow_setup
    e0 = flow.energies[0]
    for p in flow.densities:
        assert moment(p, 2) <= e0 + 1e-9


def test_flow_from_fixed_point_stays(harmonic_1024, sigma1, p0_offset_1024):
    from fisherflow.dynamics import solve_stationary

    stat = solve_stationary(harmonic_1024, sigma1, p0_offset_1024, tol=5e-5)
    cfg = ProxConfig(h=0.25, T=1.0, inner_tol=5e-5)
    flow = jko_flow(stat.p_star, harmonic_1024, sigma1, cfg)
    for p in flow.densities:
        assert wasserstein1(p, stat.p_star) <= 1e-6


def test_compare_to_continuous_refinement(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=0.5, record_stride=25, stationary_tol=1e-14)
    _, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    sups = []
    for h in (0.25, 0.125):
        flow = jko_flow(p0_offset_1024, harmonic_1024, sigma1, ProxConfig(h=h, T=0.5, inner_tol=1e-4))
        rep = compare_to_continuous(flow, trace)
        sups.append(rep.sup_w1)
    assert sups[1] < sups[0]


def test_compare_grid_mismatch(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    from fisherflow.functionals import harmonic_model
    from fisherflow.grid import Grid1D

    other = Grid1D(-8.0, 8.0, 512)
    m2 = harmonic_model(other)
    p0b = gaussian_density(other, 0.5, 0.8)
    cfg = DynamicsConfig(dt=1e-3, t_end=0.2, record_stride=20, stationary_tol=1e-14)
    _, trace = evolve(p0b, m2, sigma1, cfg)
    flow = jko_flow(
        p0_offset_1024, harmonic_1024, sigma1, ProxConfig(h=0.1, T=0.2, inner_tol=1e-3)
    )
    with pytest.raises(ValueError, match="same grid"):
        compare_to_continuous(flow, trace)
