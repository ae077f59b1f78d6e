import numpy as np
import pytest

from fisherflow.dynamics import (
    ConvergenceError,
    DomainError,
    DynamicsConfig,
    DynamicsState,
    StiffnessError,
    dissipation_check,
    evolve,
    exp_rate_report,
    solve_stationary,
    step,
)
from fisherflow.functionals import (
    FreeEnergyModel,
    Params,
    first_order_residual,
    generalized_free_energy,
    lambda_identity,
)
from fisherflow.grid import (
    Grid1D,
    gaussian_density,
    moment,
    wasserstein1,
)


def test_step_fixed_point(harmonic_2048, sigma1, harmonic_stationary_2048):
    p_star = harmonic_stationary_2048.p_star
    state = DynamicsState.from_density(p_star, harmonic_2048, sigma1)
    before = generalized_free_energy(sigma1, harmonic_2048, p_star)
    nxt = step(state, harmonic_2048, sigma1, 1e-3)
    after = generalized_free_energy(sigma1, harmonic_2048, nxt.p)
    assert abs(after - before) <= 1e-10
    assert wasserstein1(p_star, nxt.p) <= 1e-8


def test_single_step_decreases_energy(grid_1024, harmonic_1024, sigma1):
    p = gaussian_density(grid_1024, 0.0, 1.0)
    state = DynamicsState.from_density(p, harmonic_1024, sigma1)
    before = generalized_free_energy(sigma1, harmonic_1024, p)
    nxt = step(state, harmonic_1024, sigma1, 1e-3)
    after = generalized_free_energy(sigma1, harmonic_1024, nxt.p)
    assert after < before


def test_zero_kernel_interaction_matches_linear_bitwise(grid_1024, sigma1):
    m_lin = FreeEnergyModel(grid_1024, lambda x: x * x, kappa_lower=2.0)
    m_int = FreeEnergyModel(
        grid_1024, lambda x: x * x, kernel=lambda r: np.zeros_like(r), kappa_lower=2.0
    )
    p0 = gaussian_density(grid_1024, 0.5, 0.8)
    cfg = DynamicsConfig(dt=1e-3, t_end=0.05, record_stride=10, stationary_tol=1e-14)
    s_lin, tr_lin = evolve(p0, m_lin, sigma1, cfg)
    s_int, tr_int = evolve(p0, m_int, sigma1, cfg)
    assert np.array_equal(s_lin.p.values, s_int.p.values)
    assert tr_lin.energy == tr_int.energy


def test_harmonic_convergence(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    result = solve_stationary(harmonic_1024, sigma1, p0_offset_1024, tol=1e-4)
    assert result.energy_star == pytest.approx(1.0, abs=1e-4)
    assert result.lambda_star == pytest.approx(1.0, abs=1e-4)
    var = moment(result.p_star, 2) - moment(result.p_star, 1) ** 2
    assert var == pytest.approx(0.5, abs=1e-3)


def test_gamma_one_stationary_gaussian(grid_1024, harmonic_1024):
    # Residual = x^2 + a - a^2 x^2 - gamma a x^2 - ... = const requires
    # 1 - a^2 - gamma a = 0, so the fixed point is N(0, 1/(2a)).
    params = Params(sigma=1.0, gamma=1.0)
    p0 = gaussian_density(grid_1024, 0.3, 0.9)
    result = solve_stationary(harmonic_1024, params, p0, tol=1e-4)
    a = (-1.0 + np.sqrt(5.0)) / 2.0
    var = moment(result.p_star, 2) - moment(result.p_star, 1) ** 2
    assert var == pytest.approx(1.0 / (2.0 * a), abs=2e-3)
    assert result.trace.max_step_energy_increase <= 1e-8


def test_interaction_stationary_and_first_order(grid_1024, sigma1):
    m = FreeEnergyModel(
        grid_1024,
        lambda x: x * x,
        kernel=lambda r: 0.5 * np.exp(-(r**2) / 2.0),
        kappa_lower=2.0,
    )
    p0 = gaussian_density(grid_1024, 0.5, 0.8)
    result = solve_stationary(m, sigma1, p0, tol=1e-4)
    assert result.residual <= 1e-4
    assert result.trace.max_step_energy_increase <= 1e-8
    res, _ = first_order_residual(sigma1, m, result.p_star)
    e_star = generalized_free_energy(sigma1, m, result.p_star)
    rng = np.random.default_rng(23)
    for _ in range(20):
        q = gaussian_density(grid_1024, rng.uniform(-1, 1), rng.uniform(0.3, 2.0))
        lhs = generalized_free_energy(sigma1, m, q) - e_star
        rhs = float(
            np.trapezoid(res.values * (q.values - result.p_star.values), dx=grid_1024.dx)
        )
        assert lhs >= rhs - 1e-4


def test_evolve_records_and_mass(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=0.5, record_stride=50, stationary_tol=1e-14)
    state, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    assert state.t == pytest.approx(0.5, abs=1e-9)
    for snap in trace.snapshots:
        assert float(np.trapezoid(snap.values, dx=grid_1024.dx)) == pytest.approx(
            1.0, abs=1e-10
        )
    # lambda column is the integration-by-parts identity
    for lam, snap in zip(trace.lam, trace.snapshots):
        assert lam == pytest.approx(
            lambda_identity(sigma1, harmonic_1024, snap), abs=1e-12
        )
        _, lam_direct = first_order_residual(sigma1, harmonic_1024, snap)
        assert abs(lam - lam_direct) <= grid_1024.dx**2


def test_dissipation_check_and_refinement(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    reports = []
    for dt in (1e-3, 5e-4):
        cfg = DynamicsConfig(
            dt=dt, t_end=1.5, record_stride=max(1, int(0.01 / dt)), stationary_tol=1e-14
        )
        _, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
        reports.append(dissipation_check(trace))
    assert reports[0].max_rel_mismatch <= 2e-2
    assert reports[1].max_rel_mismatch < reports[0].max_rel_mismatch


def test_dissipation_stationary_no_testable_rows(harmonic_2048, sigma1, harmonic_stationary_2048):
    p_star = harmonic_stationary_2048.p_star
    cfg = DynamicsConfig(dt=1e-3, t_end=0.02, record_stride=5, stationary_tol=1e-300)
    _, trace = evolve(p_star, harmonic_2048, sigma1, cfg)
    rep = dissipation_check(trace)
    assert rep.n_testable == 0
    assert rep.note == "no testable rows"


def test_exp_rate_report(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=6.0, record_stride=20, stationary_tol=1e-14)
    _, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    stat = solve_stationary(harmonic_1024, sigma1, p0_offset_1024, tol=1e-4)
    rep = exp_rate_report(trace, stat.p_star, sigma1, energy_star=stat.energy_star)
    assert rep.rate > 0
    assert rep.r_squared >= 0.99
    assert rep.fisher_bound_ok
    assert rep.gap_monotone


def test_exp_rate_trace_too_short(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=0.01, record_stride=2, stationary_tol=1e-14)
    _, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    stat_p = gaussian_density(grid_1024, 0.0, 0.5)
    with pytest.raises(ValueError, match="trace too short"):
        exp_rate_report(trace, stat_p, sigma1, energy_star=1.0)


def test_exp_rate_requires_gamma_zero(grid_1024, p0_offset_1024, harmonic_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=0.05, record_stride=5, stationary_tol=1e-14)
    _, trace = evolve(p0_offset_1024, harmonic_1024, Params(1.0, 0.0), cfg)
    with pytest.raises(ValueError, match="gamma"):
        exp_rate_report(trace, p0_offset_1024, Params(1.0, 1.0))


def test_stiffness_guard():
    g = Grid1D(-8.0, 8.0, 512)
    m = FreeEnergyModel(g, lambda x: x * x, kappa_lower=2.0)
    p0 = gaussian_density(g, 0.0, 1.0)
    cfg = DynamicsConfig(dt=0.1, t_end=1.0, record_stride=1, stationary_tol=1e-14)
    with pytest.raises(StiffnessError, match="dt too large"):
        evolve(p0, m, Params(1.0), cfg)


def test_domain_guard_initial_tail():
    g = Grid1D(-4.0, 4.0, 512)
    m = FreeEnergyModel(g, lambda x: x * x, kappa_lower=2.0)
    p0 = gaussian_density(g, 0.0, 1.0)  # ~1e-4 at the ends
    cfg = DynamicsConfig(dt=1e-3, t_end=1.0, record_stride=10, stationary_tol=1e-14)
    with pytest.raises(DomainError, match="domain too small"):
        evolve(p0, m, Params(1.0), cfg)


def test_max_steps_error_carries_trace(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    cfg = DynamicsConfig(dt=1e-3, t_end=10.0, record_stride=10, stationary_tol=1e-14, max_steps=25)
    with pytest.raises(ConvergenceError) as excinfo:
        evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    assert len(excinfo.value.trace) >= 2


def test_solve_stationary_restart_is_immediate(harmonic_2048, sigma1, harmonic_stationary_2048):
    p_star = harmonic_stationary_2048.p_star
    again = solve_stationary(harmonic_2048, sigma1, p_star, tol=5e-5)
    assert again.trace.steps_taken == 0
    assert wasserstein1(again.p_star, p_star) <= 1e-8


def test_gaussian_envelope_on_run(grid_1024, harmonic_1024, sigma1, p0_offset_1024):
    from fisherflow.diagnostics import gaussian_envelope_report

    cfg = DynamicsConfig(dt=1e-3, t_end=1.0, record_stride=100, stationary_tol=1e-14)
    _, trace = evolve(p0_offset_1024, harmonic_1024, sigma1, cfg)
    rep = gaussian_envelope_report(trace.snapshots)
    assert rep.satisfied
    assert rep.c_lower > 0
