import math

import numpy as np
import pytest

from fisherflow.grid import (
    DENSITY_FLOOR,
    Grid1D,
    GridDensity,
    GridError,
    GridField,
    density_from_values,
    gaussian_density,
    gradient,
    integrate,
    laplacian,
    moment,
    normalize,
    resample_density,
    wasserstein1,
)


def test_grid_validation():
    with pytest.raises(GridError):
        Grid1D(0.0, 1.0, 2)
    with pytest.raises(GridError):
        Grid1D(1.0, 0.0, 100)
    g = Grid1D(-1.0, 1.0, 201)
    assert g.dx == pytest.approx(0.01)
    assert np.all(np.diff(g.x) > 0)


def test_integrate_constant():
    g = Grid1D(-1.0, 1.0, 201)
    assert integrate(GridField(g, np.ones(g.n))) == pytest.approx(2.0, abs=1e-14)


def test_integrate_odd_function():
    g = Grid1D(-4.0, 4.0, 513)
    assert integrate(GridField(g, g.x.copy())) == pytest.approx(0.0, abs=1e-12)


def test_integrate_normal_pdf_vs_erf():
    g = Grid1D(-8.0, 8.0, 4096)
    pdf = np.exp(-g.x**2 / 2) / math.sqrt(2 * math.pi)
    exact = math.erf(8.0 / math.sqrt(2.0))
    assert integrate(GridField(g, pdf)) == pytest.approx(exact, abs=1e-8)


def test_integrate_rejects_nonfinite():
    g = Grid1D(-1.0, 1.0, 11)
    f = GridField(g, np.ones(g.n))
    f.values[3] = np.inf
    with pytest.raises(GridError, match="non-finite"):
        integrate(f)


def test_gradient_constant_and_affine():
    g = Grid1D(-2.0, 2.0, 101)
    assert np.allclose(gradient(GridField(g, np.full(g.n, 7.0))).values, 0.0)
    d = gradient(GridField(g, 3.0 * g.x)).values
    assert np.allclose(d, 3.0, atol=1e-11)


def test_gradient_refinement_second_order():
    errs = []
    for n in (257, 513):
        g = Grid1D(-3.0, 3.0, n)
        d = gradient(GridField(g, np.sin(g.x))).values
        errs.append(np.max(np.abs(d[1:-1] - np.cos(g.x)[1:-1])))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_laplacian_affine_and_quadratic():
    g = Grid1D(-2.0, 2.0, 101)
    lap = laplacian(GridField(g, 1.5 * g.x + 2.0)).values
    assert np.allclose(lap[1:-1], 0.0, atol=1e-11)
    lap2 = laplacian(GridField(g, g.x**2)).values
    assert np.allclose(lap2[1:-1], 2.0, atol=1e-9)
    # boundary rows copy the nearest interior value
    assert lap2[0] == lap2[1] and lap2[-1] == lap2[-2]


def test_laplacian_refinement_second_order():
    errs = []
    for n in (257, 513):
        g = Grid1D(-4.0, 4.0, n)
        f = np.exp(-g.x**2)
        exact = (4 * g.x**2 - 2) * f
        lap = laplacian(GridField(g, f)).values
        errs.append(np.max(np.abs(lap[1:-1] - exact[1:-1])))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_normalize_gaussian_scaling():
    g = Grid1D(-8.0, 8.0, 1025)
    p = normalize(GridField(g, 5.0 * np.exp(-g.x**2 / 2)))
    ref = gaussian_density(g, 0.0, 1.0)
    assert np.max(np.abs(p.values - ref.values)) < 1e-12


def test_normalize_idempotent():
    g = Grid1D(-8.0, 8.0, 513)
    p = gaussian_density(g, 0.3, 1.1)
    again = normalize(p.as_field())
    assert np.max(np.abs(p.values - again.values)) < 1e-12


def test_normalize_clamps_negative_dip():
    g = Grid1D(-8.0, 8.0, 513)
    v = np.exp(-g.x**2 / 2)
    v[200:210] = -0.5
    p = normalize(GridField(g, v))
    assert np.all(p.values >= DENSITY_FLOOR)
    assert integrate(p.as_field()) == pytest.approx(1.0, abs=1e-10)


def test_normalize_degenerate():
    g = Grid1D(-1.0, 1.0, 11)
    with pytest.raises(GridError, match="degenerate mass"):
        normalize(GridField(g, np.full(g.n, -1.0)))


def test_density_invariants():
    g = Grid1D(-1.0, 1.0, 11)
    with pytest.raises(GridError):
        GridDensity(g, np.ones(g.n))  # mass 2, not 1


def test_moments():
    g = Grid1D(-10.0, 10.0, 4096)
    p = gaussian_density(g, 0.0, 1.0)
    assert moment(p, 0) == pytest.approx(1.0, abs=1e-12)
    assert moment(p, 1) == pytest.approx(0.0, abs=1e-8)
    assert moment(p, 2) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(GridError):
        moment(p, 5)


def test_wasserstein_identity_and_shift():
    g = Grid1D(-10.0, 10.0, 4096)
    p = gaussian_density(g, 0.0, 1.0)
    q = gaussian_density(g, 0.5, 1.0)
    assert wasserstein1(p, p) == 0.0
    assert wasserstein1(p, q) == pytest.approx(0.5, abs=1e-4)
    assert wasserstein1(p, q) == wasserstein1(q, p)


def test_wasserstein_triangle_inequality():
    g = Grid1D(-10.0, 10.0, 1024)
    rng = np.random.default_rng(5)
    ps = []
    for _ in range(3):
        v = np.zeros(g.n)
        for _ in range(2):
            v += rng.uniform(0.2, 1.0) * np.exp(
                -((g.x - rng.uniform(-2, 2)) ** 2) / (2 * rng.uniform(0.3, 1.5))
            )
        ps.append(density_from_values(g, v))
    d01 = wasserstein1(ps[0], ps[1])
    d12 = wasserstein1(ps[1], ps[2])
    d02 = wasserstein1(ps[0], ps[2])
    assert d02 <= d01 + d12 + 1e-12


def test_wasserstein_grid_mismatch():
    p = gaussian_density(Grid1D(-8.0, 8.0, 512), 0.0, 1.0)
    q = gaussian_density(Grid1D(-8.0, 8.0, 513), 0.0, 1.0)
    with pytest.raises(GridError):
        wasserstein1(p, q)


def test_discrete_integration_by_parts():
    # integrate(f' p) = -integrate(f p') for decaying fields; the central
    # difference matrix is skew-symmetric on interior rows, so the discrete
    # identity is exact up to boundary terms far below the O(dx^2) bound.
    for n in (513, 1025):
        g = Grid1D(-8.0, 8.0, n)
        f = np.sin(g.x) * np.exp(-g.x**2 / 4)
        p = gaussian_density(g, 0.2, 0.9)
        lhs = integrate(GridField(g, gradient(GridField(g, f)).values * p.values))
        rhs = -integrate(GridField(g, f * gradient(p.as_field()).values))
        assert abs(lhs - rhs) < 1e-12


def test_resample_density_preserves_shape():
    g = Grid1D(-8.0, 8.0, 513)
    fine = Grid1D(-8.0, 8.0, 2049)
    p = gaussian_density(g, 0.4, 1.2)
    q = resample_density(p, fine)
    ref = gaussian_density(fine, 0.4, 1.2)
    assert np.max(np.abs(q.values - ref.values)) < 1e-6
