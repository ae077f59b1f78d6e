"""Time integration of the regularized mean-field dynamics in wave-function form.

The density flow ∂_t p = −(residual field)·p is advanced through ψ = √p,
which satisfies a linear imaginary-time equation once the mean-field
potential is frozen over a step:

    ∂_t ψ = (σ²/2) Δψ − ½ (δF/δp(p, ·) + γ log p − λ) ψ.

One step is Strang splitting: a potential half-step (pointwise exponential),
a full Crank–Nicolson diffusion step (unconditionally stable tridiagonal
solve, homogeneous Dirichlet on the truncated domain), the second potential
half-step, and renormalization of ∫ψ² = 1. Renormalization realizes λ
implicitly; the recorded λ column is computed explicitly through the
integration-by-parts identity λ = ∫(δF/δp)p + σ²I(p) + γH(p).

Energy, residual norm, moments and boundary mass are recorded along the run;
the energy ledger backs the dissipation, exponential-rate, and monotonicity
diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .functionals import (
    FreeEnergyModel,
    Params,
    entropy,
    first_order_residual,
    fisher_sqrt,
    free_energy,
    lambda_identity,
    linear_derivative,
    residual_l2p,
)
from .grid import (
    Grid1D,
    GridDensity,
    GridField,
    integrate_values,
    moment,
    normalize,
)

BOUNDARY_MASS_LIMIT = 1e-10
INITIAL_TAIL_LIMIT = 1e-12


class NumericsError(RuntimeError):
    """Numerical failure of a run (guards tripped, no convergence)."""


class StiffnessError(NumericsError):
    """dt too large for the current potential scale."""


class DomainError(NumericsError):
    """Domain too small: density no longer negligible at the boundary."""


class ConvergenceError(NumericsError):
    """Run exhausted max_steps; carries the partial trace."""

    def __init__(self, message: str, trace: "EnergyTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DynamicsConfig:
    dt: float
    t_end: float
    record_stride: int = 10
    stationary_tol: float = 1e-6
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt > 0 required")
        if math.isnan(self.t_end) or self.t_end <= 0:
            raise ValueError("t_end > 0 required")
        if self.record_stride < 1:
            raise ValueError("record_stride >= 1 required")
        if not (np.isfinite(self.stationary_tol) and self.stationary_tol > 0):
            raise ValueError("stationary_tol > 0 required")
        if self.max_steps < 1:
            raise ValueError("max_steps >= 1 required")


@dataclass
class DynamicsState:
    """Time t, wave function ψ with ∫ψ² = 1, density p = ψ², current λ."""

    t: float
    psi: GridField
    p: GridDensity
    lam: float

    @classmethod
    def from_density(
        cls, p: GridDensity, m: FreeEnergyModel, params: Params, t: float = 0.0
    ) -> "DynamicsState":
        psi = np.sqrt(p.values)
        norm = math.sqrt(integrate_values(p.grid, psi * psi))
        psi /= norm
        return cls(
            t=t,
            psi=GridField(p.grid, psi),
            p=p,
            lam=lambda_identity(params, m, p),
        )


@dataclass
class EnergyTrace:
    """Ledger of the run: one row per recorded time, plus density snapshots."""

    t: list = field(default_factory=list)
    free_energy: list = field(default_factory=list)
    fisher: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    residual_l2p: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    boundary_mass: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    # Monotonicity ledger over *every* step, not only recorded ones.
    max_step_energy_increase: float = -math.inf
    steps_taken: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def columns(self) -> dict:
        return {
            "t": np.asarray(self.t),
            "F": np.asarray(self.free_energy),
            "I": np.asarray(self.fisher),
            "H": np.asarray(self.entropy),
            "energy": np.asarray(self.energy),
            "residual_l2p": np.asarray(self.residual_l2p),
            "lambda": np.asarray(self.lam),
            "m2": np.asarray(self.second_moment),
            "boundary_mass": np.asarray(self.boundary_mass),
        }


class CrankNicolson:
    """Crank–Nicolson propagator for ∂_t ψ = (σ²/2)Δψ, Dirichlet boundaries."""

    def __init__(self, grid: Grid1D, sigma: float, dt: float):
        self.grid = grid
        self.sigma = sigma
        self.dt = dt
        n_in = grid.n - 2
        r = 0.5 * dt * 0.5 * sigma**2 / grid.dx**2
        self._r = r
        # Banded form of (I - r * Lap) on interior nodes.
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        ab[2, :-1] = -r
        self._ab = ab

    def apply(self, values: np.ndarray) -> np.ndarray:
        """One CN step; boundary nodes are pinned to zero."""
        v = values
        r = self._r
        rhs = (1.0 - 2.0 * r) * v[1:-1] + r * (v[2:] + v[:-2])
        out = np.zeros_like(v)
        out[1:-1] = solve_banded((1, 1), self._ab, rhs)
        return out


def density_from_psi(grid: Grid1D, psi: np.ndarray) -> GridDensity:
    """Density ψ² with log-linear tail extension at the two end nodes.

    The Crank–Nicolson solver pins ψ to zero on the boundary; leaving those
    nodes at the floor would put an artificial cliff into u = −log p and
    poison the residual stencils next to the boundary. The dynamics'
    densities carry Gaussian envelopes, so extending log p linearly across
    the outermost interval is consistent and keeps the boundary monitor
    meaningful.
    """
    v = psi * psi
    if v[1] > 0.0 and v[2] > 0.0:
        v[0] = v[1] * (v[1] / v[2])
    if v[-2] > 0.0 and v[-3] > 0.0:
        v[-1] = v[-2] * (v[-2] / v[-3])
    return normalize(GridField(grid, v))


def boundary_mass(p: GridDensity) -> float:
    """Largest density value among the two outermost node pairs.

    Dirichlet boundaries pin the end nodes themselves to the floor, so the
    adjacent interior nodes are included to keep truncation error observable.
    """
    v = p.values
    return float(max(v[0], v[1], v[-2], v[-1]))


def potential_term(params: Params, m: FreeEnergyModel, p: GridDensity) -> np.ndarray:
    """Frozen potential B = δF/δp(p, ·) + γ log p used by one split step."""
    b = linear_derivative(m, p).values
    if params.gamma != 0.0:
        b = b + params.gamma * np.log(p.values)
    return b


def check_stiffness(dt: float, b: np.ndarray, lam: float):
    scale = float(np.max(np.abs(0.5 * (b - lam))))
    if dt * scale > 0.5:
        raise StiffnessError(
            f"dt too large: dt*max|(delta F/delta p - lambda)/2| = {dt * scale:.3g} > 0.5"
        )


def energy_terms(params: Params, m: FreeEnergyModel, p: GridDensity):
    """Returns (F, I, H, generalized free energy)."""
    f = free_energy(m, p)
    i = fisher_sqrt(p)
    h = entropy(p)
    return f, i, h, f + params.sigma**2 * i + params.gamma * h


def _split_step(
    psi: np.ndarray,
    b: np.ndarray,
    cn: CrankNicolson,
    dt: float,
    grid: Grid1D,
) -> np.ndarray:
    """Strang step for the frozen potential b, renormalized to ∫ψ² = 1."""
    shift = float(np.min(b))
    half = np.exp(-(dt / 2.0) * 0.5 * (b - shift))
    out = half * psi
    out = cn.apply(out)
    out = half * out
    np.maximum(out, 0.0, out=out)
    norm_sq = integrate_values(grid, out * out)
    if not np.isfinite(norm_sq) or norm_sq <= 0.0:
        raise NumericsError("wave function collapsed to zero mass")
    out /= math.sqrt(norm_sq)
    return out


def step(
    state: DynamicsState, m: FreeEnergyModel, params: Params, dt: float
) -> DynamicsState:
    """One Strang-split step of length dt from the given state."""
    grid = state.p.grid
    b = potential_term(params, m, state.p)
    check_stiffness(dt, linear_derivative(m, state.p).values, state.lam)
    cn = CrankNicolson(grid, params.sigma, dt)
    psi = _split_step(state.psi.values, b, cn, dt, grid)
    p = density_from_psi(grid, psi)
    return DynamicsState(
        t=state.t + dt,
        psi=GridField(grid, psi),
        p=p,
        lam=lambda_identity(params, m, p),
    )


def _record(
    trace: EnergyTrace,
    t: float,
    params: Params,
    m: FreeEnergyModel,
    p: GridDensity,
    terms=None,
):
    f, i, h, e = terms if terms is not None else energy_terms(params, m, p)
    res_field, _ = first_order_residual(params, m, p)
    res = residual_l2p(res_field, p)
    bmass = boundary_mass(p)
    trace.t.append(t)
    trace.free_energy.append(f)
    trace.fisher.append(i)
    trace.entropy.append(h)
    trace.energy.append(e)
    trace.residual_l2p.append(res)
    trace.lam.append(lambda_identity(params, m, p))
    trace.second_moment.append(moment(p, 2))
    trace.boundary_mass.append(bmass)
    trace.snapshots.append(p)
    if bmass > BOUNDARY_MASS_LIMIT:
        raise DomainError(
            f"domain too small: boundary density {bmass:.3g} exceeds {BOUNDARY_MASS_LIMIT}"
        )
    return res


def evolve(
    p0: GridDensity,
    m: FreeEnergyModel,
    params: Params,
    cfg: DynamicsConfig,
) -> tuple[DynamicsState, EnergyTrace]:
    """Run the dynamics from p0 until t_end or stationarity.

    Records every ``record_stride`` steps (plus the initial and final rows),
    re-checks the stiffness and truncation guards at each recorded row, and
    tracks the per-step energy increment over all steps for the
    monotonicity ledger.
    """
    grid = p0.grid
    if p0.values[0] > INITIAL_TAIL_LIMIT or p0.values[-1] > INITIAL_TAIL_LIMIT:
        raise DomainError(
            "domain too small: initial density exceeds 1e-12 at an end node"
        )
    state = DynamicsState.from_density(p0, m, params)
    cn = CrankNicolson(grid, params.sigma, cfg.dt)
    trace = EnergyTrace()

    b = potential_term(params, m, state.p)
    check_stiffness(cfg.dt, linear_derivative(m, state.p).values, state.lam)
    terms = energy_terms(params, m, state.p)
    res = _record(trace, state.t, params, m, state.p, terms)
    if res <= cfg.stationary_tol:
        return state, trace

    energy_prev = terms[3]
    n_steps = 0
    while state.t < cfg.t_end - 1e-12 * cfg.dt:
        if n_steps >= cfg.max_steps:
            raise ConvergenceError(
                f"max_steps={cfg.max_steps} exhausted at t={state.t:.6g} "
                f"(residual {trace.residual_l2p[-1]:.3g} > tol {cfg.stationary_tol:.3g})",
                trace,
            )
        b = potential_term(params, m, state.p)
        psi = _split_step(state.psi.values, b, cn, cfg.dt, grid)
        p = density_from_psi(grid, psi)
        state = DynamicsState(
            t=state.t + cfg.dt,
            psi=GridField(grid, psi),
            p=p,
            lam=lambda_identity(params, m, p),
        )
        n_steps += 1
        terms = energy_terms(params, m, p)
        trace.max_step_energy_increase = max(
            trace.max_step_energy_increase, terms[3] - energy_prev
        )
        energy_prev = terms[3]

        recorded = n_steps % cfg.record_stride == 0
        final = state.t >= cfg.t_end - 1e-12 * cfg.dt
        if recorded or final:
            check_stiffness(cfg.dt, linear_derivative(m, p).values, state.lam)
            res = _record(trace, state.t, params, m, p, terms)
            if res <= cfg.stationary_tol:
                break
    trace.steps_taken = n_steps
    return state, trace


@dataclass
class DissipationReport:
    """Centered-difference energy slope versus −∫|residual|²p, row by row."""

    n_rows: int
    n_testable: int
    max_rel_mismatch: float
    note: str = ""

    @property
    def passed_tol(self):
        return self.max_rel_mismatch


def dissipation_check(trace: EnergyTrace, floor: float = 1e-8) -> DissipationReport:
    """Compare dE/dt with −residual² at interior recorded rows.

    Rows where residual² < floor are skipped (no signal against roundoff).
    """
    if len(trace) < 3:
        raise ValueError("dissipation_check needs at least 3 recorded rows")
    t = np.asarray(trace.t)
    e = np.asarray(trace.energy)
    r2 = np.asarray(trace.residual_l2p) ** 2
    mismatches = []
    n_testable = 0
    for i in range(1, len(t) - 1):
        if r2[i] < floor:
            continue
        n_testable += 1
        slope = (e[i + 1] - e[i - 1]) / (t[i + 1] - t[i - 1])
        mismatches.append(abs(slope + r2[i]) / r2[i])
    if n_testable == 0:
        return DissipationReport(len(t), 0, 0.0, note="no testable rows")
    return DissipationReport(len(t), n_testable, float(max(mismatches)))


@dataclass
class StationaryResult:
    p_star: GridDensity
    lambda_star: float
    energy_star: float
    trace: EnergyTrace
    residual: float


def solve_stationary(
    m: FreeEnergyModel,
    params: Params,
    p_guess: GridDensity,
    tol: float,
    dt: float | None = None,
    max_steps: int = 400_000,
    record_stride: int = 10,
) -> StationaryResult:
    """Evolve until the residual L²(p) norm drops below tol.

    dt defaults to the stiffness guard with a 0.4 safety factor, capped at
    1e-3 so the splitting bias stays well below desk-scale tolerances.
    """
    if dt is None:
        b0 = potential_term(params, m, p_guess)
        lam0 = lambda_identity(params, m, p_guess)
        # Respect both the stiffness guard's scale (bare delta F/delta p) and
        # the full split potential including the gamma log p part.
        scale_guard = float(
            np.max(np.abs(0.5 * (linear_derivative(m, p_guess).values - lam0)))
        )
        scale_full = float(np.max(np.abs(0.5 * (b0 - lam0))))
        dt = min(1e-3, 0.4 / max(scale_guard, scale_full, 1e-9))
    cfg = DynamicsConfig(
        dt=dt,
        t_end=np.inf,
        record_stride=record_stride,
        stationary_tol=tol,
        max_steps=max_steps,
    )
    try:
        state, trace = evolve(p_guess, m, params, cfg)
    except ConvergenceError:
        raise
    res = trace.residual_l2p[-1]
    if res > tol:
        raise ConvergenceError(
            f"stationary solve stalled: residual {res:.3g} > tol {tol:.3g}", trace
        )
    # lambda_star is the direct mean-zero normalization constant, independent
    # of the integration-by-parts identity used for the trace column.
    _, lam_star = first_order_residual(params, m, state.p)
    return StationaryResult(
        p_star=state.p,
        lambda_star=lam_star,
        energy_star=trace.energy[-1],
        trace=trace,
        residual=res,
    )


@dataclass
class RateReport:
    """Least-squares exponential rate of the energy gap plus the Fisher bound."""

    rate: float
    r_squared: float
    n_fit_rows: int
    fisher_bound_max_violation: float
    fisher_bound_ok: bool
    gap_monotone: bool


def exp_rate_report(
    trace: EnergyTrace,
    p_star: GridDensity,
    params: Params,
    energy_star: float | None = None,
) -> RateReport:
    """Fit log(energy gap) vs t and check the per-row relative-Fisher bound.

    ``energy_star`` is the fixed-point energy (from solve_stationary); when
    omitted, the smallest recorded energy stands in. Usable fit rows have
    gap in [1e-9, gap_0/10]; fewer than 5 is an error. The per-row check
    (σ²/4)·I(p_t|p*) ≤ gap_t + 1e-8 runs over every recorded row.
    """
    from .functionals import relative_fisher

    if params.gamma != 0.0:
        raise ValueError("exp_rate_report applies to gamma = 0 runs")
    if len(trace) < 3:
        raise ValueError("trace too short")
    t = np.asarray(trace.t)
    e = np.asarray(trace.energy)
    e_star = float(np.min(e)) if energy_star is None else float(energy_star)
    gap = e - e_star
    gap0 = gap[0]
    usable = (gap >= 1e-9) & (gap <= gap0 / 10.0)
    if int(usable.sum()) < 5:
        raise ValueError("trace too short: fewer than 5 usable rows for the rate fit")
    tt, gg = t[usable], np.log(gap[usable])
    slope, intercept = np.polyfit(tt, gg, 1)
    pred = slope * tt + intercept
    ss_res = float(np.sum((gg - pred) ** 2))
    ss_tot = float(np.sum((gg - gg.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    worst = -math.inf
    for p_t, g in zip(trace.snapshots, gap):
        lhs = 0.25 * params.sigma**2 * relative_fisher(p_t, p_star)
        worst = max(worst, lhs - g)
    return RateReport(
        rate=-float(slope),
        r_squared=float(r2),
        n_fit_rows=int(usable.sum()),
        fisher_bound_max_violation=float(worst),
        fisher_bound_ok=worst <= 1e-8,
        gap_monotone=bool(np.all(np.diff(gap) <= 1e-8)),
    )
