"""Birth-death walker Monte Carlo for the mean-field dynamics.

The density is sampled in two linear pieces that share one normalization:
an ensemble of Brownian walkers killed/branched at rate ½·δF/δp follows the
L¹-normalized wave function, and a Feynman-Kac average reconstructs the
unnormalized wave function along each walker; the weighted empirical measure

    p_t ≈ Σ_i [ψ̄(t, X_i) / Σ_k ψ̄(t, X_k)] δ_{X_i}

then approximates the dynamics' marginal. Walkers are initialized by
inverse-CDF sampling of the normalized √p₀, the initial law of the
normalized wave function.

Randomness is counter-based (Philox) keyed by (seed, purpose, step index),
with each particle reading a fixed slot of the per-step array, so runs are
bit-reproducible and independent of thread count. The Feynman-Kac stage of
``sample_flow`` shares one set of M Brownian paths across all particles and
accumulates each path's time-reversed potential integral on the grid before
interpolating at the particles; the common path noise cancels in the
normalized weights, and the grid accumulation keeps the cost at
O((n + N)·M·steps) instead of O(N·M·steps).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from numpy.random import Generator, Philox

from .functionals import FreeEnergyModel, Params, linear_derivative
from .grid import Grid1D, GridDensity, GridField, interp_at, normalize

_STREAM_INIT = 0
_STREAM_DIFFUSION = 1
_STREAM_BRANCH = 2
_STREAM_RESAMPLE = 3
_STREAM_FEYNMAN_KAC = 4


class PopulationCollapse(RuntimeError):
    """Every walker died in one step: dt or the rate field is misconfigured."""


def stream(seed: int, purpose: int, index: int = 0) -> Generator:
    """Philox generator keyed by (seed, purpose, index); no sequential state."""
    return Generator(
        Philox(key=np.uint64(seed), counter=[0, np.uint64(index), np.uint64(purpose), 0])
    )


@dataclass
class ParticleEnsemble:
    """N walker positions plus the counters that define the RNG stream state."""

    positions: np.ndarray
    t: float
    seed: int
    step_index: int = 0
    births: int = 0
    deaths: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 1 or self.positions.size == 0:
            raise ValueError("positions must be a nonempty 1D array")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    @property
    def n(self) -> int:
        return self.positions.size


@dataclass
class PotentialHistory:
    """Recorded δF/δp snapshots with piecewise-constant-in-time lookup."""

    grid: Grid1D
    times: np.ndarray
    snapshots: list
    t_end: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size:
            if self.times[0] != 0.0:
                raise ValueError("history times must start at 0")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("history times must increase")
        if len(self.snapshots) != self.times.size:
            raise ValueError("one snapshot per time required")
        for snap in self.snapshots:
            if not snap.grid.same_as(self.grid):
                raise ValueError("snapshot grids must match")

    def lookup(self, t: float) -> GridField:
        if t < -1e-12 or t > self.t_end + 1e-12:
            raise ValueError(f"t={t} beyond history [0, {self.t_end}]")
        if not self.times.size:
            raise ValueError("history is empty")
        i = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return self.snapshots[max(0, min(i, len(self.snapshots) - 1))]

    def stacked(self) -> np.ndarray:
        return np.stack([s.values for s in self.snapshots])


@dataclass
class WeightedMeasure:
    """Positions with nonnegative weights summing to one."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.positions.shape != self.weights.shape:
            raise ValueError("positions and weights must have equal shape")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.weights))):
            raise ValueError("weighted measure contains non-finite entries")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


def measure_moments(w: WeightedMeasure, k: int) -> float:
    """Σ w_i X_i^k for k <= 4."""
    if not 0 <= k <= 4:
        raise ValueError("moment order k must satisfy 0 <= k <= 4")
    return float(np.dot(w.weights, w.positions**k))


def sample_from_density(p: GridDensity, n: int, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws on the grid."""
    from scipy.integrate import cumulative_trapezoid

    cdf = cumulative_trapezoid(p.values, dx=p.grid.dx, initial=0.0)
    cdf /= cdf[-1]
    return np.interp(uniforms[:n], cdf, p.grid.x)


def birth_death_step(
    e: ParticleEnsemble, rate: GridField, dt: float, sigma: float
) -> ParticleEnsemble:
    """Diffuse, kill at the positive part of the rate, branch at the negative
    part, and resample the population back to exactly N.

    Death probability over dt is 1 − exp(−η⁺dt); a negative rate instead
    spawns one clone with probability 1 − exp(−η⁻dt). The fixed-N resample
    (uniform over survivors and clones) realizes the instantaneous-rebirth
    population control.
    """
    max_rate = float(np.max(np.abs(rate.values)))
    if dt * max_rate > 0.5:
        raise ValueError(f"dt*max|rate| = {dt * max_rate:.3g} > 0.5: shrink dt")
    n = e.n
    xi = stream(e.seed, _STREAM_DIFFUSION, e.step_index).standard_normal(n)
    pos = e.positions + sigma * math.sqrt(dt) * xi
    eta = interp_at(rate, pos)
    u = stream(e.seed, _STREAM_BRANCH, e.step_index).random(n)
    die = (eta > 0.0) & (u < -np.expm1(-eta * dt))
    clone = (eta < 0.0) & (u < -np.expm1(eta * dt))
    pool = np.concatenate([pos[~die], pos[clone]])
    n_deaths = int(die.sum())
    n_births = int(clone.sum())
    if pool.size == 0:
        raise PopulationCollapse("population collapse: every walker died in one step")
    rs = stream(e.seed, _STREAM_RESAMPLE, e.step_index)
    if pool.size >= n:
        keep = rs.choice(pool.size, size=n, replace=False)
    else:
        extra = rs.choice(pool.size, size=n - pool.size, replace=True)
        keep = np.concatenate([np.arange(pool.size), extra])
    return ParticleEnsemble(
        positions=pool[keep],
        t=e.t + dt,
        seed=e.seed,
        step_index=e.step_index + 1,
        births=e.births + n_births,
        deaths=e.deaths + n_deaths,
    )


def _fk_steps(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError("t must be an integer multiple of dt")
    return k


def estimate_barpsi_with_stderr(
    x: float,
    t: float,
    hist: PotentialHistory,
    psi0: GridField,
    M: int,
    dt: float,
    sigma: float,
    rng: Generator,
) -> tuple[float, float]:
    """Feynman-Kac estimate of the unnormalized wave function at (t, x).

    Averages exp(−Σ_k ½·δF/δp(p_{t−s_k}, x+σW_{s_k})·dt)·ψ₀(x+σW_t) over M
    Brownian paths, with the potential read from the history by
    piecewise-constant time-reversed lookup. Returns (mean, standard error).
    """
    if M < 1:
        raise ValueError("M >= 1 required")
    k_steps = _fk_steps(t, dt)
    if k_steps == 0:
        return float(interp_at(psi0, np.asarray([x]))[0]), 0.0
    if t > hist.t_end + 1e-12:
        raise ValueError(f"t={t} beyond history [0, {hist.t_end}]")
    pos = np.full(M, float(x))
    acc = np.zeros(M)
    root_dt = sigma * math.sqrt(dt)
    for k in range(k_steps):
        # Quadrature node s_k stands for the path-time interval
        # [s_k, s_{k+1}); reversed, that is the snapshot active on
        # ((t - s_{k+1}), (t - s_k)], sampled at its midpoint.
        snap = hist.lookup(t - (k + 0.5) * dt)
        acc += interp_at(snap, pos)
        pos += root_dt * rng.standard_normal(M)
    w = np.exp(-0.5 * dt * acc) * interp_at(psi0, pos)
    mean = float(w.mean())
    stderr = float(w.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return mean, stderr


def estimate_barpsi(
    x: float,
    t: float,
    hist: PotentialHistory,
    psi0: GridField,
    M: int,
    dt: float,
    sigma: float,
    rng: Generator,
) -> float:
    return estimate_barpsi_with_stderr(x, t, hist, psi0, M, dt, sigma, rng)[0]


@njit(cache=True, parallel=True)
def _accumulate_path_potentials(hist_rev, shifts, out):
    """out[j, i] += Σ_k hist_rev[k](x_i + shifts[k, j]) by shifted slices.

    On a uniform grid a constant shift has one base offset and one fraction
    for every node, so each (path, step) term is a strided interpolation of
    the snapshot row; outside the grid the edge value is used.
    """
    k_steps, n = hist_rev.shape
    m = shifts.shape[1]
    for j in prange(m):
        for k in range(k_steps):
            row = hist_rev[k]
            s = shifts[k, j]
            b = int(math.floor(s))
            frac = s - b
            lo = -b if b < 0 else 0
            hi = n - 1 - b
            if hi > n:
                hi = n
            if hi < 0:
                hi = 0
            if lo > n:
                lo = n
            for i in range(lo):
                out[j, i] += row[0]
            for i in range(lo, hi):
                out[j, i] += row[i + b] + frac * (row[i + b + 1] - row[i + b])
            for i in range(hi, n):
                out[j, i] += row[n - 1]


@njit(cache=True, parallel=True)
def _accumulate_weights(gpot, final_shift, positions, psi0, inv_dx, x0, halfdt, wsum):
    """wsum[i] += Σ_j exp(−halfdt·g_j(x_i))·ψ₀(x_i + final_shift[j])."""
    m, n = gpot.shape
    n_particles = positions.shape[0]
    for ip in prange(n_particles):
        x = positions[ip]
        s = (x - x0) * inv_dx
        b = int(math.floor(s))
        frac = s - b
        acc = 0.0
        for j in range(m):
            if b < 0:
                g = gpot[j, 0]
            elif b >= n - 1:
                g = gpot[j, n - 1]
            else:
                g = gpot[j, b] + frac * (gpot[j, b + 1] - gpot[j, b])
            sp = (x + final_shift[j] - x0) * inv_dx
            bp = int(math.floor(sp))
            fp = sp - bp
            if bp < 0:
                pv = psi0[0]
            elif bp >= n - 1:
                pv = psi0[n - 1]
            else:
                pv = psi0[bp] + fp * (psi0[bp + 1] - psi0[bp])
            acc += math.exp(-halfdt * g) * pv
        wsum[ip] += acc


def barpsi_at_positions(
    positions: np.ndarray,
    hist: PotentialHistory,
    psi0: GridField,
    M: int,
    dt: float,
    sigma: float,
    seed: int,
    path_chunk: int = 4096,
) -> np.ndarray:
    """Feynman-Kac ψ̄ at many positions with one shared set of M paths.

    Mathematically the same estimator as ``estimate_barpsi`` with common
    random numbers across evaluation points; see the module docstring for
    the cost layout. Deterministic for fixed seed, independent of thread
    count (per-path and per-particle accumulations never cross threads).
    """
    grid = hist.grid
    t = hist.t_end
    k_steps = _fk_steps(t, dt)
    if k_steps == 0:
        return interp_at(psi0, positions)
    if k_steps != len(hist.snapshots):
        raise ValueError("history does not cover [0, t_end] at this dt")
    # Snapshot for FK step k is the recorded field at time t − s_k (floor),
    # i.e. the snapshots in reverse order shifted by one recording slot.
    hist_rev = hist.stacked()[::-1].copy()
    root_dt = sigma * math.sqrt(dt)
    positions = np.asarray(positions, dtype=float)
    wsum = np.zeros(positions.size)
    for j0 in range(0, M, path_chunk):
        j1 = min(M, j0 + path_chunk)
        cols = j1 - j0
        incr = np.empty((k_steps, cols))
        for k in range(k_steps):
            gen = stream(seed, _STREAM_FEYNMAN_KAC, k)
            # Fixed slots: path j always reads element j of step k's array.
            incr[k] = gen.standard_normal(M)[j0:j1]
        paths = np.zeros((k_steps, cols))
        if k_steps > 1:
            np.cumsum(root_dt * incr[:-1], axis=0, out=paths[1:])
        gpot = np.zeros((cols, grid.n))
        _accumulate_path_potentials(hist_rev, paths / grid.dx, gpot)
        final_shift = paths[-1] + root_dt * incr[-1]
        _accumulate_weights(
            gpot,
            final_shift,
            positions,
            psi0.values,
            1.0 / grid.dx,
            grid.x_min,
            0.5 * dt,
            wsum,
        )
    return wsum / M


def empirical_rate_field(
    m: FreeEnergyModel, positions: np.ndarray, grid: Grid1D
) -> GridField:
    """δF/δp of the walker empirical measure, sampled on the grid.

    Linear models: the potential itself. Interaction models: V + K⋆ρ̂ with
    ρ̂ the nearest-node histogram of the walkers (kernel-free binning).
    """
    values = m.v_values.copy()
    if m.kernel is not None:
        idx = np.clip(
            np.rint((positions - grid.x_min) / grid.dx).astype(np.int64), 0, grid.n - 1
        )
        hist = np.bincount(idx, minlength=grid.n).astype(float)
        hist /= positions.size * grid.dx
        values += m.convolve_density(hist)
    return GridField(grid, values)


@dataclass
class SampleFlowRecord:
    """Per-step monitoring row: uniform-weight ensemble statistics."""

    t: float
    mean: float
    second_moment: float
    ess: float
    births: int
    deaths: int


def sample_flow(
    p0: GridDensity,
    m: FreeEnergyModel,
    params: Params,
    N: int,
    M: int,
    dt: float,
    t_end: float,
    seed: int,
    record_stride: int = 10,
) -> tuple[WeightedMeasure, PotentialHistory, list[SampleFlowRecord]]:
    """Full sampling pipeline for the gamma = 0 dynamics.

    Walkers start i.i.d. from the normalized √p₀ (inverse-CDF on the grid),
    advance by birth-death steps against the empirical-measure rate field
    (recorded into the history), and are reweighted at t_end by the shared-
    path Feynman-Kac estimate of the unnormalized wave function.
    """
    if params.gamma != 0.0:
        raise ValueError("sample_flow is defined for gamma = 0")
    if N < 100 or M < 100:
        raise ValueError("N, M >= 100 required")
    grid = p0.grid
    k_steps = _fk_steps(t_end, dt) if t_end > 0 else 0
    psi0 = GridField(grid, np.sqrt(p0.values))
    init_density = normalize(GridField(grid, psi0.values))
    uniforms = stream(seed, _STREAM_INIT).random(N)
    ensemble = ParticleEnsemble(
        positions=sample_from_density(init_density, N, uniforms), t=0.0, seed=seed
    )
    records = []
    times = []
    snapshots = []

    def record(e: ParticleEnsemble):
        records.append(
            SampleFlowRecord(
                t=e.t,
                mean=float(e.positions.mean()),
                second_moment=float(np.mean(e.positions**2)),
                ess=float(e.n),
                births=e.births,
                deaths=e.deaths,
            )
        )

    record(ensemble)
    for k in range(k_steps):
        field = empirical_rate_field(m, ensemble.positions, grid)
        times.append(k * dt)
        snapshots.append(field)
        ensemble = birth_death_step(
            ensemble, GridField(grid, 0.5 * field.values), dt, params.sigma
        )
        if ensemble.step_index % record_stride == 0 or k == k_steps - 1:
            record(ensemble)
    hist = PotentialHistory(
        grid=grid, times=np.asarray(times), snapshots=snapshots, t_end=k_steps * dt
    )
    barpsi = barpsi_at_positions(
        ensemble.positions, hist, psi0, M, dt, params.sigma, seed
    )
    total = float(barpsi.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise PopulationCollapse("all Feynman-Kac weights vanished")
    measure = WeightedMeasure(ensemble.positions, barpsi / total)
    ess = measure.effective_sample_size()
    if ess < N / 10.0:
        warnings.warn(
            f"effective sample size {ess:.0f} below N/10 = {N / 10:.0f}",
            RuntimeWarning,
            stacklevel=2,
        )
    records[-1] = SampleFlowRecord(
        t=ensemble.t,
        mean=measure_moments(measure, 1),
        second_moment=measure_moments(measure, 2),
        ess=ess,
        births=ensemble.births,
        deaths=ensemble.deaths,
    )
    return measure, hist, records
