"""Command-line front end: config parsing, orchestration, CSV emission.

Subcommands: evolve, ground-state, jko, sample, check, sweep. Runs are
configured by an INI file (one level of sections, key = value), optionally
overridden with repeatable ``--set section.key=value`` flags. Every run
writes its CSVs plus a manifest (config echo, version, seed, wall time)
into the output directory. Exit codes: 0 success, 1 validation error,
2 numerical failure (partial outputs are kept).

CSV schemas (column order is fixed):
  dynamics trace: t,F,I,H,energy,residual_l2p,lambda,m2,boundary_mass
  proximal flow:  i,t,F,I,H,energy,lambda_raw,lambda_eq2.14,inner_steps
  particles:      t,mean,m2,ESS,births,deaths
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .dynamics import (
    DynamicsConfig,
    NumericsError,
    dissipation_check,
    evolve,
    exp_rate_report,
    solve_stationary,
)
from .diagnostics import (
    fisher_convexity_probe,
    gamma_sweep,
    gaussian_envelope_report,
    schrodinger_ground_state,
    spectral_gap,
)
from .functionals import (
    FreeEnergyModel,
    InitialCondition,
    ModelError,
    Params,
    first_order_residual,
    generalized_free_energy,
    residual_l2p,
)
from .grid import Grid1D, GridError, gaussian_density, wasserstein1
from .particles import PopulationCollapse, measure_moments, sample_flow, stream
from .proximal import ProxConfig, compare_to_continuous, jko_flow

TRUNCATION_NOTE = (
    "domain truncation: user-chosen [x_min, x_max]; p < 1e-12 required at both "
    "ends at t = 0 and monitored at every recorded time"
)

_SCHEMA = {
    "grid": {"x_min", "x_max", "n"},
    "model": {"variant", "g", "w", "kernel", "kappa_lower"},
    "params": {"sigma", "gamma"},
    "initial": {"v0", "w0"},
    "dynamics": {"dt", "t_end", "record_stride", "stationary_tol", "max_steps"},
    "proximal": {"h", "T", "inner_tol", "inner_max_steps"},
    "particles": {"N", "M", "dt", "t_end", "seed", "record_stride"},
    "output": {"directory", "formats"},
    "sweep": {"sigmas", "tol"},
}


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def _apply_threads_env():
    value = os.environ.get("FISHERFLOW_THREADS")
    if not value:
        return
    try:
        requested = max(1, int(value))
    except ValueError:
        raise ConfigError("FISHERFLOW_THREADS must be a positive integer")
    import numba

    numba.set_num_threads(min(requested, numba.config.NUMBA_NUM_THREADS))


def load_config(path: str, overrides: list[str]) -> dict:
    """Parse the INI file, apply --set overrides, reject unknown keys."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    cfg: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        cfg[section] = {}
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            cfg[section][key] = value
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown override target '{target}'")
        cfg.setdefault(section, {})[key] = value
    return cfg


def _need(cfg: dict, section: str, key: str) -> str:
    try:
        return cfg[section][key]
    except KeyError:
        raise ConfigError(f"missing required key {section}.{key}")


def _float(cfg, section, key, default=None):
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key} must be a number, got '{raw}'")


def _int(cfg, section, key, default=None):
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key} must be an integer, got '{raw}'")


def parse_shape(spec: str, kind: str):
    """Tiny shape grammar for potentials and kernels.

    quadratic:a[,b[,c]]  -> a*(x-b)**2 + c
    cosine:amp,freq      -> amp*cos(freq*x)
    gaussian:a,s         -> a*exp(-x**2/(2 s**2))   (kernels)
    none                 -> absent
    """
    spec = spec.strip()
    if spec == "none":
        return None
    if ":" not in spec:
        raise ConfigError(f"{kind}: expected 'name:args' or 'none', got '{spec}'")
    name, _, argstr = spec.partition(":")
    try:
        args = [float(a) for a in argstr.split(",") if a.strip() != ""]
    except ValueError:
        raise ConfigError(f"{kind}: non-numeric arguments in '{spec}'")
    if name == "quadratic":
        if not 1 <= len(args) <= 3:
            raise ConfigError(f"{kind}: quadratic takes 1..3 arguments")
        a = args[0]
        b = args[1] if len(args) > 1 else 0.0
        c = args[2] if len(args) > 2 else 0.0
        return lambda x: a * (x - b) ** 2 + c
    if name == "cosine":
        if len(args) != 2:
            raise ConfigError(f"{kind}: cosine takes amp,freq")
        amp, freq = args
        return lambda x: amp * np.cos(freq * x)
    if name == "gaussian":
        if len(args) != 2:
            raise ConfigError(f"{kind}: gaussian takes a,s")
        a, s = args
        if s <= 0:
            raise ConfigError(f"{kind}: gaussian width s > 0 required")
        return lambda x: a * np.exp(-(x**2) / (2.0 * s * s))
    raise ConfigError(f"{kind}: unknown shape '{name}'")


def build_grid(cfg) -> Grid1D:
    try:
        return Grid1D(
            _float(cfg, "grid", "x_min"), _float(cfg, "grid", "x_max"), _int(cfg, "grid", "n")
        )
    except GridError as exc:
        raise ConfigError(f"grid: {exc}")


def build_model(cfg, grid: Grid1D) -> FreeEnergyModel:
    variant = cfg.get("model", {}).get("variant", "linear").strip().lower()
    if variant not in ("linear", "interaction"):
        raise ConfigError("model.variant must be 'linear' or 'interaction'")
    g = parse_shape(_need(cfg, "model", "g"), "model.g")
    if g is None:
        raise ConfigError("model.g must not be 'none'")
    w = parse_shape(cfg.get("model", {}).get("w", "none"), "model.w")
    kernel = parse_shape(cfg.get("model", {}).get("kernel", "none"), "model.kernel")
    if variant == "linear" and kernel is not None:
        raise ConfigError("model.kernel must be 'none' for the linear variant")
    if variant == "interaction" and kernel is None:
        raise ConfigError("model.kernel required for the interaction variant")
    kappa = _float(cfg, "model", "kappa_lower", 1.0)
    if kappa <= 0:
        raise ConfigError("model.kappa_lower > 0 required")
    try:
        return FreeEnergyModel(grid, g, w, kernel=kernel, kappa_lower=kappa)
    except ModelError as exc:
        raise ConfigError(f"model: {exc}")


def build_params(cfg) -> Params:
    sigma = _float(cfg, "params", "sigma")
    gamma = _float(cfg, "params", "gamma", 0.0)
    if sigma <= 0:
        raise ConfigError("params: sigma > 0 required")
    if gamma < 0:
        raise ConfigError("params: gamma >= 0 required")
    return Params(sigma=sigma, gamma=gamma)


def build_initial(cfg, grid: Grid1D):
    v0 = parse_shape(_need(cfg, "initial", "v0"), "initial.v0")
    if v0 is None:
        raise ConfigError("initial.v0 must not be 'none'")
    w0 = parse_shape(cfg.get("initial", {}).get("w0", "none"), "initial.w0")
    return InitialCondition(v0=v0, w0=w0).density(grid)


def build_dynamics_config(cfg) -> DynamicsConfig:
    try:
        return DynamicsConfig(
            dt=_float(cfg, "dynamics", "dt"),
            t_end=_float(cfg, "dynamics", "t_end"),
            record_stride=_int(cfg, "dynamics", "record_stride", 10),
            stationary_tol=_float(cfg, "dynamics", "stationary_tol", 1e-5),
            max_steps=_int(cfg, "dynamics", "max_steps", 400_000),
        )
    except ValueError as exc:
        raise ConfigError(f"dynamics: {exc}")


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(path: str, header: list[str], rows, comment: str | None = None):
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_dat(path: str, xs, ys):
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{_fmt(float(x))} {_fmt(float(y))}\n")


def trace_rows(trace):
    cols = trace.columns()
    keys = ["t", "F", "I", "H", "energy", "residual_l2p", "lambda", "m2", "boundary_mass"]
    for i in range(len(cols["t"])):
        yield [float(cols[k][i]) for k in keys]


def write_trace_csv(path: str, trace):
    write_csv(
        path,
        ["t", "F", "I", "H", "energy", "residual_l2p", "lambda", "m2", "boundary_mass"],
        trace_rows(trace),
        comment=f"fisherflow dynamics trace schema v1; {TRUNCATION_NOTE}",
    )


class RunContext:
    def __init__(self, cfg: dict, out_dir: str, command: str):
        self.cfg = cfg
        self.out_dir = out_dir
        self.command = command
        self.t0 = time.time()
        self.outputs: list[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    @property
    def formats(self) -> set[str]:
        raw = self.cfg.get("output", {}).get("formats", "csv")
        fmts = {f.strip() for f in raw.split(",") if f.strip()}
        unknown = fmts - {"csv", "dat"}
        if unknown:
            raise ConfigError(f"output.formats: unknown formats {sorted(unknown)}")
        return fmts

    def finish(self, extra: dict):
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "outputs": self.outputs,
            "wall_time_s": time.time() - self.t0,
            "truncation_policy": TRUNCATION_NOTE,
        }
        manifest.update(extra)
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
            fh.write("\n")


def cmd_evolve(ctx: RunContext) -> dict:
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    params = build_params(ctx.cfg)
    p0 = build_initial(ctx.cfg, grid)
    dcfg = build_dynamics_config(ctx.cfg)
    state, trace = evolve(p0, model, params, dcfg)
    write_trace_csv(ctx.path("dynamics_trace.csv"), trace)
    if "dat" in ctx.formats:
        write_dat(ctx.path("energy.dat"), trace.t, trace.energy)
        write_dat(ctx.path("residual.dat"), trace.t, trace.residual_l2p)
    report = dissipation_check(trace) if len(trace) >= 3 else None
    return {
        "final_t": state.t,
        "final_energy": trace.energy[-1],
        "final_residual": trace.residual_l2p[-1],
        "max_step_energy_increase": trace.max_step_energy_increase,
        "dissipation_max_rel_mismatch": None if report is None else report.max_rel_mismatch,
    }


def cmd_ground_state(ctx: RunContext) -> dict:
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    params = build_params(ctx.cfg)
    p0 = build_initial(ctx.cfg, grid)
    tol = _float(ctx.cfg, "dynamics", "stationary_tol", 5e-5)
    result = solve_stationary(model, params, p0, tol=tol)
    write_trace_csv(ctx.path("dynamics_trace.csv"), result.trace)
    write_csv(
        ctx.path("ground_state.csv"),
        ["x", "p_star"],
        zip(grid.x, result.p_star.values),
        comment=f"fisherflow ground state schema v1; {TRUNCATION_NOTE}",
    )
    if "dat" in ctx.formats:
        write_dat(ctx.path("ground_state.dat"), grid.x, result.p_star.values)
    extra = {
        "energy_star": result.energy_star,
        "lambda_star": result.lambda_star,
        "residual": result.residual,
    }
    if model.kernel is None and params.gamma == 0.0 and grid.n <= 4096:
        eigenvalue, p_eigen = schrodinger_ground_state(model, params)
        extra["eigen_ground_energy"] = eigenvalue
        extra["energy_rel_diff_vs_eigen"] = abs(result.energy_star - eigenvalue) / abs(
            eigenvalue
        )
        extra["lambda_rel_diff_vs_eigen"] = abs(result.lambda_star - eigenvalue) / abs(
            eigenvalue
        )
        extra["w1_vs_eigen_ground"] = wasserstein1(result.p_star, p_eigen)
    return extra


def cmd_jko(ctx: RunContext) -> dict:
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    params = build_params(ctx.cfg)
    if params.gamma != 0.0:
        raise ConfigError("jko: params.gamma = 0 required")
    p0 = build_initial(ctx.cfg, grid)
    try:
        pcfg = ProxConfig(
            h=_float(ctx.cfg, "proximal", "h"),
            T=_float(ctx.cfg, "proximal", "T"),
            inner_tol=_float(ctx.cfg, "proximal", "inner_tol", 1e-4),
            inner_max_steps=_int(ctx.cfg, "proximal", "inner_max_steps", 400_000),
        )
    except ValueError as exc:
        raise ConfigError(f"proximal: {exc}")
    flow = jko_flow(p0, model, params, pcfg)
    rows = []
    for i in range(len(flow)):
        rows.append(
            [
                i,
                i * flow.h,
                flow.free_energies[i],
                flow.fishers[i],
                flow.entropies[i],
                flow.energies[i],
                flow.lambdas_raw[i],
                flow.lambdas_eq[i],
                flow.inner_steps[i],
            ]
        )
    write_csv(
        ctx.path("jko_flow.csv"),
        ["i", "t", "F", "I", "H", "energy", "lambda_raw", "lambda_eq2.14", "inner_steps"],
        rows,
        comment=f"fisherflow proximal flow schema v1; {TRUNCATION_NOTE}",
    )
    if "dat" in ctx.formats:
        write_dat(ctx.path("jko_energy.dat"), flow.times(), flow.energies)
    dcfg = build_dynamics_config(ctx.cfg)
    _, trace = evolve(p0, model, params, dcfg)
    report = compare_to_continuous(flow, trace)
    return {
        "h": flow.h,
        "n_prox_steps": len(flow) - 1,
        "sup_abs_vs_continuous": report.sup_abs,
        "sup_w1_vs_continuous": report.sup_w1,
        "energy_monotone": bool(np.all(np.diff(flow.energies) <= 1e-8)),
    }


def cmd_sample(ctx: RunContext, seed_override: int | None) -> dict:
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    params = build_params(ctx.cfg)
    p0 = build_initial(ctx.cfg, grid)
    n = _int(ctx.cfg, "particles", "N")
    m_paths = _int(ctx.cfg, "particles", "M")
    dt = _float(ctx.cfg, "particles", "dt")
    t_end = _float(ctx.cfg, "particles", "t_end")
    seed = seed_override if seed_override is not None else _int(ctx.cfg, "particles", "seed", 0)
    stride = _int(ctx.cfg, "particles", "record_stride", 10)
    if n < 100 or m_paths < 100:
        raise ConfigError("particles: N, M >= 100 required")
    if dt <= 0 or t_end < 0:
        raise ConfigError("particles: dt > 0 and t_end >= 0 required")
    measure, hist, records = sample_flow(
        p0, model, params, n, m_paths, dt, t_end, seed, record_stride=stride
    )
    write_csv(
        ctx.path("particles.csv"),
        ["t", "mean", "m2", "ESS", "births", "deaths"],
        (
            [r.t, r.mean, r.second_moment, r.ess, r.births, r.deaths]
            for r in records
        ),
        comment=f"fisherflow particles schema v1; {TRUNCATION_NOTE}",
    )
    write_csv(
        ctx.path("weighted_measure.csv"),
        ["position", "weight"],
        zip(measure.positions, measure.weights),
        comment="fisherflow weighted measure schema v1",
    )
    if "dat" in ctx.formats:
        write_dat(ctx.path("sample_mean.dat"), [r.t for r in records], [r.mean for r in records])
    # Grid oracle comparison at t_end.
    extra = {"seed": seed, "ess": measure.effective_sample_size()}
    if t_end > 0:
        dcfg = DynamicsConfig(
            dt=_float(ctx.cfg, "dynamics", "dt", 1e-3),
            t_end=t_end,
            record_stride=1_000_000,
            stationary_tol=1e-300,
            max_steps=_int(ctx.cfg, "dynamics", "max_steps", 400_000),
        )
        state, _ = evolve(p0, model, params, dcfg)
        from .grid import moment as grid_moment

        extra["oracle_mean"] = grid_moment(state.p, 1)
        extra["oracle_m2"] = grid_moment(state.p, 2)
        extra["weighted_mean"] = measure_moments(measure, 1)
        extra["weighted_m2"] = measure_moments(measure, 2)
        extra["mean_abs_err"] = abs(extra["weighted_mean"] - extra["oracle_mean"])
        extra["m2_abs_err"] = abs(extra["weighted_m2"] - extra["oracle_m2"])
    return extra


def cmd_sweep(ctx: RunContext) -> dict:
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    raw = ctx.cfg.get("sweep", {}).get("sigmas")
    if not raw:
        raise ConfigError("missing required key sweep.sigmas")
    try:
        sigmas = [float(s) for s in raw.split(",")]
    except ValueError:
        raise ConfigError("sweep.sigmas must be a comma-separated number list")
    tol = _float(ctx.cfg, "sweep", "tol", 5e-5)
    rows = gamma_sweep(model, sigmas, tol=tol)
    write_csv(
        ctx.path("sweep.csv"),
        ["sigma", "min_energy", "F_at_min", "gap_to_inf"],
        ([r.sigma, r.min_energy, r.free_energy_at_min, r.gap_to_inf] for r in rows),
        comment=f"fisherflow gamma sweep schema v1; {TRUNCATION_NOTE}",
    )
    if "dat" in ctx.formats:
        write_dat(ctx.path("sweep.dat"), [r.sigma for r in rows], [r.min_energy for r in rows])
    return {
        "sigmas": sigmas,
        "min_energies": [r.min_energy for r in rows],
        "monotone_decreasing": bool(
            np.all(np.diff([r.min_energy for r in rows]) < 0)
        ),
    }


def cmd_check(ctx: RunContext) -> dict:
    """Invariant suite on the configured model; prints one line per check."""
    grid = build_grid(ctx.cfg)
    model = build_model(ctx.cfg, grid)
    params = build_params(ctx.cfg)
    p0 = build_initial(ctx.cfg, grid)
    dcfg = build_dynamics_config(ctx.cfg)
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str):
        checks.append((name, bool(ok), detail))

    state, trace = evolve(p0, model, params, dcfg)
    masses = [float(np.trapezoid(s.values, dx=grid.dx)) for s in trace.snapshots]
    check(
        "mass_conservation",
        max(abs(m - 1.0) for m in masses) <= 1e-10,
        f"max |mass-1| = {max(abs(m - 1.0) for m in masses):.2e}",
    )
    check(
        "energy_monotone_per_step",
        trace.max_step_energy_increase <= 1e-8,
        f"max step increase = {trace.max_step_energy_increase:.2e}",
    )
    check(
        "boundary_mass",
        max(trace.boundary_mass) <= 1e-10,
        f"max boundary density = {max(trace.boundary_mass):.2e}",
    )
    env = gaussian_envelope_report(trace.snapshots)
    check(
        "gaussian_envelope",
        env.satisfied,
        f"c_lower={env.c_lower:.3f} c_upper={env.c_upper:.3f}",
    )
    if len(trace) >= 3:
        rep = dissipation_check(trace)
        ok = rep.n_testable == 0 or rep.max_rel_mismatch <= 2e-2
        note = "no testable rows" if rep.n_testable == 0 else f"max mismatch {rep.max_rel_mismatch:.2e}"
        check("dissipation_identity", ok, note)
    lam_col = trace.lam[-1]
    _, lam_direct = first_order_residual(params, model, trace.snapshots[-1])
    # The quadrature identity carries an O(dx^2) error floor.
    check(
        "lambda_identity",
        abs(lam_col - lam_direct) <= max(1e-6, grid.dx**2),
        f"|identity - direct| = {abs(lam_col - lam_direct):.2e}",
    )
    # First-order inequality at the computed stationary point.
    try:
        stat = solve_stationary(
            model, params, p0, tol=max(dcfg.stationary_tol, 5e-5), max_steps=dcfg.max_steps
        )
        rng = stream(1234, 7)
        worst = math.inf
        res_field, _ = first_order_residual(params, model, stat.p_star)
        e_star = generalized_free_energy(params, model, stat.p_star)
        for _ in range(20):
            q = gaussian_density(
                grid, rng.uniform(-1.0, 1.0), rng.uniform(0.3, 2.0)
            )
            lhs = generalized_free_energy(params, model, q) - e_star
            rhs = float(
                np.trapezoid(
                    res_field.values * (q.values - stat.p_star.values), dx=grid.dx
                )
            )
            worst = min(worst, lhs - rhs)
        check(
            "first_order_inequality",
            worst >= -1e-4,
            f"min slack over 20 q = {worst:.2e}",
        )
        check(
            "stationary_residual",
            stat.residual <= max(dcfg.stationary_tol, 5e-5),
            f"residual = {stat.residual:.2e}",
        )
    except NumericsError as exc:
        check("first_order_inequality", False, f"stationary solve failed: {exc}")
    probe = fisher_convexity_probe(100, stream(99, 8))
    check(
        "fisher_convexity",
        probe.violations == 0 and probe.equality_gap <= 1e-10,
        f"min slack {probe.min_slack:.2e}, equality gap {probe.equality_gap:.2e}",
    )
    if grid.n <= 4096:
        gap = spectral_gap(state.p)
        check(
            "spectral_gap_positive",
            gap.gap > 0,
            f"gap = {gap.gap:.4f}, C_P = {gap.poincare_constant:.4f}",
        )
    lines = []
    for name, ok, detail in checks:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        lines.append(line)
    with open(os.path.join(ctx.out_dir, "check_summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    ctx.outputs.append("check_summary.txt")
    all_ok = all(ok for _, ok, _ in checks)
    if not all_ok:
        raise NumericsError("invariant suite failed; see check_summary.txt")
    return {"checks": {name: ok for name, ok, _ in checks}}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fisherflow",
        description="Fisher-information-regularized mean-field optimization runs",
    )
    parser.add_argument(
        "subcommand",
        choices=["evolve", "ground-state", "jko", "sample", "check", "sweep"],
    )
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value (repeatable)",
    )
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="particle seed override")
    args = parser.parse_args(argv)

    try:
        _apply_threads_env()
        cfg = load_config(args.config, args.overrides)
        out_dir = args.out or cfg.get("output", {}).get("directory") or "fisherflow_out"
        ctx = RunContext(cfg, out_dir, args.subcommand)
        if args.subcommand == "evolve":
            extra = cmd_evolve(ctx)
        elif args.subcommand == "ground-state":
            extra = cmd_ground_state(ctx)
        elif args.subcommand == "jko":
            extra = cmd_jko(ctx)
        elif args.subcommand == "sample":
            extra = cmd_sample(ctx, args.seed)
        elif args.subcommand == "sweep":
            extra = cmd_sweep(ctx)
        else:
            extra = cmd_check(ctx)
        ctx.finish(extra)
    except (ConfigError, GridError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericsError, PopulationCollapse) as exc:
        try:
            ctx.finish({"error": str(exc)})
        except Exception:
            pass
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
