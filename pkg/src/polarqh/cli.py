"""
Batch command-line front end
============================

Four subcommands drive the library from scenario config files::

    polarqh eigenstate  --config scenario.cfg --out results/
    polarqh uncertainty --config scenario.cfg --particles 100000
    polarqh simulate    --config scenario.cfg --seed 7
    polarqh evolve      --config scenario.cfg --format csv

Configs are flat ``key = value`` text with dotted sections (``grid.n_r =
800``); a JSON mirror (nested or flat) is accepted.  Unknown keys are
rejected.  All quantities default to natural units (hbar = m = omega = 1).

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 detected violation (quantization or inequality margin), reserved for CI
gating.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import sde, states, uncertainty
from .eigensolver import (SolverError, solve_radial, stationary_residual,
                          winding_number, write_eigenstate_csv)
from .evolution import EvolutionConfig, StepRejected, evolve, write_timeseries_csv
from .geometry import CartesianGrid, DomainError, PolarCellGrid, PolarGrid
from .madelung import PhysicalParams, oscillator_potential
from .uncertainty import EnsembleEvaluation, evaluate_report, write_report_csv

GRID_MARGIN_TOLERANCE = 1e-6
ENSEMBLE_MARGIN_SIGMAS = 3.0


class ConfigError(ValueError):
    """Scenario config failed validation."""


def _as_bool(v: str) -> bool:
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (caster, default); None default means "no default, optional"
SCHEMA = {
    "chart": (str, "polar"),
    "grid.n_r": (int, 800),
    "grid.n_theta": (int, 128),
    "grid.r_max": (float, 8.0),
    "grid.r_min": (float, None),
    "grid.n_x": (int, 256),
    "grid.n_y": (int, 256),
    "grid.half_width": (float, 8.0),
    "physics.mass": (float, 1.0),
    "physics.hbar": (float, 1.0),
    "physics.omega": (float, 1.0),
    "physics.potential": (str, "oscillator"),
    "state.kind": (str, "eigenstate"),
    "state.alpha": (float, 1.0),
    "state.n_r": (int, 0),
    "state.theta_center": (float, np.pi),
    "state.theta_width": (float, 0.3),
    "state.winding": (int, 0),
    "state.center_x": (float, 0.0),
    "state.center_y": (float, 0.0),
    "state.width_x": (float, 1.0),
    "state.width_y": (float, 1.0),
    "state.k_x": (float, 0.0),
    "state.k_y": (float, 0.0),
    "state.displacement": (float, 1.0),
    "state.n_r_a": (int, 0),
    "state.n_r_b": (int, 1),
    "run.particles": (int, 0),
    "run.dt": (float, 1e-3),
    "run.steps": (int, 500),
    "run.seed": (int, 1234),
    "run.direction": (str, "forward"),
    "run.hist_n_r": (int, 16),
    "run.hist_n_theta": (int, 16),
    "run.hist_r_max": (float, 4.0),
    "evolve.dt": (float, 2e-3),
    "evolve.horizon": (float, 1.0),
    "evolve.audit_every": (int, 50),
    "evolve.snapshots": (int, 5),
}

_CHOICES = {
    "chart": ("polar", "cartesian"),
    "physics.potential": ("oscillator", "free"),
    "state.kind": ("eigenstate", "theta_packet", "cartesian_gaussian",
                   "displaced", "beat"),
    "run.direction": ("forward", "backward", "both"),
}

_POSITIVE = ("grid.n_r", "grid.n_theta", "grid.r_max", "grid.n_x", "grid.n_y",
             "grid.half_width", "physics.mass", "physics.hbar", "physics.omega",
             "state.theta_width", "state.width_x", "state.width_y",
             "run.dt", "run.hist_n_r", "run.hist_n_theta", "run.hist_r_max",
             "evolve.dt", "evolve.horizon", "evolve.audit_every")


def _flatten(prefix: str, obj, out: dict):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = obj


class ScenarioConfig:
    """Validated flat key-value scenario description."""

    def __init__(self, values: dict):
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self.values = {}
        bad = []
        for key, raw in values.items():
            caster, _ = SCHEMA[key]
            try:
                val = caster(raw)
            except (TypeError, ValueError):
                bad.append(f"{key}={raw!r}")
                continue
            if key in _CHOICES and val not in _CHOICES[key]:
                bad.append(f"{key}={val!r} (choices: {'/'.join(_CHOICES[key])})")
            elif key in _POSITIVE and val <= 0:
                bad.append(f"{key}={val!r} (must be positive)")
            else:
                self.values[key] = val
        if bad:
            raise ConfigError("invalid config values: " + "; ".join(bad))

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        text = Path(path).read_text()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            flat = {}
            _flatten("", json.loads(text), flat)
            return cls(flat)
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
        return cls(values)

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][1]


# ---------------------------------------------------------------------------
# Scenario building blocks


def build_params(cfg: ScenarioConfig) -> PhysicalParams:
    m = cfg.get("physics.mass")
    hbar = cfg.get("physics.hbar")
    if cfg.get("physics.potential") == "oscillator":
        pot = oscillator_potential(m, cfg.get("physics.omega"))
    else:
        pot = None
    return PhysicalParams(m=m, hbar=hbar, potential=pot)


def build_polar_grid(cfg: ScenarioConfig) -> PolarGrid:
    n_r = cfg.get("grid.n_r")
    n_theta = cfg.get("grid.n_theta")
    r_max = cfg.get("grid.r_max")
    r_min = cfg.get("grid.r_min")
    if r_min is None:
        return PolarGrid.cell_centered(n_r, n_theta, r_max)
    return PolarGrid.uniform(n_r, n_theta, r_min, r_max)


def build_state(cfg: ScenarioConfig, params: PhysicalParams):
    """Return (state, fields, spec_or_None, grid) per the scenario."""
    kind = cfg.get("state.kind")
    omega = cfg.get("physics.omega")
    if kind == "cartesian_gaussian":
        grid = CartesianGrid.uniform(cfg.get("grid.n_x"), cfg.get("grid.n_y"),
                                     cfg.get("grid.half_width"))
        state, fields = states.cartesian_gaussian(
            grid, params,
            center=(cfg.get("state.center_x"), cfg.get("state.center_y")),
            widths=(cfg.get("state.width_x"), cfg.get("state.width_y")),
            wavevector=(cfg.get("state.k_x"), cfg.get("state.k_y")))
        return state, fields, None, grid
    grid = build_polar_grid(cfg)
    if kind == "eigenstate":
        alpha = cfg.get("state.alpha")
        if abs(alpha - round(alpha)) > 1e-12:
            raise ConfigError("uncertainty/simulate need integer state.alpha; "
                              "use the eigenstate command to audit raw alpha")
        spec, state, fields = states.eigenstate_bundle(
            alpha, cfg.get("state.n_r"), grid, params, omega)
        return state, fields, spec, grid
    if kind == "theta_packet":
        state, fields = states.theta_packet(
            grid, params, cfg.get("state.theta_center"),
            cfg.get("state.theta_width"), cfg.get("state.winding"), omega)
        return state, fields, None, grid
    raise ConfigError(f"state.kind {kind!r} is not valid for this command")


def _write_json(path, payload: dict):
    payload = dict(payload)
    payload.setdefault("meta", {})
    payload["meta"]["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_eigenstate(cfg: ScenarioConfig, out: Path, fmt: str) -> int:
    params = build_params(cfg)
    grid = build_polar_grid(cfg)
    omega = cfg.get("physics.omega")
    V = oscillator_potential(params.m, omega) \
        if cfg.get("physics.potential") == "oscillator" else (lambda r: 0.0 * r)
    alpha = cfg.get("state.alpha")
    spec = solve_radial(V, alpha, grid, params, cfg.get("state.n_r"))
    fields = spec.fields_on(grid, params)
    r_loop = float(spec.r[np.argmax(np.abs(spec.radial_profile))])
    wind = winding_number(fields, params, r_loop)
    res_r, res_th = stationary_residual(spec, alpha, V, params)

    if fmt in ("csv", "both"):
        write_eigenstate_csv(out / "eigenstate.csv", spec)
    if fmt in ("json", "both"):
        _write_json(out / "eigenstate_report.json", {
            "alpha": spec.alpha,
            "n_r": spec.n_r,
            "epsilon": spec.epsilon,
            "winding": {"n": wind.n, "raw": wind.raw, "violation": wind.violation,
                        "r_loop": wind.r_loop},
            "stationary_residual": {"radial": res_r, "angular": res_th},
        })
    if wind.violation:
        print(f"quantization violation: loop value {wind.raw:.6f} "
              f"is not within 0.1 of an integer", file=sys.stderr)
        return 3
    return 0


def _ensemble_for_state(cfg, state, fields, spec, params, n_particles, steps):
    seed = cfg.get("run.seed")
    rng = sde.init_rng(seed)
    if spec is not None:
        r0 = sde.sample_radial_law(spec.r, spec.density(), n_particles, rng)
        th0 = rng.random(n_particles) * 2.0 * np.pi
    else:
        r0, th0 = sde.sample_cells(state.rho, state.grid, n_particles, rng)
    config = sde.EnsembleConfig(n_particles, cfg.get("run.dt"), steps, seed)
    return sde.simulate(r0, th0, fields, params, config)


def cmd_uncertainty(cfg: ScenarioConfig, out: Path, fmt: str) -> int:
    params = build_params(cfg)
    state, fields, spec, grid = build_state(cfg, params)
    report = evaluate_report(state, fields, params)

    particles = cfg.get("run.particles")
    if particles > 0 and grid.chart.kind == "polar":
        run = _ensemble_for_state(cfg, state, fields, spec, params,
                                  particles, cfg.get("run.steps"))
        ev = EnsembleEvaluation(run, fields, params)
        names = uncertainty.COORD_NAMES["polar"]
        report.ensemble = ev.report([(a, b) for a in names for b in names])

    if fmt in ("json", "both"):
        payload = uncertainty.report_to_json(report)
        _write_json(out / "uncertainty_report.json", payload)
    if fmt in ("csv", "both"):
        rows = []
        for key, bound in report.bounds.items():
            rows.append({
                "state": cfg.get("state.kind"), "pair": key,
                "position_variance": bound.position_variance,
                "sigma2_p": bound.momentum.sigma2,
                "kennard_term": bound.kennard_term,
                "covariance_term": bound.covariance_term,
                "lhs": bound.lhs, "rhs": bound.rhs, "margin": bound.margin,
            })
        write_report_csv(out / "uncertainty_summary.csv", rows)

    violated = [k for k, b in report.bounds.items() if b.margin < -GRID_MARGIN_TOLERANCE]
    if report.ensemble:
        violated += [k for k, e in report.ensemble.items()
                     if e["margin"] < -ENSEMBLE_MARGIN_SIGMAS * e["margin_se"]]
    if violated:
        print(f"inequality violation detected for pairs: {sorted(set(violated))}",
              file=sys.stderr)
        return 3
    return 0


def cmd_simulate(cfg: ScenarioConfig, out: Path, fmt: str) -> int:
    particles = cfg.get("run.particles")
    if particles <= 0:
        raise ConfigError("simulate requires run.particles > 0")
    params = build_params(cfg)
    state, fields, spec, grid = build_state(cfg, params)
    if grid.chart.kind != "polar":
        raise ConfigError("simulate runs on the polar chart")

    seed = cfg.get("run.seed")
    dt = cfg.get("run.dt")
    steps = cfg.get("run.steps")
    cells = PolarCellGrid.regular(cfg.get("run.hist_n_r"), cfg.get("run.hist_n_theta"),
                                  cfg.get("run.hist_r_max"))
    directions = {"forward": ("forward",), "backward": ("backward",),
                  "both": ("forward", "backward")}[cfg.get("run.direction")]

    metrics = {"directions": {}}
    reference = _cell_reference_probs(state, cells)
    for direction in directions:
        rng = sde.init_rng(seed)
        if spec is not None:
            r0 = sde.sample_radial_law(spec.r, spec.density(), particles, rng)
            th0 = rng.random(particles) * 2.0 * np.pi
        else:
            r0, th0 = sde.sample_cells(state.rho, state.grid, particles, rng)
        config = sde.EnsembleConfig(particles, dt, steps, seed, direction=direction)
        acc = sde.DriftAccumulator(cells, params, dt) if direction == "forward" else None
        run = sde.simulate(r0, th0, fields, params, config, drift_accumulator=acc)
        est = sde.estimate_density(run, cells)
        entry = {
            "l1_distance": sde.l1_distance(est, reference),
            "outside_fraction": est.outside_fraction,
            "reflection_fraction": run.reflection_fraction,
            "time": run.time,
        }
        if acc is not None and steps > 0:
            drift = acc.finalize()
            for which in ("plus", "minus"):
                val, se = drift.pooled_p_theta(which)
                entry[f"p_theta_{which}"] = val
                entry[f"p_theta_{which}_se"] = se
        metrics["directions"][direction] = entry
        if fmt in ("csv", "both"):
            sde.write_ensemble_csv(out / f"ensemble_{direction}.csv", run)
            _write_density_csv(out / f"density_hist_{direction}.csv", est)
    if fmt in ("json", "both"):
        _write_json(out / "simulate_metrics.json", metrics)
    return 0


def _cell_reference_probs(state, cells: PolarCellGrid) -> np.ndarray:
    """Cell masses of the grid density, by quadrature restricted to cells."""
    grid = state.grid
    w = grid.quad_weights() * state.rho
    r_idx = np.clip(np.searchsorted(cells.r_edges, grid.r, side="right") - 1,
                    0, cells.shape[0] - 1)
    t_idx = np.clip(np.searchsorted(cells.theta_edges, grid.theta, side="right") - 1,
                    0, cells.shape[1] - 1)
    inside_r = (grid.r >= cells.r_edges[0]) & (grid.r <= cells.r_edges[-1])
    probs = np.zeros(cells.shape)
    for a in range(grid.r.size):
        if not inside_r[a]:
            continue
        np.add.at(probs[r_idx[a]], t_idx, w[a])
    return probs


def _write_density_csv(path, est: sde.DensityEstimate):
    r, th = est.cells.mesh()
    rb, tb = np.broadcast_arrays(r, th)
    with open(path, "w", newline="") as fh:
        fh.write("r_center,theta_center,density,cell_probability\n")
        probs = est.cell_probabilities()
        for idx in np.ndindex(est.cells.shape):
            fh.write(f"{rb[idx]:.12g},{tb[idx]:.12g},"
                     f"{est.values[idx]:.12g},{probs[idx]:.12g}\n")


def cmd_evolve(cfg: ScenarioConfig, out: Path, fmt: str) -> int:
    params = build_params(cfg)
    grid = build_polar_grid(cfg)
    omega = cfg.get("physics.omega")
    kind = cfg.get("state.kind")
    V = oscillator_potential(params.m, omega) \
        if cfg.get("physics.potential") == "oscillator" else None
    Vfn = V if V is not None else (lambda r: 0.0 * r)

    if kind == "eigenstate":
        spec, state, _ = states.eigenstate_bundle(
            cfg.get("state.alpha"), cfg.get("state.n_r"), grid, params, omega)
        psi0 = np.sqrt(state.rho) * np.exp(1j * state.theta_phase)
    elif kind == "displaced":
        psi0 = states.displaced_packet(grid, params, cfg.get("state.displacement"), omega)
    elif kind == "beat":
        spec_a = solve_radial(Vfn, cfg.get("state.alpha"), grid, params, cfg.get("state.n_r_a"))
        spec_b = solve_radial(Vfn, cfg.get("state.alpha"), grid, params, cfg.get("state.n_r_b"))
        psi0 = states.beat_superposition(spec_a, spec_b, grid)
    else:
        raise ConfigError(f"state.kind {kind!r} is not valid for evolve")

    config = EvolutionConfig(cfg.get("evolve.dt"), cfg.get("evolve.horizon"),
                             cfg.get("evolve.audit_every"))
    n_snap = cfg.get("evolve.snapshots")
    snap_times = [config.horizon * (k + 1) / n_snap for k in range(n_snap)]
    result = evolve(psi0, grid, params, V, config, snapshot_times=snap_times)

    margins = {}
    for t in sorted(result.snapshots):
        if t == 0.0:
            continue
        state, fields = states.state_and_fields_from_psi(result.snapshots[t], grid, params)
        rep = evaluate_report(state, fields, params,
                              pairs=[("r", "r"), ("theta", "theta")])
        margins[f"{t:.6g}"] = {k: b.margin for k, b in rep.bounds.items()}

    if fmt in ("csv", "both"):
        write_timeseries_csv(out / "evolve_timeseries.csv", result)
    if fmt in ("json", "both"):
        _write_json(out / "evolve_report.json", {
            "norm_drift": float(np.max(np.abs(result.norms - result.norms[0]))),
            "energy_drift": float(np.max(np.abs(result.energies - result.energies[0]))
                                  / abs(result.energies[0])),
            "max_continuity_residual": float(result.continuity.max()),
            "snapshot_margins": margins,
        })
    bad = [t for t, ms in margins.items()
           if any(v < -GRID_MARGIN_TOLERANCE for v in ms.values())]
    if bad:
        print(f"inequality violation during evolution at t in {bad}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polarqh", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("eigenstate", "uncertainty", "simulate", "evolve"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario file (.cfg or .json)")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.add_argument("--particles", type=int, default=None, help="override run.particles")
    return parser


_COMMANDS = {
    "eigenstate": cmd_eigenstate,
    "uncertainty": cmd_uncertainty,
    "simulate": cmd_simulate,
    "evolve": cmd_evolve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ScenarioConfig.from_file(args.config)
        if args.seed is not None:
            cfg.values["run.seed"] = int(args.seed)
        if args.particles is not None:
            cfg.values["run.particles"] = int(args.particles)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args.format)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, StepRejected, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
