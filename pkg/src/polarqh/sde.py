"""
Forward and backward diffusions in polar coordinates
====================================================

Euler-Maruyama integration of the radial/angular stochastic differential
equations

    dr     = u_+^r dt + (nu / r) dt + sqrt(2 nu dt) xi^r
    dtheta = u_+^theta dt + sqrt(2 nu dt) / r xi^theta        (forward)

    dr     = u_-^r dt - (nu / r) dt + sqrt(2 nu |dt|) xi^r
    dtheta = u_-^theta dt + sqrt(2 nu |dt|) / r xi^theta      (backward, dt < 0)

where ``(xi^r, xi^theta)`` is a Cartesian standard-normal pair rotated by
the pre-step angle.  The ``nu/r`` drift comes from the correlation between
the Cartesian noise and the polar frame and keeps the radius positive;
discrete overshoots past the origin are reflected and counted.

Particles carry the unwrapped angle so winding diagnostics stay possible;
densities and drift estimates use the wrapped angle.

Noise streams are derived per particle from ``(master_seed,
particle_index)`` with a counter-based seed split, so ensembles are
bit-reproducible regardless of chunking or scheduling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import PolarCellGrid, PolarGrid
from .madelung import PhysicalParams, VelocityFields

__all__ = [
    "TWO_PI",
    "Particle",
    "NoiseStream",
    "FieldInterpolator",
    "EnsembleConfig",
    "EnsembleRun",
    "Trajectory",
    "DriftAccumulator",
    "DriftEstimate",
    "DensityEstimate",
    "forward_step",
    "backward_step",
    "simulate",
    "estimate_density",
    "estimate_drifts",
    "sample_radial_law",
    "sample_cells",
    "write_ensemble_csv",
]

TWO_PI = 2.0 * np.pi

MIN_DENSITY_PARTICLES = 1000
MIN_CELL_VISITS = 30


@dataclass
class Particle:
    """One walker: radius and unwrapped angle."""

    r: float
    theta_unwrapped: float

    @property
    def winding(self) -> int:
        return int(np.floor(self.theta_unwrapped / TWO_PI))

    @property
    def theta(self) -> float:
        """Wrapped angle in [0, 2*pi)."""
        return float(self.theta_unwrapped - TWO_PI * self.winding)


def _stream_seed(master_seed: int, particle_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(0, particle_index))


class NoiseStream:
    """Per-particle Cartesian noise, reproducible from (master_seed, index)."""

    def __init__(self, master_seed: int, particle_index: int):
        self.master_seed = int(master_seed)
        self.particle_index = int(particle_index)
        self._rng = np.random.default_rng(_stream_seed(master_seed, particle_index))

    def normals(self, n_steps: int) -> np.ndarray:
        """The next ``n_steps`` standard-normal pairs ``(xi^x, xi^y)``."""
        return self._rng.standard_normal((n_steps, 2))


class FieldInterpolator:
    """Bilinear interpolation of a contravariant pair field on a polar grid.

    Radius is clamped to the grid range; the angle wraps periodically.
    """

    def __init__(self, grid: PolarGrid, comp0: np.ndarray, comp1: np.ndarray):
        self.grid = grid
        self.comp0 = np.ascontiguousarray(comp0, dtype=float)
        self.comp1 = np.ascontiguousarray(comp1, dtype=float)

    @classmethod
    def from_fields(cls, fields: VelocityFields, which: str) -> "FieldInterpolator":
        pair = {"v": fields.v, "u_plus": fields.u_plus, "u_minus": fields.u_minus}[which]
        return cls(fields.grid, pair[0], pair[1])

    def __call__(self, r, theta_wrapped):
        grid = self.grid
        r = np.asarray(r, dtype=float)
        th = np.asarray(theta_wrapped, dtype=float)
        i = np.clip(np.searchsorted(grid.r, r), 1, grid.r.size - 1)
        r0 = grid.r[i - 1]
        tr = np.clip((r - r0) / (grid.r[i] - r0), 0.0, 1.0)
        j = np.floor(th / grid.dtheta).astype(int) % grid.n_theta
        jp = (j + 1) % grid.n_theta
        tt = th / grid.dtheta - np.floor(th / grid.dtheta)
        out = []
        for f in (self.comp0, self.comp1):
            f00 = f[i - 1, j]
            f10 = f[i, j]
            f01 = f[i - 1, jp]
            f11 = f[i, jp]
            out.append((1 - tr) * ((1 - tt) * f00 + tt * f01)
                       + tr * ((1 - tt) * f10 + tt * f11))
        return out[0], out[1]


def _step_arrays(r, theta_unwrapped, interp, nu, dt, radial_sign, noise_xy):
    """Shared Euler-Maruyama kernel; dt carries the direction sign."""
    theta_w = np.mod(theta_unwrapped, TWO_PI)
    u0, u1 = interp(r, theta_w)
    cos_t = np.cos(theta_w)
    sin_t = np.sin(theta_w)
    xi_r = cos_t * noise_xy[..., 0] + sin_t * noise_xy[..., 1]
    xi_t = -sin_t * noise_xy[..., 0] + cos_t * noise_xy[..., 1]
    root = np.sqrt(2.0 * nu * abs(dt))
    dr = u0 * dt + radial_sign * (nu / r) * dt + root * xi_r
    dtheta = u1 * dt + (root / r) * xi_t
    r_new = r + dr
    reflected = r_new <= 0.0
    r_new = np.abs(r_new)
    # guard the measure-zero exact origin so the next 1/r stays finite
    r_new = np.maximum(r_new, 1e-300)
    return r_new, theta_unwrapped + dtheta, reflected


def forward_step(p: Particle, fields: VelocityFields, params: PhysicalParams,
                 dt: float, noise) -> Particle:
    """One forward step (dt > 0) driven by the u_+ drift."""
    if dt <= 0:
        raise ValueError("forward step requires dt > 0")
    interp = FieldInterpolator.from_fields(fields, "u_plus")
    r, th, _ = _step_arrays(np.asarray(p.r), np.asarray(p.theta_unwrapped),
                            interp, params.nu, dt, +1.0, np.asarray(noise, dtype=float))
    return Particle(float(r), float(th))


def backward_step(p: Particle, fields: VelocityFields, params: PhysicalParams,
                  dt: float, noise) -> Particle:
    """One backward step (dt < 0) driven by the u_- drift."""
    if dt >= 0:
        raise ValueError("backward step requires dt < 0")
    interp = FieldInterpolator.from_fields(fields, "u_minus")
    r, th, _ = _step_arrays(np.asarray(p.r), np.asarray(p.theta_unwrapped),
                            interp, params.nu, dt, -1.0, np.asarray(noise, dtype=float))
    return Particle(float(r), float(th))


@dataclass
class EnsembleConfig:
    n_particles: int
    dt: float
    n_steps: int
    seed: int
    direction: str = "forward"
    chunk_size: int = 4096

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        if self.dt <= 0 or self.n_steps < 0 or self.n_particles <= 0:
            raise ValueError("need dt > 0, n_steps >= 0, n_particles > 0")


@dataclass
class EnsembleRun:
    """Final ensemble snapshot plus run metadata."""

    config: EnsembleConfig
    time: float
    r: np.ndarray
    theta_unwrapped: np.ndarray
    reflections: int = 0

    @property
    def winding(self) -> np.ndarray:
        return np.floor(self.theta_unwrapped / TWO_PI).astype(int)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_unwrapped - TWO_PI * np.floor(self.theta_unwrapped / TWO_PI)

    @property
    def reflection_fraction(self) -> float:
        total = self.config.n_particles * max(self.config.n_steps, 1)
        return self.reflections / total


@dataclass
class Trajectory:
    """Stored positions at every step, for drift estimation on small runs."""

    times: np.ndarray
    r: np.ndarray                 # (n_steps + 1, n_particles)
    theta_unwrapped: np.ndarray   # (n_steps + 1, n_particles)
    config: EnsembleConfig


class DriftAccumulator:
    """Streaming per-cell conditional averages of step increments.

    Forward increments are binned at the pre-step point (mean forward
    derivative), backward ones at the arrival point (mean backward
    derivative).  The metric-induced ``+-nu/r`` drift is subtracted on
    finalization so the estimates target ``u_pm``.  Covariant angular
    momentum samples ``m r^2 dtheta/dt`` are accumulated alongside with
    their squares for standard-error bands.
    """

    _FIELDS = ("count", "dr", "dtheta", "inv_r", "p_theta", "p_theta_sq")

    def __init__(self, cells: PolarCellGrid, params: PhysicalParams, dt: float):
        self.cells = cells
        self.params = params
        self.dt = float(dt)
        shape = cells.shape
        self.fwd = {k: np.zeros(shape) for k in self._FIELDS}
        self.bwd = {k: np.zeros(shape) for k in self._FIELDS}

    def _flat_index(self, r, theta_wrapped):
        re, te = self.cells.r_edges, self.cells.theta_edges
        inside = (r >= re[0]) & (r < re[-1])
        i = np.clip(np.searchsorted(re, r, side="right") - 1, 0, len(re) - 2)
        j = np.clip(np.searchsorted(te, theta_wrapped, side="right") - 1, 0, len(te) - 2)
        return (i * (len(te) - 1) + j)[inside], inside

    def _scatter(self, store, flat, inside, dr, dtheta, r, m):
        n_flat = store["count"].size
        pth = m * r**2 * dtheta / self.dt
        for key, val in (("count", None), ("dr", dr[inside]), ("dtheta", dtheta[inside]),
                         ("inv_r", 1.0 / r[inside]), ("p_theta", pth[inside]),
                         ("p_theta_sq", pth[inside] ** 2)):
            binned = np.bincount(flat, weights=val, minlength=n_flat)
            store[key] += binned.reshape(store[key].shape)

    def update(self, r_pre, theta_pre_wrapped, r_post, theta_post_wrapped, dr, dtheta):
        m = self.params.m
        flat, inside = self._flat_index(r_pre, theta_pre_wrapped)
        self._scatter(self.fwd, flat, inside, dr, dtheta, r_pre, m)
        flat, inside = self._flat_index(r_post, theta_post_wrapped)
        self._scatter(self.bwd, flat, inside, dr, dtheta, r_post, m)

    def finalize(self) -> "DriftEstimate":
        nu, dt = self.params.nu, self.dt
        est = {}
        for tag, store, sign in (("plus", self.fwd, -1.0), ("minus", self.bwd, +1.0)):
            counts = store["count"]
            ok = counts >= MIN_CELL_VISITS
            with np.errstate(invalid="ignore", divide="ignore"):
                mean_dr = store["dr"] / counts
                mean_dth = store["dtheta"] / counts
                mean_invr = store["inv_r"] / counts
                mean_pth = store["p_theta"] / counts
                var_pth = store["p_theta_sq"] / counts - mean_pth**2
            est[f"u_{tag}_r"] = np.where(ok, mean_dr / dt + sign * nu * mean_invr, np.nan)
            est[f"u_{tag}_theta"] = np.where(ok, mean_dth / dt, np.nan)
            est[f"p_{tag}_theta"] = np.where(ok, mean_pth, np.nan)
            with np.errstate(invalid="ignore", divide="ignore"):
                se = np.sqrt(np.maximum(var_pth, 0.0) / counts)
            est[f"p_{tag}_theta_se"] = np.where(ok, se, np.nan)
            est[f"counts_{tag}"] = counts
            est[f"estimated_{tag}"] = ok
        return DriftEstimate(cells=self.cells, dt=dt, **est)


@dataclass
class DriftEstimate:
    """Per-cell drift estimates; cells below the visit threshold are NaN."""

    cells: PolarCellGrid
    dt: float
    u_plus_r: np.ndarray
    u_plus_theta: np.ndarray
    u_minus_r: np.ndarray
    u_minus_theta: np.ndarray
    p_plus_theta: np.ndarray
    p_plus_theta_se: np.ndarray
    p_minus_theta: np.ndarray
    p_minus_theta_se: np.ndarray
    counts_plus: np.ndarray
    counts_minus: np.ndarray
    estimated_plus: np.ndarray
    estimated_minus: np.ndarray

    def pooled_p_theta(self, which: str = "plus"):
        """Visit-weighted global covariant angular momentum and its SE."""
        counts = getattr(self, f"counts_{which}")
        mean = getattr(self, f"p_{which}_theta")
        se = getattr(self, f"p_{which}_theta_se")
        ok = getattr(self, f"estimated_{which}")
        w = np.where(ok, counts, 0.0)
        total = w.sum()
        pooled = np.nansum(np.where(ok, w * mean, 0.0)) / total
        pooled_var = np.nansum(np.where(ok, (w * se) ** 2, 0.0)) / total**2
        return float(pooled), float(np.sqrt(pooled_var))


def simulate(r0, theta0, fields: VelocityFields, params: PhysicalParams,
             config: EnsembleConfig,
             drift_accumulator: Optional[DriftAccumulator] = None,
             store_trajectory: bool = False):
    """Run an ensemble with per-particle noise streams.

    Parameters
    ----------
    r0, theta0 : ndarray
        Initial positions, length ``config.n_particles`` (theta unwrapped).
    fields : VelocityFields
        Drift fields; ``u_plus`` drives forward runs, ``u_minus`` backward.
    config : EnsembleConfig
        Backward runs interpret ``dt`` as the step magnitude.
    store_trajectory : bool
        Keep every step (memory-guarded; meant for drift-estimation tests).

    Returns
    -------
    EnsembleRun or (EnsembleRun, Trajectory)
    """
    n = config.n_particles
    r0 = np.asarray(r0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if r0.shape != (n,) or theta0.shape != (n,):
        raise ValueError("initial arrays must have shape (n_particles,)")
    if np.any(r0 <= 0):
        raise ValueError("initial radii must be positive")
    if store_trajectory and n * (config.n_steps + 1) > 2 * 10**7:
        raise ValueError("trajectory storage too large; reduce particles or steps")

    forward = config.direction == "forward"
    interp = FieldInterpolator.from_fields(fields, "u_plus" if forward else "u_minus")
    dt_signed = config.dt if forward else -config.dt
    radial_sign = 1.0 if forward else -1.0

    r_out = np.empty(n)
    th_out = np.empty(n)
    reflections = 0
    traj = None
    if store_trajectory:
        traj = Trajectory(
            times=dt_signed * np.arange(config.n_steps + 1),
            r=np.empty((config.n_steps + 1, n)),
            theta_unwrapped=np.empty((config.n_steps + 1, n)),
            config=config,
        )

    for lo in range(0, n, config.chunk_size):
        hi = min(lo + config.chunk_size, n)
        size = hi - lo
        noise = np.empty((size, config.n_steps, 2))
        for k in range(size):
            noise[k] = NoiseStream(config.seed, lo + k).normals(config.n_steps)
        r = r0[lo:hi].copy()
        th = theta0[lo:hi].copy()
        if store_trajectory:
            traj.r[0, lo:hi] = r
            traj.theta_unwrapped[0, lo:hi] = th
        for s in range(config.n_steps):
            r_new, th_new, refl = _step_arrays(
                r, th, interp, params.nu, dt_signed, radial_sign, noise[:, s, :])
            reflections += int(refl.sum())
            if drift_accumulator is not None:
                drift_accumulator.update(
                    r, np.mod(th, TWO_PI), r_new, np.mod(th_new, TWO_PI),
                    r_new - r, th_new - th)
            r, th = r_new, th_new
            if store_trajectory:
                traj.r[s + 1, lo:hi] = r
                traj.theta_unwrapped[s + 1, lo:hi] = th
        r_out[lo:hi] = r
        th_out[lo:hi] = th

    run = EnsembleRun(config, dt_signed * config.n_steps, r_out, th_out, reflections)
    if store_trajectory:
        return run, traj
    return run


@dataclass
class DensityEstimate:
    values: np.ndarray
    cells: PolarCellGrid
    n_particles: int
    outside_fraction: float

    def cell_probabilities(self) -> np.ndarray:
        return self.values * self.cells.cell_volumes()


def estimate_density(run: EnsembleRun, cells: PolarCellGrid) -> DensityEstimate:
    """Histogram density on (r, wrapped theta) cells.

    Counts are divided by the particle total and by the exact cell volume
    (the radial Jacobian), so the result integrates to one over the cell
    grid up to the fraction of particles outside the radial range.
    """
    n = run.r.size
    if n < MIN_DENSITY_PARTICLES:
        raise ValueError(f"need at least {MIN_DENSITY_PARTICLES} particles")
    counts, _, _ = np.histogram2d(run.r, run.theta,
                                  bins=[cells.r_edges, cells.theta_edges])
    outside = 1.0 - counts.sum() / n
    values = counts / (n * cells.cell_volumes())
    return DensityEstimate(values, cells, n, outside)


def l1_distance(est: DensityEstimate, reference_probs: np.ndarray) -> float:
    """L1 distance between histogram cell masses and reference cell masses."""
    return float(np.abs(est.cell_probabilities() - reference_probs).sum())


def estimate_drifts(trajectory: Trajectory, cells: PolarCellGrid,
                    params: PhysicalParams) -> DriftEstimate:
    """Drift estimates from a stored trajectory (forward runs only)."""
    if trajectory.config.direction != "forward":
        raise ValueError("drift estimation expects a forward trajectory")
    if trajectory.r.shape[0] < 2:
        raise ValueError("trajectory too short to form increments")
    acc = DriftAccumulator(cells, params, trajectory.config.dt)
    for s in range(trajectory.r.shape[0] - 1):
        r_pre = trajectory.r[s]
        r_post = trajectory.r[s + 1]
        th_pre = trajectory.theta_unwrapped[s]
        th_post = trajectory.theta_unwrapped[s + 1]
        acc.update(r_pre, np.mod(th_pre, TWO_PI), r_post, np.mod(th_post, TWO_PI),
                   r_post - r_pre, th_post - th_pre)
    return acc.finalize()


def sample_radial_law(r_nodes: np.ndarray, density_1d: np.ndarray, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw radii from the law ``P(r) dr ~ r * density_1d(r) dr``."""
    pdf = np.asarray(r_nodes) * np.asarray(density_1d)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(r_nodes))])
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, r_nodes)


def sample_cells(rho: np.ndarray, grid, n: int, rng: np.random.Generator):
    """Cell-level sampler from a gridded density (piecewise-constant law).

    Draws a cell with its quadrature mass, then places the point uniformly
    in area within the cell.  Returns ``(r, theta)`` arrays.
    """
    w = grid.quad_weights() * rho
    p = (w / w.sum()).ravel()
    idx = rng.choice(p.size, size=n, p=p)
    i, j = np.unravel_index(idx, grid.shape)
    if isinstance(grid, PolarCellGrid):
        r_lo, r_hi = grid.r_edges[i], grid.r_edges[i + 1]
        th_lo, th_hi = grid.theta_edges[j], grid.theta_edges[j + 1]
    else:
        r_mid = grid.r
        lo = np.concatenate([[r_mid[0]], 0.5 * (r_mid[1:] + r_mid[:-1])])
        hi = np.concatenate([0.5 * (r_mid[1:] + r_mid[:-1]), [r_mid[-1]]])
        r_lo, r_hi = lo[i], hi[i]
        th_lo = grid.theta[j] - 0.5 * grid.dtheta
        th_hi = grid.theta[j] + 0.5 * grid.dtheta
    r = np.sqrt(r_lo**2 + rng.random(n) * (r_hi**2 - r_lo**2))
    theta = np.mod(th_lo + rng.random(n) * (th_hi - th_lo), TWO_PI)
    return r, theta


def init_rng(master_seed: int) -> np.random.Generator:
    """Generator for initial-condition sampling, independent of particle streams."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(1,)))


def write_ensemble_csv(path, run: EnsembleRun):
    """Dump (particle_id, t, r, theta_wrapped, winding) rows."""
    theta = run.theta
    winding = run.winding
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["particle_id", "t", "r", "theta_wrapped", "winding"])
        for pid in range(run.r.size):
            writer.writerow([pid, f"{run.time:.12g}", f"{run.r[pid]:.12g}",
                             f"{theta[pid]:.12g}", int(winding[pid])])
