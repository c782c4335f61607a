"""
Coordinate-dependent uncertainty bounds
=======================================

Position and momentum statistics of a hydrodynamic state, and the
variance-product inequalities they satisfy.  Momenta are the covariant
stochastic momenta ``p_i^pm = m g_ij u_pm^j``; their spread is
``sigma^2_{p_i} = (Delta^2_{p_i^+} + Delta^2_{p_i^-}) / 2``, which splits
exactly into the osmotic and current parts

    sigma^2_{p_i} = Delta^2_{(p^+ - p^-)/2} + Delta^2_{(p^+ + p^-)/2}.

The general bound for a pair ``(q^i, p_j)`` reads

    Var(q^i) sigma^2_{p_j} >= (hbar^2/4) |delta^i_j - T2 + T3|^2
                              + |Cov(q^i, p_j)|^2,

where ``T2`` is the integral of the total derivative
``d_j { J rho (q^i - E[q^i]) }`` (evaluated as a boundary flux: this is
what makes the bound exact on a truncated or periodic domain) and ``T3``
integrates ``J rho (q^i - E[q^i])`` against the contracted Christoffel
symbol.  On the polar chart this specializes to

    i = j = r:      bracket = 2 - E[r] E[1/r] - (r-boundary flux)
    i = j = theta:  bracket = 1 - 2 pi * int r rho(r, cut) dr

with the angular cut fixed at theta = 0 (statistics use the wrapped angle
on [0, 2*pi), so the boundary term and the moments share the same cut).

Ensemble (Monte Carlo) evaluation mirrors the grid one; the Kennard
bracket is then estimated in its covariance form
``Cov(q^i, p_j^+ - p_j^-) / hbar``, which is the same quantity before the
integration by parts and is directly estimable from particles.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .geometry import POLAR
from .madelung import MadelungState, PhysicalParams, VelocityFields
from .sde import EnsembleRun, FieldInterpolator

__all__ = [
    "COORD_NAMES",
    "PairBound",
    "UncertaintyReport",
    "momentum_fields",
    "momentum_mean",
    "variances",
    "general_bound",
    "radial_bound",
    "angular_bound",
    "evaluate_report",
    "EnsembleEvaluation",
    "report_to_json",
    "write_report_json",
    "write_report_csv",
]

COORD_NAMES = {"polar": ("r", "theta"), "cartesian": ("x", "y")}


def _coord_axis(chart, name_or_axis) -> int:
    if isinstance(name_or_axis, (int, np.integer)):
        axis = int(name_or_axis)
        if axis not in (0, 1):
            raise ValueError("coordinate axis must be 0 or 1")
        return axis
    names = COORD_NAMES[chart.kind]
    if name_or_axis not in names:
        raise ValueError(f"unknown coordinate {name_or_axis!r} for {chart.kind} chart")
    return names.index(name_or_axis)


def _coordinate_values(grid, axis: int) -> np.ndarray:
    q0, q1 = grid.mesh()
    vals = (q0, q1)[axis]
    return np.broadcast_to(vals, grid.shape)


class _GridMoments:
    """Quadrature expectations under rho, excluding flagged nodes."""

    def __init__(self, state: MadelungState):
        self.grid = state.grid
        keep = ~state.node_mask
        self.weights = state.grid.quad_weights() * state.rho * keep

    def expect(self, f) -> float:
        return float(np.sum(self.weights * f))

    def var(self, f) -> float:
        mean = self.expect(f)
        return self.expect((f - mean) ** 2)

    def cov(self, f, g) -> float:
        return self.expect((f - self.expect(f)) * (g - self.expect(g)))


def momentum_fields(fields: VelocityFields, params: PhysicalParams):
    """Covariant stochastic momentum pair fields ``(p^+, p^-)``.

    ``p_i^pm = m g_ij u_pm^j``; in polar coordinates
    ``p_r^pm = m u_pm^r`` and ``p_theta^pm = m r^2 u_pm^theta``.
    """
    grid = fields.grid
    q0, q1 = grid.mesh()
    g = grid.chart.metric_diagonal(q0, q1)
    p_plus = tuple(params.m * g[..., a] * fields.u_plus[a] for a in range(2))
    p_minus = tuple(params.m * g[..., a] * fields.u_minus[a] for a in range(2))
    return p_plus, p_minus


def momentum_mean(state: MadelungState, fields: VelocityFields,
                  params: PhysicalParams, i) -> float:
    """``E[p_i] = m * int J rho g_ij v^j`` (average of the two momenta)."""
    axis = _coord_axis(state.grid.chart, i)
    q0, q1 = state.grid.mesh()
    g = state.grid.chart.metric_diagonal(q0, q1)
    v_cov = params.m * g[..., axis] * fields.v[axis]
    return _GridMoments(state).expect(v_cov)


@dataclass
class MomentumStats:
    mean: float
    delta2_plus: float
    delta2_minus: float
    sigma2: float
    delta2_half_diff: float
    delta2_half_sum: float
    decomposition_residual: float


def _momentum_stats(mom: _GridMoments, pp: np.ndarray, pm: np.ndarray) -> MomentumStats:
    d2p = mom.var(pp)
    d2m = mom.var(pm)
    sigma2 = 0.5 * (d2p + d2m)
    half_diff = mom.var(0.5 * (pp - pm))
    half_sum = mom.var(0.5 * (pp + pm))
    scale = max(sigma2, half_diff, half_sum, 1e-300)
    resid = abs(sigma2 - half_diff - half_sum) / scale
    mean = 0.5 * (mom.expect(pp) + mom.expect(pm))
    return MomentumStats(mean, d2p, d2m, sigma2, half_diff, half_sum, resid)


def variances(state: MadelungState, fields: VelocityFields,
              params: PhysicalParams) -> dict:
    """Position variances and momentum variance decompositions per coordinate.

    Angular statistics use the wrapped angle on ``[0, 2*pi)`` with the cut
    at zero.
    """
    mom = _GridMoments(state)
    p_plus, p_minus = momentum_fields(fields, params)
    names = COORD_NAMES[state.grid.chart.kind]
    out = {}
    for axis, name in enumerate(names):
        q = _coordinate_values(state.grid, axis)
        out[name] = {
            "position_mean": mom.expect(q),
            "position_variance": mom.var(q),
            "momentum": _momentum_stats(mom, p_plus[axis], p_minus[axis]),
        }
    return out


def _boundary_flux(grid, F: np.ndarray, axis_j: int):
    """Flux pair of ``F = J rho (q^i - E)`` through the axis_j boundaries.

    Returns (low, high) boundary contributions; ``T2 = high - low``.  The
    periodic angular axis of a polar grid is handled by the caller, which
    must evaluate the wrap row with coordinate value ``2*pi``.
    """
    if axis_j == 0:
        if grid.periodic_axis1:
            return (float(grid.dtheta * F[0, :].sum()),
                    float(grid.dtheta * F[-1, :].sum()))
        return (float(np.trapezoid(F[0, :], grid.y)),
                float(np.trapezoid(F[-1, :], grid.y)))
    if grid.periodic_axis1:
        raise ValueError("periodic angular flux is evaluated by the caller")
    return (float(np.trapezoid(F[:, 0], grid.x)),
            float(np.trapezoid(F[:, -1], grid.x)))


def general_bound(state: MadelungState, fields: VelocityFields,
                  params: PhysicalParams, i, j) -> "PairBound":
    """Variance-product bound for the pair ``(q^i, p_j)`` on the grid."""
    grid = state.grid
    chart = grid.chart
    if chart.kind not in COORD_NAMES:
        raise ValueError("unsupported chart")
    axis_i = _coord_axis(chart, i)
    axis_j = _coord_axis(chart, j)
    names = COORD_NAMES[chart.kind]
    hbar = params.hbar

    mom = _GridMoments(state)
    q_i = _coordinate_values(grid, axis_i)
    e_qi = mom.expect(q_i)
    var_qi = mom.var(q_i)

    p_plus, p_minus = momentum_fields(fields, params)
    stats = _momentum_stats(mom, p_plus[axis_j], p_minus[axis_j])
    p_mean_field = 0.5 * (p_plus[axis_j] + p_minus[axis_j])
    cov = mom.cov(q_i, p_mean_field)

    q0, q1 = grid.mesh()
    jac = chart.jacobian(q0, q1)
    F = jac * state.rho * (q_i - e_qi)

    if axis_j == 1 and grid.periodic_axis1:
        # wrap row: same density row, theta coordinate evaluated at 2*pi
        top_qi = 2.0 * np.pi if axis_i == 1 else q_i[:, 0]
        f_top = grid.r * state.rho[:, 0] * (top_qi - e_qi)
        f_bot = grid.r * state.rho[:, 0] * (q_i[:, 0] - e_qi)
        flux_lo = float(np.trapezoid(f_bot, grid.r))
        flux_hi = float(np.trapezoid(f_top, grid.r))
    else:
        flux_lo, flux_hi = _boundary_flux(grid, F, axis_j)
    t2 = flux_hi - flux_lo

    gamma = chart.christoffel_trace(q0, q1)[..., axis_j]
    t3 = mom.expect((q_i - e_qi) * gamma)

    delta = 1.0 if axis_i == axis_j else 0.0
    bracket = delta - t2 + t3
    kennard = 0.25 * hbar**2 * bracket**2
    rhs = kennard + cov**2
    lhs = var_qi * stats.sigma2
    return PairBound(
        i=names[axis_i], j=names[axis_j],
        position_variance=var_qi, position_mean=e_qi,
        momentum=stats, covariance=cov,
        kennard_term=kennard, covariance_term=cov**2,
        bracket=bracket, boundary_flux_low=flux_lo, boundary_flux_high=flux_hi,
        christoffel_term=t3, lhs=lhs, rhs=rhs, margin=lhs - rhs,
    )


@dataclass
class PairBound:
    """Both sides of one variance-product inequality, with its pieces."""

    i: str
    j: str
    position_variance: float
    position_mean: float
    momentum: MomentumStats
    covariance: float
    kennard_term: float
    covariance_term: float
    bracket: float
    boundary_flux_low: float
    boundary_flux_high: float
    christoffel_term: float
    lhs: float
    rhs: float
    margin: float
    extras: dict = field(default_factory=dict)


def radial_bound(state: MadelungState, fields: VelocityFields,
                 params: PhysicalParams) -> PairBound:
    """Radial specialization; reports ``E[r]``, ``E[1/r]`` alongside.

    The bracket reduces to ``2 - E[r] E[1/r]`` up to the (reported)
    r-boundary flux, which vanishes as the inner cutoff goes to zero.
    """
    bound = general_bound(state, fields, params, "r", "r")
    mom = _GridMoments(state)
    r = _coordinate_values(state.grid, 0)
    e_r = mom.expect(r)
    e_inv = mom.expect(1.0 / r)
    bound.extras["E_r"] = e_r
    bound.extras["E_inv_r"] = e_inv
    bound.extras["mean_product"] = e_r * e_inv
    return bound


def angular_bound(state: MadelungState, fields: VelocityFields,
                  params: PhysicalParams) -> PairBound:
    """Angular specialization; reports the cut-row integral alongside."""
    bound = general_bound(state, fields, params, "theta", "theta")
    grid = state.grid
    cut = 2.0 * np.pi * np.trapezoid(grid.r * state.rho[:, 0], grid.r)
    bound.extras["cut_integral"] = float(cut)
    return bound


@dataclass
class UncertaintyReport:
    """Everything the bound suite produced for one state."""

    chart_kind: str
    coordinates: dict
    bounds: dict          # "i,j" -> PairBound
    ensemble: Optional[dict] = None

    def margin(self, i: str, j: str) -> float:
        return self.bounds[f"{i},{j}"].margin


def evaluate_report(state: MadelungState, fields: VelocityFields,
                    params: PhysicalParams, pairs=None) -> UncertaintyReport:
    """Grid-quadrature report over the requested coordinate pairs.

    Defaults to all four ``(q^i, p_j)`` combinations.
    """
    names = COORD_NAMES[state.grid.chart.kind]
    if pairs is None:
        pairs = [(a, b) for a in names for b in names]
    bounds = {}
    for a, b in pairs:
        if a == b == names[0]:
            bound = radial_bound(state, fields, params) \
                if state.grid.chart is POLAR else general_bound(state, fields, params, a, b)
        elif a == b == names[1] and state.grid.chart is POLAR:
            bound = angular_bound(state, fields, params)
        else:
            bound = general_bound(state, fields, params, a, b)
        bounds[f"{a},{b}"] = bound
    return UncertaintyReport(state.grid.chart.kind,
                             variances(state, fields, params), bounds)


# ---------------------------------------------------------------------------
# Ensemble evaluation


def _jackknife_se(stat_fn, n: int, blocks: int = 50) -> float:
    """Grouped-jackknife standard error of ``stat_fn(mask)``.

    ``stat_fn`` maps an index mask (kept particles) to a scalar.
    """
    block_id = np.arange(n) % blocks
    full = np.arange(n)
    estimates = np.empty(blocks)
    for b in range(blocks):
        estimates[b] = stat_fn(full[block_id != b])
    mean = estimates.mean()
    return float(np.sqrt((blocks - 1) / blocks * np.sum((estimates - mean) ** 2)))


class EnsembleEvaluation:
    """Monte Carlo counterpart of the grid report.

    Momenta are the drift fields interpolated at each particle; ``1/r`` is
    clipped at ``1/r_clip`` with the clipped fraction reported.  Standard
    errors come from a grouped jackknife over particles.
    """

    def __init__(self, run: EnsembleRun, fields: VelocityFields,
                 params: PhysicalParams, r_clip: Optional[float] = None,
                 blocks: int = 50):
        grid = fields.grid
        self.params = params
        self.blocks = blocks
        r = run.r
        theta = run.theta
        self.n = r.size
        up = FieldInterpolator.from_fields(fields, "u_plus")(r, theta)
        um = FieldInterpolator.from_fields(fields, "u_minus")(r, theta)
        m = params.m
        self.samples = {
            "r": r,
            "theta": theta,
            "p_plus_r": m * up[0],
            "p_minus_r": m * um[0],
            "p_plus_theta": m * r**2 * up[1],
            "p_minus_theta": m * r**2 * um[1],
        }
        clip = grid.r_min if r_clip is None else r_clip
        self.clip_fraction = float(np.mean(r < clip))
        self.samples["inv_r"] = 1.0 / np.maximum(r, clip)

    def _pair_arrays(self, i: str, j: str):
        q = self.samples[i]
        pp = self.samples[f"p_plus_{j}"]
        pm = self.samples[f"p_minus_{j}"]
        return q, pp, pm

    def _margin_on(self, idx, i: str, j: str) -> float:
        q, pp, pm = self._pair_arrays(i, j)
        q, pp, pm = q[idx], pp[idx], pm[idx]
        hbar = self.params.hbar
        var_q = q.var()
        sigma2 = 0.5 * (pp.var() + pm.var())
        mid = 0.5 * (pp + pm)
        diff = pp - pm
        cov = np.mean((q - q.mean()) * (mid - mid.mean()))
        bracket = np.mean((q - q.mean()) * (diff - diff.mean())) / hbar
        rhs = 0.25 * hbar**2 * bracket**2 + cov**2
        return var_q * sigma2 - rhs

    def pair_bound(self, i: str, j: str) -> dict:
        """Margin and pieces for one pair, with jackknife standard errors."""
        q, pp, pm = self._pair_arrays(i, j)
        hbar = self.params.hbar
        mid = 0.5 * (pp + pm)
        diff = pp - pm
        cov = float(np.mean((q - q.mean()) * (mid - mid.mean())))
        bracket = float(np.mean((q - q.mean()) * (diff - diff.mean())) / hbar)
        var_q = float(q.var())
        sigma2 = float(0.5 * (pp.var() + pm.var()))
        margin = self._margin_on(np.arange(self.n), i, j)
        margin_se = _jackknife_se(lambda idx: self._margin_on(idx, i, j),
                                  self.n, self.blocks)
        return {
            "i": i, "j": j,
            "position_variance": var_q,
            "position_variance_se": _jackknife_se(
                lambda idx: self.samples[i][idx].var(), self.n, self.blocks),
            "sigma2_p": sigma2,
            "sigma2_p_se": _jackknife_se(
                lambda idx: 0.5 * (pp[idx].var() + pm[idx].var()), self.n, self.blocks),
            "covariance": cov,
            "kennard_bracket": bracket,
            "lhs": var_q * sigma2,
            "rhs": 0.25 * hbar**2 * bracket**2 + cov**2,
            "margin": float(margin),
            "margin_se": margin_se,
            "clip_fraction": self.clip_fraction,
            "n_particles": self.n,
        }

    def moment(self, name: str):
        """Sample mean and SE of one stored per-particle quantity."""
        x = self.samples[name]
        return float(x.mean()), float(x.std(ddof=1) / np.sqrt(self.n))

    def report(self, pairs) -> dict:
        return {f"{a},{b}": self.pair_bound(a, b) for a, b in pairs}


# ---------------------------------------------------------------------------
# Serialization


def _bound_to_dict(bound: PairBound) -> dict:
    d = asdict(bound)
    return d


def report_to_json(report: UncertaintyReport) -> dict:
    coords = {}
    for name, entry in report.coordinates.items():
        coords[name] = {
            "position_mean": entry["position_mean"],
            "position_variance": entry["position_variance"],
            "momentum": asdict(entry["momentum"]),
        }
    out = {
        "chart": report.chart_kind,
        "coordinates": coords,
        "bounds": {key: _bound_to_dict(b) for key, b in report.bounds.items()},
    }
    if report.ensemble is not None:
        out["ensemble"] = report.ensemble
    return out


def write_report_json(path, report: UncertaintyReport, meta: dict = None):
    payload = report_to_json(report)
    if meta:
        payload["meta"] = meta
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


CSV_COLUMNS = ["state", "pair", "position_variance", "sigma2_p", "kennard_term",
               "covariance_term", "lhs", "rhs", "margin"]


def write_report_csv(path, rows: list):
    """Summary table; one row per (state, pair) dict with CSV_COLUMNS keys."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})
