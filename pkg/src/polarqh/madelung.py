"""
Hydrodynamic representation of wave functions
=============================================

A wave function is stored as a density ``rho`` and a velocity potential
``Theta`` (``psi = sqrt(rho) * exp(i*Theta)``).  ``Theta`` may wind: a
single integer ``winding`` records how many times the phase advances by
``2*pi`` around the angular direction, so ``exp(i*Theta)`` stays
single-valued on the grid.

The module computes the current velocity ``v^i = 2 nu g^ij d_j Theta``,
splits it into forward/backward drifts
``u_pm^i = v^i +- nu g^ij d_j ln(rho)``, and evaluates the
density-curvature (quantum) force terms that drive the momentum-balance
equations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import CARTESIAN, POLAR, integrate

__all__ = [
    "FLOOR_FRACTION",
    "PhaseUnwrapError",
    "PhysicalParams",
    "oscillator_potential",
    "MadelungState",
    "VelocityFields",
    "decompose",
    "compose",
    "velocity_from_phase",
    "osmotic_split",
    "quantum_force",
    "write_snapshot_csv",
]

# Nodes with rho below this fraction of max(rho) are excluded from
# log-derivatives: the density-curvature terms are singular where the
# amplitude crosses zero.
FLOOR_FRACTION = 1e-12


class PhaseUnwrapError(ValueError):
    """Raised when no consistent global winding exists for a wave function."""


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, Planck constant, and the (radial) external potential.

    The diffusivity is tied to them: ``nu = hbar / (2 m)``.
    """

    m: float = 1.0
    hbar: float = 1.0
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.m <= 0 or self.hbar <= 0:
            raise ValueError("mass and hbar must be positive")

    @property
    def nu(self) -> float:
        return self.hbar / (2.0 * self.m)

    def potential_on(self, r: np.ndarray) -> np.ndarray:
        if self.potential is None:
            return np.zeros_like(np.asarray(r, dtype=float))
        return np.asarray(self.potential(r), dtype=float)


def oscillator_potential(m: float = 1.0, omega: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Radial harmonic potential ``V(r) = m omega^2 r^2 / 2``."""
    return lambda r: 0.5 * m * omega**2 * np.asarray(r, dtype=float) ** 2


class MadelungState:
    """Normalized density plus velocity potential on a grid.

    Parameters
    ----------
    grid : PolarGrid or CartesianGrid
    rho : ndarray
        Nonnegative density samples; normalized on construction so that
        ``integrate(rho, grid) == 1``.
    theta_phase : ndarray, optional
        Velocity potential samples (defaults to zero).
    winding : int
        Number of ``2*pi`` phase turns along the angular direction.
    """

    def __init__(self, grid, rho, theta_phase=None, winding: int = 0):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != grid.shape:
            raise ValueError("rho shape does not match grid")
        if np.any(rho < 0.0) or not np.all(np.isfinite(rho)):
            raise ValueError("rho must be finite and nonnegative")
        total = integrate(rho, grid)
        if total <= 0.0:
            raise ValueError("rho must have positive mass")
        self.grid = grid
        self.rho = rho / total
        if theta_phase is None:
            theta_phase = np.zeros(grid.shape)
        self.theta_phase = np.asarray(theta_phase, dtype=float)
        if self.theta_phase.shape != grid.shape:
            raise ValueError("theta_phase shape does not match grid")
        self.winding = int(winding)
        if winding and not grid.periodic_axis1:
            raise ValueError("winding only makes sense on a periodic chart")

    @property
    def node_mask(self) -> np.ndarray:
        """True where the density sits below the amplitude floor."""
        return self.rho < FLOOR_FRACTION * self.rho.max()

    def floored_rho(self) -> np.ndarray:
        return np.maximum(self.rho, FLOOR_FRACTION * self.rho.max())


def dilate_mask(mask: np.ndarray, grid, iterations: int = 2) -> np.ndarray:
    """Grow a flagged-node mask by the finite-difference stencil radius.

    Values computed through a flagged node are as unreliable as the node
    itself; residual norms must exclude them too.  The angular axis wraps
    when the grid is periodic.
    """
    out = mask.copy()
    for _ in range(iterations):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        if grid.periodic_axis1:
            grown |= np.roll(out, 1, axis=1)
            grown |= np.roll(out, -1, axis=1)
        else:
            grown[:, 1:] |= out[:, :-1]
            grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _wrap_angle_diff(d: np.ndarray) -> np.ndarray:
    """Wrap phase differences to (-pi, pi]."""
    return d - 2.0 * np.pi * np.round(d / (2.0 * np.pi))

def decompose(psi: np.ndarray, grid) -> MadelungState:
    """Split a complex field into (rho, Theta, winding).

    The phase is unwrapped along each angular row (cyclic differences
    folded to ``(-pi, pi]``), the per-row winding is settled by majority
    vote over rows whose amplitude clears the floor everywhere, and row
    base phases are made radially continuous.

    Raises
    ------
    ValueError
        If psi vanishes identically.
    PhaseUnwrapError
        If rows with reliable amplitude disagree on the winding; the
        offending rows are listed in the message (node-singularity set).
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != grid.shape:
        raise ValueError("psi shape does not match grid")
    amp2 = np.abs(psi) ** 2
    if amp2.max() == 0.0:
        raise ValueError("psi vanishes identically")

    phases = np.angle(psi)
    if not grid.periodic_axis1:
        # Cartesian chart: plain 2D unwrap, no winding.
        theta = np.unwrap(np.unwrap(phases, axis=1), axis=0)
        return MadelungState(grid, amp2, theta, winding=0)

    open_diffs = _wrap_angle_diff(np.diff(phases, axis=1))          # (n_r, n_th-1)
    close_diff = _wrap_angle_diff(phases[:, :1] - phases[:, -1:])   # wrap step
    row_winding = np.round(
        (open_diffs.sum(axis=1) + close_diff[:, 0]) / (2.0 * np.pi)
    ).astype(int)

    valid = np.all(amp2 >= FLOOR_FRACTION * amp2.max(), axis=1)
    if not np.any(valid):
        raise PhaseUnwrapError("no angular row clears the amplitude floor")
    votes = row_winding[valid]
    winner = int(np.bincount(votes - votes.min()).argmax() + votes.min())
    if np.any(votes != winner):
        bad = np.nonzero(valid & (row_winding != winner))[0]
        raise PhaseUnwrapError(
            f"inconsistent winding across rows {bad.tolist()}: "
            "wave-function node inside the domain"
        )

    theta = np.concatenate(
        [phases[:, :1], phases[:, :1] + np.cumsum(open_diffs, axis=1)], axis=1
    )
    # radial continuity: unwrap the base column so row anchors do not jump by 2*pi
    base = theta[:, 0]
    theta = theta + (np.unwrap(base) - base)[:, None]
    return MadelungState(grid, amp2, theta, winding=winner)


def compose(state: MadelungState) -> np.ndarray:
    """Rebuild the complex field ``sqrt(rho) * exp(i*Theta)``."""
    return np.sqrt(state.rho) * np.exp(1j * state.theta_phase)


def velocity_from_phase(state: MadelungState, params: PhysicalParams):
    """Contravariant current velocity ``v^i = 2 nu g^ij d_j Theta``."""
    grid = state.grid
    q0, q1 = grid.mesh()
    ginv = grid.chart.inverse_metric_diagonal(q0, q1)
    two_nu = 2.0 * params.nu
    v0 = two_nu * ginv[..., 0] * grid.partial0(state.theta_phase)
    v1 = two_nu * ginv[..., 1] * grid.partial1(state.theta_phase, winding=state.winding)
    return v0, v1


def osmotic_split(v, rho: np.ndarray, grid, params: PhysicalParams):
    """Forward/backward drifts ``u_pm^i = v^i +- nu g^ij d_j ln(rho)``.

    Nodes below the amplitude floor are evaluated with a clamped density;
    use the state's ``node_mask`` to exclude them from statistics.
    """
    q0, q1 = grid.mesh()
    ginv = grid.chart.inverse_metric_diagonal(q0, q1)
    ln_rho = np.log(np.maximum(rho, FLOOR_FRACTION * rho.max()))
    osm0 = params.nu * ginv[..., 0] * grid.partial0(ln_rho)
    osm1 = params.nu * ginv[..., 1] * grid.partial1(ln_rho)
    u_plus = (v[0] + osm0, v[1] + osm1)
    u_minus = (v[0] - osm0, v[1] - osm1)
    return u_plus, u_minus


@dataclass
class VelocityFields:
    """Current velocity and the two drifts, contravariant components."""

    grid: object
    v: tuple
    u_plus: tuple
    u_minus: tuple
    node_mask: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_state(cls, state: MadelungState, params: PhysicalParams) -> "VelocityFields":
        v = velocity_from_phase(state, params)
        u_plus, u_minus = osmotic_split(v, state.rho, state.grid, params)
        return cls(state.grid, v, u_plus, u_minus, state.node_mask)

    @classmethod
    def stationary(cls, grid, params: PhysicalParams, alpha: float, rho: np.ndarray) -> "VelocityFields":
        """Fields of a rotating stationary state: covariant v_theta = hbar*alpha/m."""
        r = grid.mesh()[0]
        zeros = np.zeros(grid.shape)
        v = (zeros, params.hbar * alpha / params.m / r**2 + zeros)
        u_plus, u_minus = osmotic_split(v, rho, grid, params)
        mask = rho < FLOOR_FRACTION * rho.max()
        return cls(grid, v, u_plus, u_minus, mask)

    def consistency_residual(self) -> float:
        """Max-norm of ``(u_+ + u_-)/2 - v`` over both components.

        Zero by construction when built through `osmotic_split`; kept as a
        guard for hand-assembled fields.
        """
        res = 0.0
        for a in range(2):
            mid = 0.5 * (self.u_plus[a] + self.u_minus[a])
            res = max(res, float(np.max(np.abs(mid - self.v[a]))))
        return res


def _sqrt_rho_curvature(rho: np.ndarray, grid) -> np.ndarray:
    """``(Lap sqrt(rho)) / sqrt(rho)`` with the chart Laplacian."""
    s = np.sqrt(np.maximum(rho, FLOOR_FRACTION * rho.max()))
    if grid.chart is POLAR:
        r = grid.mesh()[0]
        lap = grid.partial0(r * grid.partial0(s)) / r + grid.second1(s) / r**2
    else:
        lap = grid.partial0(grid.partial0(s)) + grid.second1(s)
    return lap / s


def quantum_force(rho: np.ndarray, grid, params: PhysicalParams):
    """Density-curvature acceleration terms of the momentum-balance equations.

    Returns the pair appearing on the right-hand sides of the contravariant
    velocity equations: in polar coordinates
    ``(2 nu^2 d_r[(Lap sqrt(rho))/sqrt(rho)],
    (2 nu^2 / r^2) d_theta[(Lap sqrt(rho))/sqrt(rho)])``.
    """
    curv = _sqrt_rho_curvature(rho, grid)
    two_nu2 = 2.0 * params.nu**2
    f0 = two_nu2 * grid.partial0(curv)
    if grid.chart is POLAR:
        r = grid.mesh()[0]
        f1 = two_nu2 / r**2 * grid.partial1(curv)
    else:
        f1 = two_nu2 * grid.partial1(curv)
    return f0, f1


def write_snapshot_csv(path, state: MadelungState, fields: VelocityFields):
    """Dump (r, theta, rho, Theta, v^r, v^theta) rows for plotting."""
    q0, q1 = state.grid.mesh()
    q0b, q1b = np.broadcast_arrays(q0, q1)
    names = ("r", "theta") if state.grid.chart is POLAR else ("x", "y")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([names[0], names[1], "rho", "Theta", "v_0", "v_1"])
        for idx in np.ndindex(state.grid.shape):
            writer.writerow([
                f"{q0b[idx]:.12g}", f"{q1b[idx]:.12g}",
                f"{state.rho[idx]:.12g}", f"{state.theta_phase[idx]:.12g}",
                f"{fields.v[0][idx]:.12g}", f"{fields.v[1][idx]:.12g}",
            ])
