"""
Reference states
================

Builders for the states exercised across the test suite and the CLI:
oscillator eigenstates (solved or closed-form), angle-localized ring
packets, Cartesian Gaussian packets, and displaced (coherent-like)
packets for time evolution.
"""

from __future__ import annotations

import numpy as np

from .eigensolver import EigenstateSpec, solve_radial
from .geometry import CartesianGrid, PolarGrid
from .madelung import (MadelungState, PhysicalParams, VelocityFields,
                       decompose, oscillator_potential)

__all__ = [
    "oscillator_params",
    "analytic_ground_state",
    "eigenstate_bundle",
    "theta_packet",
    "cartesian_gaussian",
    "displaced_packet",
    "beat_superposition",
]


def oscillator_params(m: float = 1.0, hbar: float = 1.0, omega: float = 1.0) -> PhysicalParams:
    return PhysicalParams(m=m, hbar=hbar, potential=oscillator_potential(m, omega))


def analytic_ground_state(grid: PolarGrid, params: PhysicalParams, omega: float = 1.0):
    """Closed-form oscillator ground state ``rho = (m w/pi hbar) exp(-m w r^2/hbar)``."""
    r = grid.mesh()[0]
    a = params.m * omega / params.hbar
    rho = (a / np.pi) * np.exp(-a * r**2) * np.ones(grid.shape)
    state = MadelungState(grid, rho)
    return state, VelocityFields.from_state(state, params)


def eigenstate_bundle(alpha: float, n_r: int, grid: PolarGrid,
                      params: PhysicalParams, omega: float = 1.0):
    """Solve the oscillator eigenstate and lift it to 2D state + fields.

    For non-integer alpha only the fields are meaningful (no single-valued
    phase exists); the state is then built with the nearest integer phase
    and should not be used.
    """
    V = oscillator_potential(params.m, omega)
    spec = solve_radial(V, alpha, grid, params, n_r)
    fields = spec.fields_on(grid, params)
    state = None
    if abs(alpha - round(alpha)) < 1e-12:
        state = spec.state_on(grid, params)
    return spec, state, fields


def _wrapped_gaussian(theta: np.ndarray, center: float, width: float) -> np.ndarray:
    g = np.zeros_like(theta)
    for k in (-1, 0, 1):
        g += np.exp(-((theta - center + 2.0 * np.pi * k) ** 2) / (2.0 * width**2))
    return g


def theta_packet(grid: PolarGrid, params: PhysicalParams, center: float,
                 width: float, winding: int = 0, omega: float = 1.0):
    """Ring packet: oscillator radial profile times a wrapped angle Gaussian.

    ``center`` is the packet center in [0, 2*pi); a center at 0 straddles
    the statistical cut on purpose.  ``winding`` adds a phase ``N*theta``.
    """
    r, th = grid.mesh()
    a = params.m * omega / params.hbar
    rho = np.exp(-a * r**2) * _wrapped_gaussian(th + 0.0 * r, center, width)
    theta_phase = winding * (th + 0.0 * r)
    state = MadelungState(grid, rho, theta_phase, winding=winding)
    return state, VelocityFields.from_state(state, params)


def cartesian_gaussian(grid: CartesianGrid, params: PhysicalParams,
                       center=(0.0, 0.0), widths=(1.0, 1.0), wavevector=(0.0, 0.0)):
    """Gaussian packet with plane-wave phase; widths are the position sigmas."""
    x, y = grid.mesh()
    rho = np.exp(-((x - center[0]) ** 2) / (2.0 * widths[0] ** 2)
                 - ((y - center[1]) ** 2) / (2.0 * widths[1] ** 2)) * np.ones(grid.shape)
    phase = wavevector[0] * x + wavevector[1] * y + 0.0 * rho
    state = MadelungState(grid, rho, phase)
    return state, VelocityFields.from_state(state, params)


def displaced_packet(grid: PolarGrid, params: PhysicalParams,
                     displacement: float, omega: float = 1.0) -> np.ndarray:
    """Real displaced Gaussian (coherent-like) wave function on the polar grid."""
    r, th = grid.mesh()
    x, y = grid.chart.to_cartesian(r, th)
    a = params.m * omega / params.hbar
    psi = np.exp(-0.5 * a * ((x - displacement) ** 2 + y**2)).astype(complex)
    return psi


def beat_superposition(spec_a: EigenstateSpec, spec_b: EigenstateSpec,
                       grid: PolarGrid) -> np.ndarray:
    """Equal-weight superposition of two solved states (shared grid radii)."""
    for spec in (spec_a, spec_b):
        if not np.allclose(spec.r, grid.r):
            raise ValueError("spec radii do not match the grid")
    th = grid.theta[None, :]
    psi_a = spec_a.radial_profile[:, None] * np.exp(1j * round(spec_a.alpha) * th)
    psi_b = spec_b.radial_profile[:, None] * np.exp(1j * round(spec_b.alpha) * th)
    return (psi_a + psi_b) / np.sqrt(2.0)


def state_and_fields_from_psi(psi: np.ndarray, grid, params: PhysicalParams):
    """Decompose a wave function and derive its velocity fields."""
    state = decompose(psi, grid)
    return state, VelocityFields.from_state(state, params)
