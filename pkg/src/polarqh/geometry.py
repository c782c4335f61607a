"""
Coordinate charts, grids, and quadrature
========================================

Two-dimensional diagonal-metric charts (polar and Cartesian), the grids
fields live on, and the composite quadrature used for all expectation
values in the package.

Conventions
-----------
* Polar coordinates ``q = (r, theta)`` with ``r > 0`` and
  ``0 <= theta < 2*pi``.  Metric ``g = diag(1, r^2)``, Jacobian ``J = r``,
  contracted connection coefficients ``(1/r, 0)``.
* Cartesian coordinates ``q = (x, y)``: identity metric, ``J = 1``, flat.
* Fields are arrays of shape ``grid.shape = (n0, n1)`` where axis 0 is the
  radial (or x) direction and axis 1 the angular (or y) direction.
* Quadrature: composite trapezoid along axis 0, periodic rectangle rule
  along the angular axis (exact for trigonometric polynomials below the
  Nyquist mode).  Cell grids (histograms) integrate with exact cell
  volumes instead.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DomainError",
    "CoordinateChart",
    "POLAR",
    "CARTESIAN",
    "PolarGrid",
    "CartesianGrid",
    "PolarCellGrid",
    "christoffel_trace",
    "to_cartesian",
    "integrate",
]


class DomainError(ValueError):
    """Raised when coordinates fall outside a chart's domain."""


class CoordinateChart:
    """A 2D orthogonal chart with diagonal metric.

    Parameters
    ----------
    kind : str
        Either ``"polar"`` or ``"cartesian"``.
    """

    KINDS = ("polar", "cartesian")

    def __init__(self, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown chart kind {kind!r}")
        self.kind = kind

    def _check_domain(self, q0):
        if self.kind == "polar" and np.any(np.asarray(q0) <= 0.0):
            raise DomainError("polar chart requires r > 0")

    @staticmethod
    def _broadcast(q0, q1):
        q0 = np.asarray(q0, dtype=float)
        q1 = np.asarray(q1, dtype=float)
        return np.broadcast_arrays(q0 + 0.0 * q1, q1 + 0.0 * q0)

    def metric_diagonal(self, q0, q1):
        """Diagonal entries ``(g_00, g_11)`` of the metric at ``(q0, q1)``."""
        q0, q1 = self._broadcast(q0, q1)
        self._check_domain(q0)
        if self.kind == "polar":
            return np.stack([np.ones_like(q0), q0**2], axis=-1)
        return np.stack([np.ones_like(q0), np.ones_like(q0)], axis=-1)

    def inverse_metric_diagonal(self, q0, q1):
        """Diagonal entries ``(g^00, g^11)`` of the inverse metric."""
        q0, q1 = self._broadcast(q0, q1)
        self._check_domain(q0)
        if self.kind == "polar":
            return np.stack([np.ones_like(q0), q0**-2.0], axis=-1)
        return np.stack([np.ones_like(q0), np.ones_like(q0)], axis=-1)

    def jacobian(self, q0, q1):
        """Volume density ``J = sqrt(det g)``; ``r`` for polar, 1 for Cartesian."""
        q0, q1 = self._broadcast(q0, q1)
        self._check_domain(q0)
        if self.kind == "polar":
            return q0.copy()
        return np.ones_like(q0)

    def christoffel_trace(self, q0, q1):
        """Contracted connection coefficients, one entry per coordinate.

        For a diagonal chart this equals ``d(ln J)/dq^j``: ``(1/r, 0)`` in
        polar coordinates and ``(0, 0)`` in Cartesian ones.
        """
        q0, q1 = self._broadcast(q0, q1)
        self._check_domain(q0)
        zeros = np.zeros_like(q0)
        if self.kind == "polar":
            return np.stack([1.0 / q0, zeros], axis=-1)
        return np.stack([zeros, zeros], axis=-1)

    def to_cartesian(self, q0, q1):
        """Map chart coordinates to Cartesian ``(x, y)``."""
        q0 = np.asarray(q0, dtype=float)
        q1 = np.asarray(q1, dtype=float)
        if self.kind == "polar":
            return q0 * np.cos(q1), q0 * np.sin(q1)
        return q0 + 0.0 * q1, q1 + 0.0 * q0

    def __repr__(self):
        return f"CoordinateChart({self.kind!r})"


POLAR = CoordinateChart("polar")
CARTESIAN = CoordinateChart("cartesian")


def christoffel_trace(chart: CoordinateChart, q):
    """Contracted connection coefficients of `chart` at the point ``q``."""
    return chart.christoffel_trace(q[0], q[1])


def to_cartesian(q):
    """Polar pair ``(r, theta)`` to Cartesian ``(x, y)``."""
    return POLAR.to_cartesian(q[0], q[1])


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError("need at least two quadrature nodes")
    w = np.empty_like(nodes)
    w[1:-1] = 0.5 * (nodes[2:] - nodes[:-2])
    w[0] = 0.5 * (nodes[1] - nodes[0])
    w[-1] = 0.5 * (nodes[-1] - nodes[-2])
    return w


class PolarGrid:
    """Tensor grid on the polar chart: radial nodes x uniform angles.

    The angular nodes are ``theta_k = k * 2*pi / n_theta`` for
    ``k = 0 .. n_theta - 1``; index ``n_theta`` wraps to index 0.

    Parameters
    ----------
    r_nodes : array_like
        Strictly increasing positive radii.
    n_theta : int
        Number of angular nodes (spacing exactly ``2*pi/n_theta``).
    """

    periodic_axis1 = True
    chart = POLAR

    def __init__(self, r_nodes, n_theta: int):
        r = np.asarray(r_nodes, dtype=float)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("r_nodes must be a 1D array with >= 2 entries")
        if r[0] <= 0.0:
            raise DomainError("polar grid requires r_min > 0")
        if np.any(np.diff(r) <= 0.0):
            raise ValueError("r_nodes must be strictly increasing")
        if n_theta < 4:
            raise ValueError("need at least 4 angular nodes")
        self.r = r
        self.n_theta = int(n_theta)
        self.dtheta = 2.0 * np.pi / self.n_theta
        self.theta = self.dtheta * np.arange(self.n_theta)
        self._weights = None

    @classmethod
    def uniform(cls, n_r: int, n_theta: int, r_min: float, r_max: float) -> "PolarGrid":
        """Uniform radial spacing from ``r_min`` to ``r_max`` inclusive."""
        if not (0.0 < r_min < r_max):
            raise DomainError("require 0 < r_min < r_max")
        return cls(np.linspace(r_min, r_max, n_r), n_theta)

    @classmethod
    def cell_centered(cls, n_r: int, n_theta: int, r_max: float) -> "PolarGrid":
        """Radial nodes at cell centers ``(i + 1/2) * r_max / n_r``.

        This is the native grid of the radial eigenvalue solver; the first
        node sits half a spacing away from the coordinate singularity.
        """
        h = r_max / n_r
        return cls(h * (np.arange(n_r) + 0.5), n_theta)

    @property
    def shape(self):
        return (self.r.size, self.n_theta)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def r_min(self) -> float:
        return float(self.r[0])

    def mesh(self):
        """Broadcastable coordinate arrays ``(R, THETA)`` of ``grid.shape``."""
        return self.r[:, None], self.theta[None, :]

    def quad_weights(self) -> np.ndarray:
        """2D quadrature weights including the Jacobian ``J = r``."""
        if self._weights is None:
            self._weights = (_trapezoid_weights(self.r) * self.r)[:, None] * self.dtheta
            self._weights = np.broadcast_to(self._weights, self.shape)
        return self._weights

    def partial0(self, field: np.ndarray) -> np.ndarray:
        """Second-order radial derivative (one-sided at the ends)."""
        return np.gradient(field, self.r, axis=0, edge_order=2)

    def partial1(self, field: np.ndarray, winding: int = 0) -> np.ndarray:
        """Periodic central angular derivative.

        `winding` shifts the wrap continuation by ``2*pi*winding``, which is
        how phase fields with nonzero circulation stay differentiable across
        theta = 0.
        """
        up = np.roll(field, -1, axis=1)
        dn = np.roll(field, 1, axis=1)
        if winding:
            jump = 2.0 * np.pi * winding
            up = up.copy()
            dn = dn.copy()
            up[:, -1] += jump
            dn[:, 0] -= jump
        return (up - dn) / (2.0 * self.dtheta)

    def second1(self, field: np.ndarray, winding: int = 0) -> np.ndarray:
        """Periodic second angular difference."""
        up = np.roll(field, -1, axis=1)
        dn = np.roll(field, 1, axis=1)
        if winding:
            jump = 2.0 * np.pi * winding
            up = up.copy()
            dn = dn.copy()
            up[:, -1] += jump
            dn[:, 0] -= jump
        return (up - 2.0 * field + dn) / self.dtheta**2


class CartesianGrid:
    """Tensor grid on the Cartesian chart with trapezoid quadrature."""

    periodic_axis1 = False
    chart = CARTESIAN

    def __init__(self, x_nodes, y_nodes):
        self.x = np.asarray(x_nodes, dtype=float)
        self.y = np.asarray(y_nodes, dtype=float)
        for nodes in (self.x, self.y):
            if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
                raise ValueError("grid nodes must be 1D and strictly increasing")
        self._weights = None

    @classmethod
    def uniform(cls, n_x: int, n_y: int, half_width: float) -> "CartesianGrid":
        nodes = np.linspace(-half_width, half_width, n_x)
        return cls(nodes, np.linspace(-half_width, half_width, n_y))

    @property
    def shape(self):
        return (self.x.size, self.y.size)

    def mesh(self):
        return self.x[:, None], self.y[None, :]

    def quad_weights(self) -> np.ndarray:
        if self._weights is None:
            self._weights = np.outer(_trapezoid_weights(self.x), _trapezoid_weights(self.y))
        return self._weights

    def partial0(self, field: np.ndarray) -> np.ndarray:
        return np.gradient(field, self.x, axis=0, edge_order=2)

    def partial1(self, field: np.ndarray, winding: int = 0) -> np.ndarray:
        # winding is meaningless on a non-periodic chart; accepted for API parity
        return np.gradient(field, self.y, axis=1, edge_order=2)

    def second1(self, field: np.ndarray, winding: int = 0) -> np.ndarray:
        return self.partial1(self.partial1(field))


class PolarCellGrid:
    """Cell partition of an annulus, used by histogram density estimates.

    Fields live at cell centers; integration uses the exact cell volumes
    ``dtheta * (r_hi^2 - r_lo^2) / 2`` so a normalized histogram integrates
    to one identically.
    """

    periodic_axis1 = True
    chart = POLAR

    def __init__(self, r_edges, theta_edges):
        self.r_edges = np.asarray(r_edges, dtype=float)
        self.theta_edges = np.asarray(theta_edges, dtype=float)
        if self.r_edges[0] < 0.0:
            raise DomainError("cell grid requires r >= 0")
        self.r = 0.5 * (self.r_edges[1:] + self.r_edges[:-1])
        self.theta = 0.5 * (self.theta_edges[1:] + self.theta_edges[:-1])
        dth = np.diff(self.theta_edges)
        vol_r = 0.5 * (self.r_edges[1:] ** 2 - self.r_edges[:-1] ** 2)
        self._weights = np.outer(vol_r, dth)

    @classmethod
    def regular(cls, n_r: int, n_theta: int, r_max: float) -> "PolarCellGrid":
        return cls(np.linspace(0.0, r_max, n_r + 1),
                   np.linspace(0.0, 2.0 * np.pi, n_theta + 1))

    @property
    def shape(self):
        return self._weights.shape

    def mesh(self):
        return self.r[:, None], self.theta[None, :]

    def quad_weights(self) -> np.ndarray:
        return self._weights

    def cell_volumes(self) -> np.ndarray:
        return self._weights


def integrate(field: np.ndarray, grid) -> float:
    """Integrate ``J * field`` over the grid's chart domain.

    Trapezoid rule along the radial (or x) axis and the periodic rectangle
    rule along the angular axis; cell grids use exact cell volumes.

    Raises
    ------
    ValueError
        If the field contains non-finite samples or has the wrong shape.
    """
    field = np.asarray(field)
    if field.shape != grid.shape:
        raise ValueError(f"field shape {field.shape} != grid shape {grid.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError("field contains non-finite samples")
    return float(np.sum(grid.quad_weights() * field))
