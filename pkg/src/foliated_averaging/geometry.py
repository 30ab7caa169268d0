"""Foliated charts, vertical projections and vector-field decomposition.

A chart maps a tubular neighbourhood ``U`` of a compact leaf to ``L x V``,
``p -> (u, pi(p))``.  All charts here are explicit example charts living in
ambient Euclidean coordinates; every method is vectorised over leading axes,
so ``p`` may have shape ``(..., N)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DomainError, FoliationViolation, JacobianMissing, ParameterError

__all__ = [
    "Box",
    "VectorField",
    "constant_field",
    "linear_field",
    "FoliatedChart",
    "CylinderChart",
    "SphereChart",
    "LineChart",
    "Decomposition",
    "FoliationReport",
    "vertical_projection",
    "decompose_vector",
    "verify_foliated",
    "check_jacobian",
    "check_dpi",
    "check_roundtrip",
]


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box ``prod (lower_i, upper_i)`` in R^d."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi):
            raise ParameterError("box bounds have different lengths")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ParameterError(f"empty box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    def signed_distance(self, v):
        """Distance to the boundary, positive inside and negative outside."""
        v = np.asarray(v, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.min(np.minimum(v - lo, hi - v), axis=-1)

    def contains(self, v):
        v = np.asarray(v, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((v > lo) & (v < hi), axis=-1)

    def distance_to_boundary(self, v):
        return np.abs(self.signed_distance(v))


class VectorField:
    """A vector field on ambient coordinates with an optional Jacobian.

    ``func`` maps ``(..., N) -> (..., N)``; ``jacobian`` maps
    ``(..., N) -> (..., N, N)`` with ``J[i, j] = d func_i / d x_j``.
    """

    def __init__(self, func: Callable, jacobian: Optional[Callable] = None, name: str = ""):
        self.func = func
        self._jacobian = jacobian
        self.name = name

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @property
    def has_jacobian(self):
        return self._jacobian is not None

    def jacobian(self, x):
        if self._jacobian is None:
            raise JacobianMissing(f"vector field {self.name or self.func!r} has no Jacobian")
        return self._jacobian(np.asarray(x, dtype=float))

    def __repr__(self):
        return f"VectorField({self.name or self.func.__name__})"


def constant_field(k, name="constant") -> VectorField:
    k = np.asarray(k, dtype=float)
    n = k.size

    def func(x):
        return np.broadcast_to(k, x.shape).copy()

    def jac(x):
        return np.zeros(x.shape[:-1] + (n, n))

    return VectorField(func, jac, name)


def linear_field(A, name="linear") -> VectorField:
    """``x -> A x``."""
    A = np.asarray(A, dtype=float)

    def func(x):
        return x @ A.T

    def jac(x):
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    return VectorField(func, jac, name)


class FoliatedChart:
    """Common interface of the hand-registered example charts.

    Subclasses define ``ambient_dim``, ``leaf_dim``, ``codim``,
    ``vertical_domain`` and the coordinate maps.  ``to_chart`` returns the
    principal branch of the leaf coordinates; :meth:`unwrap` makes periodic
    leaf coordinates continuous along a time axis.
    """

    name = "chart"
    ambient_dim: int
    leaf_dim: int
    codim: int
    vertical_domain: Box

    def to_chart(self, p):
        raise NotImplementedError

    def to_ambient(self, u, v):
        raise NotImplementedError

    def dphi(self, p, w):
        """Differential of the chart: ambient tangent ``w`` at ``p`` -> (du, dv)."""
        raise NotImplementedError

    def dpi(self, p, w):
        return self.dphi(p, w)[..., self.leaf_dim:]

    def project(self, p):
        return self.to_chart(p)[1]

    def contains(self, p):
        return self.vertical_domain.contains(self.project(p))

    def chart_state(self, p):
        """Concatenated chart coordinates ``(u, v)`` of shape ``(..., n + d)``."""
        u, v = self.to_chart(p)
        return np.concatenate([u, v], axis=-1)

    def ambient_from_state(self, c):
        c = np.asarray(c, dtype=float)
        return self.to_ambient(c[..., : self.leaf_dim], c[..., self.leaf_dim:])

    def unwrap(self, c, axis=-2):
        """Remove 2*pi jumps of periodic leaf coordinates along ``axis``."""
        return c


class CylinderChart(FoliatedChart):
    """Cylindrical coordinates ``(u; r, z)`` for the circular foliation of R^3.

    Leaves are the horizontal circles ``{r, z fixed}``.  The branch cut of the
    angle sits at ``u = +-pi``; ``r`` and ``z`` are global, so the chart domain
    only constrains the vertical coordinates.
    """

    name = "cylinder"
    ambient_dim = 3
    leaf_dim = 1
    codim = 2

    def __init__(self, r_min=0.5, r_max=1.5, z_min=-1.0, z_max=1.0):
        if r_min < 0:
            raise ParameterError("cylinder chart needs r_min >= 0")
        self.vertical_domain = Box((r_min, z_min), (r_max, z_max))

    def to_chart(self, p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        u = np.arctan2(y, x)
        r = np.hypot(x, y)
        return u[..., None], np.stack([r, z], axis=-1)

    def to_ambient(self, u, v):
        u = np.asarray(u, dtype=float)[..., 0]
        v = np.asarray(v, dtype=float)
        r, z = v[..., 0], v[..., 1]
        return np.stack([r * np.cos(u), r * np.sin(u), z], axis=-1)

    def dphi(self, p, w):
        p = np.asarray(p, dtype=float)
        w = np.asarray(w, dtype=float)
        x, y = p[..., 0], p[..., 1]
        r2 = x * x + y * y
        r = np.sqrt(r2)
        du = (x * w[..., 1] - y * w[..., 0]) / r2
        dr = (x * w[..., 0] + y * w[..., 1]) / r
        return np.stack([du, dr, w[..., 2]], axis=-1)

    def unwrap(self, c, axis=-2):
        c = np.array(c, dtype=float)
        c[..., 0] = np.unwrap(c[..., 0], axis=axis + 1 if axis < 0 else axis)
        return c


class SphereChart(FoliatedChart):
    """Spherical coordinates ``(theta, phi; r)`` for the foliation of R^3 minus 0 by spheres."""

    name = "sphere"
    ambient_dim = 3
    leaf_dim = 2
    codim = 1

    def __init__(self, r_min=0.5, r_max=1.5):
        if r_min < 0:
            raise ParameterError("sphere chart needs r_min >= 0")
        self.vertical_domain = Box((r_min,), (r_max,))

    def to_chart(self, p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p, axis=-1)
        theta = np.arccos(np.clip(p[..., 2] / r, -1.0, 1.0))
        phi = np.arctan2(p[..., 1], p[..., 0])
        return np.stack([theta, phi], axis=-1), r[..., None]

    def to_ambient(self, u, v):
        u = np.asarray(u, dtype=float)
        r = np.asarray(v, dtype=float)[..., 0]
        theta, phi = u[..., 0], u[..., 1]
        s = np.sin(theta)
        return np.stack([r * s * np.cos(phi), r * s * np.sin(phi), r * np.cos(theta)], axis=-1)

    def dphi(self, p, w):
        p = np.asarray(p, dtype=float)
        w = np.asarray(w, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        rho2 = x * x + y * y
        rho = np.sqrt(rho2)
        r2 = rho2 + z * z
        r = np.sqrt(r2)
        pw = np.sum(p * w, axis=-1)
        dtheta = (z * pw / r2 - w[..., 2]) / rho
        dphi = (x * w[..., 1] - y * w[..., 0]) / rho2
        return np.stack([dtheta, dphi, pw / r], axis=-1)

    def unwrap(self, c, axis=-2):
        c = np.array(c, dtype=float)
        c[..., 1] = np.unwrap(c[..., 1], axis=axis + 1 if axis < 0 else axis)
        return c


class LineChart(FoliatedChart):
    """Trivial product chart of R^2 foliated by the horizontal lines ``{w = const}``.

    Hosts one-dimensional horizontal dynamics ``y`` with a frozen vertical
    coordinate ``w``.  Leaves are not compact; the domain only bounds ``w``.
    """

    name = "line"
    ambient_dim = 2
    leaf_dim = 1
    codim = 1

    def __init__(self, w_min=-1.0, w_max=1.0):
        self.vertical_domain = Box((w_min,), (w_max,))

    def to_chart(self, p):
        p = np.asarray(p, dtype=float)
        return p[..., :1].copy(), p[..., 1:].copy()

    def to_ambient(self, u, v):
        return np.concatenate([np.asarray(u, dtype=float), np.asarray(v, dtype=float)], axis=-1)

    def dphi(self, p, w):
        return np.array(w, dtype=float)


def _require_inside(chart, p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != chart.ambient_dim:
        raise DomainError(f"expected ambient dimension {chart.ambient_dim}, got {p.shape[-1]}", p)
    if not np.all(np.isfinite(p)):
        raise DomainError(f"non-finite point {p}", p)
    inside = np.atleast_1d(chart.contains(p))
    if not np.all(inside):
        bad = p.reshape(-1, chart.ambient_dim)[~inside.ravel()][0]
        raise DomainError(f"point {bad.tolist()} is outside the {chart.name} chart domain", bad)
    return p


def vertical_projection(chart: FoliatedChart, p):
    """``pi(p)``, raising :class:`DomainError` outside the chart domain."""
    p = _require_inside(chart, p)
    return chart.project(p)


class Decomposition(NamedTuple):
    horizontal: np.ndarray
    vertical: np.ndarray


def decompose_vector(chart: FoliatedChart, p, K) -> Decomposition:
    """Split ``dphi(K)`` at ``p`` into leaf-tangent and transversal parts.

    Both parts are returned in chart coordinates (length ``n + d``); the
    horizontal part has zero ``v`` block and the vertical part zero ``u``
    block, so they sum to ``dphi(K)``.
    """
    p = _require_inside(chart, p)
    d = chart.dphi(p, np.asarray(K, dtype=float))
    n = chart.leaf_dim
    horizontal = d.copy()
    horizontal[..., n:] = 0.0
    vertical = d.copy()
    vertical[..., :n] = 0.0
    return Decomposition(horizontal, vertical)


@dataclass(frozen=True)
class FoliationReport:
    max_violation: float
    worst_field: int
    worst_point: np.ndarray


def verify_foliated(fields: Sequence[VectorField], chart: FoliatedChart, points, tol=1e-8) -> FoliationReport:
    """Check that every field is tangent to the leaves at the sample points."""
    points = _require_inside(chart, np.atleast_2d(points))
    worst = (0.0, 0, points[0])
    for k, field in enumerate(fields):
        viol = np.linalg.norm(chart.dpi(points, field(points)), axis=-1)
        i = int(np.argmax(viol))
        if viol[i] > worst[0]:
            worst = (float(viol[i]), k, points[i])
    report = FoliationReport(*worst)
    if report.max_violation > tol:
        raise FoliationViolation(
            f"field {report.worst_field} has |dpi(X)| = {report.max_violation:.3g} "
            f"at {np.asarray(report.worst_point).tolist()}",
            report.worst_field,
            report.worst_point,
            report.max_violation,
        )
    return report


def check_jacobian(field: VectorField, points, h=1e-6):
    """Max abs difference between ``field.jacobian`` and central differences."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    J = field.jacobian(points)
    n = points.shape[-1]
    fd = np.empty_like(J)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        fd[..., :, j] = (field(points + e) - field(points - e)) / (2 * h)
    return float(np.max(np.abs(J - fd)))


def check_dpi(chart: FoliatedChart, points, vectors, h=1e-6):
    """Max abs difference between ``chart.dpi`` and central differences of ``pi``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    vectors = np.broadcast_to(np.asarray(vectors, dtype=float), points.shape)
    fd = (chart.project(points + h * vectors) - chart.project(points - h * vectors)) / (2 * h)
    return float(np.max(np.abs(chart.dpi(points, vectors) - fd)))


def check_roundtrip(chart: FoliatedChart, points):
    """Max relative error of ``to_ambient(to_chart(p))``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    back = chart.to_ambient(*chart.to_chart(points))
    scale = np.maximum(np.linalg.norm(points, axis=-1), 1.0)
    return float(np.max(np.linalg.norm(back - points, axis=-1) / scale))
