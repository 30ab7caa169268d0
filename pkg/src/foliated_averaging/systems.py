"""Foliated Stratonovich systems and the built-in examples.

A :class:`FoliatedSystem` bundles the leaf-tangent drift and diffusion fields,
a transversal perturbation ``K`` with its scale ``epsilon``, and optional
closed-form knowledge: an exact leaf flow, the invariant measure on each leaf
and the closed-form leaf average of ``dpi(K)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import MeasureUnknown, ParameterError
from .geometry import (
    CylinderChart,
    FoliatedChart,
    LineChart,
    SphereChart,
    VectorField,
    constant_field,
    linear_field,
    verify_foliated,
)

__all__ = [
    "FoliatedSystem",
    "RotationFlow",
    "ScalarExpFlow",
    "cylinder_system",
    "sphere_system",
    "scalar_linear_system",
    "sample_points",
    "ROTATION_XY",
]

ROTATION_XY = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class RotationFlow:
    """Exact flow of ``dx = ROTATION_XY x (lambda1 dt + lambda2 o dB)``."""

    def __init__(self, lambda1, lambda2):
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)

    def angle(self, dt, dB):
        return self.lambda1 * dt + self.lambda2 * dB[..., 0]

    def chart_step(self, c, dt, dB):
        c = np.array(c, dtype=float)
        c[..., 0] += self.angle(dt, dB)
        return c

    def ambient_step(self, x, dt, dB):
        a = self.angle(dt, dB)
        ca, sa = np.cos(a), np.sin(a)
        R = np.zeros(np.shape(a) + (3, 3))
        R[..., 0, 0] = ca
        R[..., 0, 1] = -sa
        R[..., 1, 0] = sa
        R[..., 1, 1] = ca
        R[..., 2, 2] = 1.0
        return np.einsum("...ij,...j->...i", R, x), R


class ScalarExpFlow:
    """Exact flow of the horizontal equation ``dy = y o dB`` on the line chart."""

    def chart_step(self, c, dt, dB):
        c = np.array(c, dtype=float)
        c[..., 0] *= np.exp(dB[..., 0])
        return c

    def ambient_step(self, x, dt, dB):
        g = np.exp(dB[..., 0])
        J = np.zeros(np.shape(g) + (2, 2))
        J[..., 0, 0] = g
        J[..., 1, 1] = 1.0
        x = np.array(x, dtype=float)
        x[..., 0] *= g
        return x, J


@dataclass(frozen=True, eq=False)
class FoliatedSystem:
    """``dy = X0 dt + sum_k X_k o dB^k + epsilon K dt`` on a foliated chart.

    ``epsilon = 0`` recovers the unperturbed leaf dynamics.  ``corollaries``
    names the improved-bound regimes the system satisfies (``"cor22"`` when
    the fields are independent of the leaf coordinate, ``"cor23"`` when in
    addition the drift is constant in chart coordinates).
    """

    chart: FoliatedChart
    drift: VectorField
    diffusion: tuple
    perturbation: VectorField
    epsilon: float = 0.0
    x0: Optional[np.ndarray] = None
    leaf_flow: Optional[object] = None
    leaf_measure: Optional[Callable] = None
    closed_form_average: Optional[Callable] = None
    corollaries: frozenset = field(default_factory=frozenset)
    name: str = "system"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ParameterError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        object.__setattr__(self, "diffusion", tuple(self.diffusion))
        if self.x0 is not None:
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @property
    def noise_dim(self):
        return len(self.diffusion)

    @property
    def ambient_dim(self):
        return self.chart.ambient_dim

    def with_epsilon(self, epsilon) -> "FoliatedSystem":
        return replace(self, epsilon=float(epsilon))

    def vertical_component(self, i) -> Callable:
        """``g = dpi_i(K)`` as a scalar function of ambient points."""
        if not 0 <= i < self.chart.codim:
            raise ParameterError(f"vertical index {i} out of range for codim {self.chart.codim}")

        def g(x):
            x = np.asarray(x, dtype=float)
            return self.chart.dpi(x, self.perturbation(x))[..., i]

        g.__name__ = f"dpi{i + 1}_K"
        return g

    def leaf_quadrature(self, v, nodes):
        """Nodes and weights of the invariant measure on the leaf ``pi^-1(v)``."""
        if self.leaf_measure is None:
            raise MeasureUnknown(f"system {self.name!r} declares no invariant measure on its leaves")
        return self.leaf_measure(np.asarray(v, dtype=float), int(nodes))

    def verify(self, n=100, seed=0, tol=1e-8):
        """Run :func:`verify_foliated` on the drift and diffusion fields."""
        pts = sample_points(self.chart, n, seed)
        return verify_foliated((self.drift,) + self.diffusion, self.chart, pts, tol)


def sample_points(chart: FoliatedChart, n, seed=0):
    """Uniform random points of the chart domain (uniform in chart coordinates)."""
    rng = np.random.default_rng(seed)
    box = chart.vertical_domain
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    margin = 1e-3 * (hi - lo)
    v = rng.uniform(lo + margin, hi - margin, size=(n, box.dim))
    if isinstance(chart, SphereChart):
        u = np.stack([np.arccos(rng.uniform(-0.99, 0.99, n)), rng.uniform(-np.pi, np.pi, n)], axis=-1)
    elif isinstance(chart, LineChart):
        u = rng.uniform(-2.0, 2.0, size=(n, 1))
    else:
        u = rng.uniform(-np.pi, np.pi, size=(n, chart.leaf_dim))
    return chart.to_ambient(u, v)


def _circle_measure(chart):
    def measure(v, m):
        u = -np.pi + 2.0 * np.pi * np.arange(m) / m
        v = np.asarray(v, dtype=float)
        vv = np.broadcast_to(v[..., None, :], v.shape[:-1] + (m, v.shape[-1]))
        uu = np.broadcast_to(u[:, None], v.shape[:-1] + (m, 1))
        return chart.to_ambient(uu, vv), np.full(m, 1.0 / m)

    return measure


def _sphere_measure(chart):
    def measure(v, m):
        # Gauss-Legendre in cos(theta) x periodic trapezoid in phi.
        xg, wg = np.polynomial.legendre.leggauss(m)
        phi = -np.pi + 2.0 * np.pi * np.arange(2 * m) / (2 * m)
        theta = np.arccos(xg)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        u = np.stack([T.ravel(), P.ravel()], axis=-1)
        w = np.repeat(wg / 2.0, 2 * m) / (2 * m)
        v = np.asarray(v, dtype=float)
        k = u.shape[0]
        vv = np.broadcast_to(v[..., None, :], v.shape[:-1] + (k, 1))
        uu = np.broadcast_to(u, v.shape[:-1] + (k, 2))
        return chart.to_ambient(uu, vv), w

    return measure


def cylinder_system(
    lambda1=1.0,
    lambda2=1.0,
    perturbation="constant",
    k=(1.0, 0.0, 0.0),
    epsilon=0.0,
    r_min=0.5,
    r_max=1.5,
    z_min=-1.0,
    z_max=1.0,
    x0=(1.0, 0.0, 0.0),
) -> FoliatedSystem:
    """Random rotations about the z axis, perturbed transversally.

    ``perturbation`` is ``"constant"`` (``K = k``), ``"vertical"``
    (``K = (0, 0, k[2])``) or ``"linear"`` (``K(x, y, z) = (x, 0, 0)``).
    """
    chart = CylinderChart(r_min, r_max, z_min, z_max)
    k = np.asarray(k, dtype=float)
    if k.shape != (3,):
        raise ParameterError("cylinder perturbation vector k must have 3 components")
    if perturbation == "constant":
        K = constant_field(k, "constant")
        Q = lambda v: np.stack([np.zeros_like(v[..., 0]), np.full_like(v[..., 0], k[2])], axis=-1)
    elif perturbation == "vertical":
        k = np.array([0.0, 0.0, k[2]])
        K = constant_field(k, "vertical")
        Q = lambda v: np.stack([np.zeros_like(v[..., 0]), np.full_like(v[..., 0], k[2])], axis=-1)
    elif perturbation == "linear":
        K = linear_field(np.diag([1.0, 0.0, 0.0]), "linear")
        Q = lambda v: np.stack([v[..., 0] / 2.0, np.zeros_like(v[..., 0])], axis=-1)
    else:
        raise ParameterError(f"unknown cylinder perturbation {perturbation!r}")
    ergodic = abs(lambda1) + abs(lambda2) > 0
    return FoliatedSystem(
        chart=chart,
        drift=linear_field(lambda1 * ROTATION_XY, "rotation drift"),
        diffusion=(linear_field(lambda2 * ROTATION_XY, "rotation noise"),),
        perturbation=K,
        epsilon=epsilon,
        x0=np.asarray(x0, dtype=float),
        leaf_flow=RotationFlow(lambda1, lambda2),
        leaf_measure=_circle_measure(chart) if ergodic else None,
        closed_form_average=Q if ergodic else None,
        corollaries=frozenset({"cor22", "cor23"}),
        name=f"cylinder-{perturbation}",
        params=dict(lambda1=lambda1, lambda2=lambda2, perturbation=perturbation, k=k.tolist()),
    )


def _cross_field(axis, scale):
    e = np.zeros(3)
    e[axis] = 1.0
    # x -> e x x is linear with skew matrix S.
    S = scale * np.array([[0.0, -e[2], e[1]], [e[2], 0.0, -e[0]], [-e[1], e[0], 0.0]])
    return linear_field(S, f"rotation about e{axis + 1}")


def sphere_system(
    sigma=1.0,
    lambda1=0.0,
    perturbation="constant",
    k=(1.0, 0.0, 0.0),
    epsilon=0.0,
    r_min=0.5,
    r_max=1.5,
    x0=(1.0, 0.0, 0.0),
) -> FoliatedSystem:
    """Brownian motion on the spheres ``|x| = r`` (plus an optional z-rotation drift).

    Perturbations: ``"constant"`` (average 0 by symmetry), ``"radial"``
    (``K = x``, average ``r``) and ``"linear"`` (``K = (x, 0, 0)``, average ``r/3``).
    """
    chart = SphereChart(r_min, r_max)
    k = np.asarray(k, dtype=float)
    if perturbation == "constant":
        K = constant_field(k, "constant")
        Q = lambda v: np.zeros_like(v)
    elif perturbation == "radial":
        K = linear_field(np.eye(3), "radial")
        Q = lambda v: np.array(v, dtype=float)
    elif perturbation == "linear":
        K = linear_field(np.diag([1.0, 0.0, 0.0]), "linear")
        Q = lambda v: np.asarray(v, dtype=float) / 3.0
    else:
        raise ParameterError(f"unknown sphere perturbation {perturbation!r}")
    return FoliatedSystem(
        chart=chart,
        drift=linear_field(lambda1 * ROTATION_XY, "rotation drift"),
        diffusion=tuple(_cross_field(i, sigma) for i in range(3)),
        perturbation=K,
        epsilon=epsilon,
        x0=np.asarray(x0, dtype=float),
        leaf_measure=_sphere_measure(chart) if sigma != 0 else None,
        closed_form_average=Q if sigma != 0 else None,
        name=f"sphere-{perturbation}",
        params=dict(sigma=sigma, lambda1=lambda1, perturbation=perturbation, k=k.tolist()),
    )


def scalar_linear_system(epsilon=0.0, w_min=-1.0, w_max=1.0, y0=1.0) -> FoliatedSystem:
    """``dy = y o dB + epsilon dt`` embedded as the horizontal part of the line chart.

    This is the system showing that exponential growth in ``t`` of the
    coupled error cannot be improved in general.
    """
    chart = LineChart(w_min, w_max)
    return FoliatedSystem(
        chart=chart,
        drift=constant_field([0.0, 0.0], "zero"),
        diffusion=(linear_field(np.diag([1.0, 0.0]), "y"),),
        perturbation=constant_field([1.0, 0.0], "unit horizontal"),
        epsilon=epsilon,
        x0=np.array([float(y0), 0.0]),
        leaf_flow=ScalarExpFlow(),
        name="scalar-linear",
        params=dict(y0=y0),
    )
