"""Leaf averages of the transversal perturbation and the averaged transversal ODE.

For a scalar ``g`` on ambient space, ``Q^g(v)`` is the integral of ``g`` over
the leaf ``pi^-1(v)`` against its invariant measure.  The averaged field is
``v -> (Q^{dpi_1 K}, ..., Q^{dpi_d K})(v)``; its flow approximates the
slow-time transversal motion of the perturbed system.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import linregress

from .errors import DomainError, FitError, HorizonError, ParameterError
from .geometry import Box
from .io import write_csv
from .sde import RescaledPath, noise_block, integrate_paths
from .systems import FoliatedSystem

__all__ = [
    "AveragedField",
    "ErgodicRate",
    "AveragedPath",
    "TimeAverage",
    "leaf_average_quadrature",
    "averaged_field",
    "leaf_average_timeseries",
    "fit_eta",
    "solve_averaged_ode",
    "delta_diagnostic",
    "delta_running",
]

SOURCES = ("closed_form", "quadrature", "time_average")


def leaf_average_quadrature(system: FoliatedSystem, g: Callable, v, nodes=64):
    """Average of ``g`` over the leaf ``pi^-1(v)`` (vectorised over leading axes of ``v``).

    Circle leaves use the periodic trapezoid rule, which is spectrally
    accurate for smooth ``g``.
    """
    points, weights = system.leaf_quadrature(v, nodes)
    return np.asarray(g(points)) @ weights


class AveragedField:
    """The averaged transversal vector field on the vertical domain.

    Tabulated sources are evaluated by multilinear interpolation on a
    uniform grid, which keeps a Lipschitz table Lipschitz.
    """

    def __init__(self, func, domain: Box, source, grid=None, table=None, lipschitz_estimate=None):
        if source not in SOURCES:
            raise ParameterError(f"unknown averaged-field source {source!r}")
        self.func = func
        self.domain = domain
        self.source = source
        self.grid = grid
        self.table = table
        self.lipschitz_estimate = lipschitz_estimate

    @property
    def dim(self):
        return self.domain.dim

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        d = self.dim
        out = np.asarray(self.func(v.reshape(-1, d)), dtype=float)
        return out.reshape(v.shape[:-1] + (d,))

    def component(self, i) -> Callable:
        return lambda v: self(v)[..., i]

    def table_to_csv(self, path):
        """Columns ``v_grid`` (or ``v_grid1..``) followed by ``Q1..Qd``."""
        if self.grid is None:
            raise ParameterError("averaged field has no table")
        d = self.dim
        mesh = np.stack(np.meshgrid(*self.grid, indexing="ij"), axis=-1).reshape(-1, d)
        vals = self.table.reshape(-1, d)
        vh = ["v_grid"] if d == 1 else [f"v_grid{i + 1}" for i in range(d)]
        write_csv(path, vh + [f"Q{i + 1}" for i in range(d)], np.column_stack([mesh, vals]))


def _grid_axes(domain: Box, points):
    return [np.linspace(lo, hi, points) for lo, hi in zip(domain.lower, domain.upper)]


def _lipschitz(grid, table):
    """Largest operator norm of the finite-difference Jacobian of the table."""
    d = len(grid)
    if any(len(ax) < 2 for ax in grid):
        return 0.0
    J = np.stack([np.stack(np.gradient(table[..., i], *grid), axis=-1) if d > 1
                  else np.gradient(table[..., i], grid[0])[..., None] for i in range(d)], axis=-2)
    return float(np.max(np.linalg.norm(J.reshape(-1, d, d), ord=2, axis=(-2, -1))))


def _padded(system):
    """Copy of ``system`` whose chart box is widened by one span on each side.

    Grid nodes include the boundary of the open domain; unperturbed paths stay
    on their leaf, so the wider box only keeps boundary leaves admissible.
    """
    chart = copy.copy(system.chart)
    box = chart.vertical_domain
    lo, hi = np.asarray(box.lower, dtype=float), np.asarray(box.upper, dtype=float)
    chart.vertical_domain = Box(tuple(lo - (hi - lo)), tuple(hi + (hi - lo)))
    return replace(system, chart=chart)


def averaged_field(
    system: FoliatedSystem,
    source="quadrature",
    grid=64,
    nodes=64,
    horizon=200.0,
    dt=1e-2,
    seed=0,
) -> AveragedField:
    """Build the averaged field from closed form, leaf quadrature or ergodic time averages.

    ``grid`` is the number of table points per vertical dimension.  The
    ``time_average`` source runs one unperturbed path per grid point to
    ``horizon`` (expensive; keep ``grid`` small).
    """
    domain = system.chart.vertical_domain
    d = domain.dim
    if source == "closed_form":
        if system.closed_form_average is None:
            raise ParameterError(f"system {system.name!r} has no closed-form leaf average")
        return AveragedField(system.closed_form_average, domain, source)
    if source not in SOURCES:
        raise ParameterError(f"unknown averaged-field source {source!r}")
    if int(grid) < 2:
        raise ParameterError("averaged-field grid needs >= 2 points per dimension")
    axes = _grid_axes(domain, int(grid))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    gs = [system.vertical_component(i) for i in range(d)]
    if source == "quadrature":
        points, weights = system.leaf_quadrature(mesh, nodes)
        table = np.stack([g(points) @ weights for g in gs], axis=-1)
    else:
        flat = mesh.reshape(-1, d)
        n = system.chart.leaf_dim
        x0 = system.chart.to_ambient(np.zeros((flat.shape[0], n)), flat)
        ta = leaf_average_timeseries(_padded(system), gs, x0, horizon, dt, seed=seed, per_replica_start=True)
        table = ta.curves[:, -1].reshape(mesh.shape[:-1] + (d,))
    interp = RegularGridInterpolator(axes, table, method="linear", bounds_error=False, fill_value=None)
    return AveragedField(interp, domain, source, axes, table, _lipschitz(axes, table))


@dataclass(frozen=True)
class ErgodicRate:
    """Power-law bound ``eta(t) = c t^-q`` on the ergodic time-average error (or zero)."""

    model: str
    c: float = 0.0
    q: float = 1.0
    fit_stderr: float = 0.0

    def __post_init__(self):
        if self.model not in ("power", "zero"):
            raise ParameterError(f"unknown rate model {self.model!r}")
        if self.model == "power" and not (self.c >= 0 and self.q > 0):
            raise ParameterError(f"power rate needs c >= 0 and q > 0, got c={self.c}, q={self.q}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "zero":
            return np.zeros_like(t)
        return self.c * t ** (-self.q)


@dataclass(eq=False)
class TimeAverage:
    """Running averages ``(1/t) int_0^t g(F_r x0) dr``; ``curves`` is ``(R, S+1, m)``."""

    times: np.ndarray
    curves: np.ndarray

    @property
    def estimate(self):
        """Replica mean of the running average at the horizon, one value per function."""
        return self.curves[:, -1].mean(axis=0)

    def errors(self, target):
        """``|avg(t) - target|`` per replica, time and function."""
        return np.abs(self.curves - np.asarray(target, dtype=float))


def leaf_average_timeseries(
    system: FoliatedSystem,
    g,
    x0=None,
    horizon=100.0,
    dt=1e-2,
    replicas=1,
    seed=0,
    scheme=None,
    per_replica_start=False,
) -> TimeAverage:
    """Ergodic running averages of ``g`` along unperturbed trajectories.

    ``g`` is one scalar function or a list of them.  The perturbation is
    switched off.  With ``per_replica_start`` each row of ``x0`` starts its own
    replica (replica index = row).
    """
    funcs = list(g) if isinstance(g, (list, tuple)) else [g]
    base = system.with_epsilon(0.0)
    if scheme is None:
        scheme = "exact_leaf" if base.leaf_flow is not None else "heun"
    steps = int(math.ceil(horizon / dt - 1e-9))
    dt = horizon / steps
    if per_replica_start:
        replicas = np.atleast_2d(x0).shape[0]
    inc = noise_block(seed, range(int(replicas)), base.noise_dim, dt, steps)
    batch = integrate_paths(base, x0, inc, dt, scheme)
    vals = np.stack([np.asarray(f(batch.states), dtype=float) for f in funcs], axis=-1)
    integral = cumulative_trapezoid(vals, batch.times, axis=1, initial=0.0)
    curves = np.empty_like(integral)
    curves[:, 0] = vals[:, 0]
    curves[:, 1:] = integral[:, 1:] / batch.times[None, 1:, None]
    return TimeAverage(batch.times, curves)


def fit_eta(times, errors, p=2.0, burn_in=10.0, windows=16, floor=1e-12, min_points=8) -> ErgodicRate:
    """Fit ``eta(t) = c t^-q`` to the L^p (across replicas) running-average error.

    ``errors`` has shape ``(R, S)`` on ``times``.  Past ``burn_in`` the time
    axis is split into ``windows`` log-spaced windows and the curve is replaced
    by its maximum on each window (credited to the window's left end), so the
    fit tracks an upper envelope; periodic flows give errors that touch zero
    at return times.  A curve below ``floor`` everywhere yields the zero model.
    """
    times = np.asarray(times, dtype=float)
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    lp = np.mean(np.abs(errors) ** p, axis=0) ** (1.0 / p)
    keep = times >= burn_in
    t, e = times[keep], lp[keep]
    if t.size == 0:
        raise FitError(f"no time points past burn-in {burn_in}")
    if np.all(e <= floor) or np.all(lp <= floor):
        return ErgodicRate("zero")
    if t.size < min_points:
        raise FitError(f"only {t.size} time points past burn-in {burn_in}; need {min_points}")
    edges = np.geomspace(t[0], t[-1], int(windows) + 1)
    left, env = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a) & (t <= b)
        if sel.any():
            left.append(a)
            env.append(e[sel].max())
    left, env = np.asarray(left), np.asarray(env)
    if left.size < min_points:
        raise FitError(f"only {left.size} populated windows; need {min_points}")
    if np.any(env <= floor):
        raise FitError("error envelope vanishes on part of the window grid; cannot fit a power law")
    fit = linregress(np.log(left), np.log(env))
    if fit.slope >= 0:
        raise FitError(f"running-average error does not decay (log-log slope {fit.slope:.3g})")
    return ErgodicRate("power", float(math.exp(fit.intercept)), float(-fit.slope), float(fit.stderr))


@dataclass(eq=False)
class AveragedPath:
    """RK4 solution of the averaged ODE, truncated where it reaches the boundary."""

    times: np.ndarray
    v: np.ndarray
    T0: Optional[float]
    T_gamma: dict = field(default_factory=dict)

    def __call__(self, s):
        """Linear interpolation of the path at slow times ``s`` (shape ``(..., d)`` result)."""
        s = np.asarray(s, dtype=float)
        return np.stack([np.interp(s, self.times, self.v[:, i]) for i in range(self.v.shape[1])], axis=-1)

    def to_csv(self, path):
        d = self.v.shape[1]
        write_csv(path, ["t"] + [f"v{i + 1}" for i in range(d)], np.column_stack([self.times, self.v]))


def _rk4(Q, v, h):
    k1 = Q(v)
    k2 = Q(v + 0.5 * h * k1)
    k3 = Q(v + 0.5 * h * k2)
    k4 = Q(v + h * k3)
    return v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _bisect_step(Q, v, h, crossed, tol):
    """Smallest partial step in ``(0, h]`` after which ``crossed`` holds, to ``tol``."""
    lo, hi = 0.0, h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if crossed(_rk4(Q, v, mid)):
            hi = mid
        else:
            lo = mid
    return hi


def solve_averaged_ode(Q, v0, t_max, step=1e-3, domain: Optional[Box] = None, gammas=(), tol=1e-10) -> AveragedPath:
    """Classical RK4 for ``dv/dt = Q(v)`` from ``v0`` up to ``t_max``.

    Stops at the boundary-hit time ``T0`` (located by bisection on the last
    step).  ``T_gamma[g]`` is the first time with ``dist(v, boundary) <= g``
    (``inf`` if not reached before ``t_max`` and the boundary).
    """
    domain = domain if domain is not None else Q.domain
    v = np.asarray(v0, dtype=float).copy()
    if not domain.contains(v):
        raise DomainError(f"initial vertical point {v.tolist()} is outside V", v)
    if not (t_max > 0 and step > 0):
        raise ParameterError("t_max and step must be positive")
    gammas = [float(g) for g in gammas]
    if any(g <= 0 for g in gammas):
        raise ParameterError("gamma must be positive")
    T_gamma = {g: (0.0 if domain.signed_distance(v) <= g else math.inf) for g in gammas}
    times, path = [0.0], [v.copy()]
    t, T0 = 0.0, None
    nsteps = int(math.ceil(t_max / step - 1e-9))
    h = t_max / nsteps
    for _ in range(nsteps):
        v_new = _rk4(Q, v, h)
        dist = float(domain.signed_distance(v_new))
        for g in gammas:
            if math.isinf(T_gamma[g]) and dist <= g:
                T_gamma[g] = t + _bisect_step(Q, v, h, lambda w, g=g: domain.signed_distance(w) <= g, tol)
        if dist <= 0:
            hit = _bisect_step(Q, v, h, lambda w: domain.signed_distance(w) <= 0, tol)
            T0 = t + hit
            times.append(T0)
            path.append(_rk4(Q, v, hit))
            break
        t += h
        v = v_new
        times.append(t)
        path.append(v.copy())
    return AveragedPath(np.asarray(times), np.asarray(path), T0, T_gamma)


def _window(slow_times, s, t):
    if s < 0 or t < 0:
        raise ParameterError("s and t must be nonnegative")
    scale = max(1.0, abs(slow_times[-1]))
    if s + t > slow_times[-1] + 1e-9 * scale:
        raise HorizonError(f"path reaches slow time {slow_times[-1]:g}, window ends at {s + t:g}")
    i_a = int(np.searchsorted(slow_times, s - 1e-9 * scale))
    i_b = int(np.searchsorted(slow_times, s + t - 1e-9 * scale))
    return i_a, min(i_b, len(slow_times) - 1)


def _delta_cumulative(path: RescaledPath, g, Qg):
    h = np.asarray(g(path.states), dtype=float) - np.asarray(Qg(path.projections), dtype=float)
    return cumulative_trapezoid(h, path.slow_times, axis=-1, initial=0.0)


def _stop_index(path, i):
    es = np.atleast_1d(path.exit_step)
    return np.where(es >= 0, np.minimum(i, es), i)


def delta_diagnostic(path: RescaledPath, g, Qg, s, t):
    """Integrated discrepancy of ``g`` and ``Q^g(pi)`` along the rescaled path over ``[s, s+t]``.

    Both limits are stopped at the slow exit time; the trapezoid rule runs on
    the native grid.  Returns one value per replica.
    """
    i_a, i_b = _window(path.slow_times, s, t)
    C = _delta_cumulative(path, g, Qg)
    rows = np.arange(C.shape[0])
    return C[rows, _stop_index(path, i_b)] - C[rows, _stop_index(path, i_a)]


def delta_running(path: RescaledPath, g, Qg, s, t):
    """``u -> delta(s, u)`` for grid ``u`` in ``[0, t]``; returns ``(u, values (R, M))``."""
    i_a, i_b = _window(path.slow_times, s, t)
    C = _delta_cumulative(path, g, Qg)
    idx = np.arange(i_a, i_b + 1)
    es = np.atleast_1d(path.exit_step)
    stop = np.where(es[:, None] >= 0, np.minimum(idx[None, :], es[:, None]), idx[None, :])
    start = _stop_index(path, i_a)
    rows = np.arange(C.shape[0])[:, None]
    return path.slow_times[idx] - path.slow_times[i_a], C[rows, stop] - C[rows, start[:, None]]
