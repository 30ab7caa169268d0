"""Monte Carlo verification of the averaging scaling laws.

Every estimator reduces replicas the same way: a pathwise supremum over the
simulation grid, then the power mean ``[E sup|.|^p]^(1/p)`` across replicas,
with a percentile bootstrap interval.  Replica ``i`` always sees the noise
stream ``(seed, i)``, so estimates at different ``epsilon`` use common random
numbers.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog
from scipy.stats import binomtest, linregress

from .averaging import (
    AveragedField,
    AveragedPath,
    ErgodicRate,
    averaged_field,
    delta_running,
    fit_eta,
    leaf_average_quadrature,
    leaf_average_timeseries,
    solve_averaged_ode,
)
from .errors import EnvelopeError, FitError, HorizonError, JacobianMissing, ParameterError, SchemeError
from .io import write_csv
from .sde import fast_step, generate_noise, integrate_paths, noise_block, random_stream, rescaled_view, simulate_replicas
from .systems import FoliatedSystem

__all__ = [
    "McEstimate",
    "RateFit",
    "RateBound",
    "EstimateTable",
    "ExitTable",
    "TheoremResult",
    "LyapunovSpectrum",
    "lp_estimate",
    "check_monotone",
    "projection_observable",
    "ambient_observable",
    "estimate_coupled_error",
    "fit_epsilon_order",
    "fit_time_envelope",
    "fit_theorem_bound",
    "estimate_eta",
    "verify_theorem",
    "estimate_exit_probability",
    "estimate_lyapunov",
    "estimate_delta",
    "strong_error_order",
    "ENVELOPE_FORMS",
]

log = logging.getLogger(__name__)

ENVELOPE_FORMS = ("lemma21", "cor22", "cor23", "thm41")
_BOOTSTRAP_KEY = 0xB0075
N_BOOT = 1000


@dataclass(frozen=True)
class McEstimate:
    """``[E sup|.|^p]^(1/p)`` over ``replicas`` with a bootstrap 95% interval."""

    value: float
    p: float
    replicas: int
    ci_low: float
    ci_high: float
    master_seed: int


def lp_estimate(samples, p, seed=0, key=0, n_boot=N_BOOT) -> McEstimate:
    """L^p norm of ``samples`` with a percentile bootstrap interval.

    The bootstrap stream is keyed by ``(seed, key)`` and independent of the
    replica noise streams.
    """
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size < 2:
        raise ParameterError("an L^p estimate needs at least 2 replicas")
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    xp = x**p
    value = float(np.mean(xp) ** (1.0 / p))
    rng = random_stream(seed, _BOOTSTRAP_KEY, key)
    idx = rng.integers(0, x.size, size=(int(n_boot), x.size))
    boot = np.mean(xp[idx], axis=1) ** (1.0 / p)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return McEstimate(value, float(p), int(x.size), float(min(lo, value)), float(max(hi, value)), int(seed))


def check_monotone(estimates: Sequence[McEstimate], mode="separated", atol=0.0):
    """Monotone decrease along a sequence ordered by decreasing epsilon.

    ``separated``: each estimate is below its predecessor with disjoint
    intervals.  ``no_inversion``: fails only when a later estimate exceeds an
    earlier one with disjoint intervals.  ``nonincreasing``: point values
    never increase by more than ``atol``.
    """
    pairs = list(zip(estimates[:-1], estimates[1:]))
    if mode == "separated":
        return all(b.value < a.value and b.ci_high < a.ci_low for a, b in pairs)
    if mode == "no_inversion":
        return not any(b.ci_low > a.ci_high for a, b in pairs)
    if mode == "nonincreasing":
        return all(b.value <= a.value + atol for a, b in pairs)
    raise ParameterError(f"unknown monotonicity mode {mode!r}")


@dataclass(frozen=True)
class RateFit:
    """Least-squares log-log fit ``log estimate = slope * log x + intercept``."""

    slope: float
    intercept: float
    stderr: float
    r_squared: float
    grid: tuple


def _loglog(xs, ys) -> RateFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise FitError(f"rate fit needs >= 3 grid points, got {xs.size}")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise FitError("log-log fit needs strictly positive values")
    fit = linregress(np.log(xs), np.log(ys))
    return RateFit(float(fit.slope), float(fit.intercept), float(fit.stderr), float(fit.rvalue**2),
                   tuple(zip(xs.tolist(), ys.tolist())))


@dataclass(frozen=True)
class RateBound:
    """A fitted envelope with its constants and the grid it dominates."""

    form: str
    constants: dict
    alpha: Optional[float] = None
    beta: Optional[float] = None
    p: Optional[float] = None
    grid: tuple = ()
    max_ratio: float = 0.0
    growth_slope: Optional[float] = None
    eta: Optional[ErgodicRate] = None
    epsilon: Optional[float] = None
    t: Optional[float] = None

    def __call__(self, x):
        """Bound at ``x`` (the time for lemma/corollary forms, epsilon for thm41)."""
        x = np.asarray(x, dtype=float)
        c = self.constants
        if self.form == "thm41":
            eps = x
            arg = self.t * np.abs(np.log(eps)) ** (2 * self.beta / self.p)
            return c["C1"] * eps**self.alpha + c["C2"] * self.eta(arg)
        shape = _envelope_shape(self.form, x, self.epsilon, c.get("K2", 0.0), self.p)
        return c["K1"] * shape

    def dominates(self, rtol=1e-9):
        return all(est <= b * (1 + rtol) + 1e-300 for _, est, b in self.grid)


def _envelope_shape(form, t, eps, K2=0.0, p=2.0):
    t = np.asarray(t, dtype=float)
    if form == "cor22":
        return eps * (t + t**2)
    if form == "cor23":
        return eps * (t + t**1.5)
    if form == "lemma21":
        return eps * t * np.exp(K2 * t**p)
    raise ParameterError(f"unknown envelope form {form!r}")


@dataclass(frozen=True)
class Row:
    epsilon: float
    t: float
    estimate: McEstimate


@dataclass(eq=False)
class EstimateTable:
    """Monte Carlo estimates on an ``(epsilon, t)`` grid."""

    rows: List[Row]
    p: float
    master_seed: int
    label: str = "estimate"

    HEADER = ("epsilon", "t", "p", "estimate", "ci_low", "ci_high", "replicas")

    def get(self, epsilon, t) -> McEstimate:
        for r in self.rows:
            if math.isclose(r.epsilon, epsilon, rel_tol=1e-12, abs_tol=1e-15) and math.isclose(r.t, t, rel_tol=1e-12):
                return r.estimate
        raise KeyError((epsilon, t))

    def at_t(self, t):
        """Rows at time ``t`` ordered by decreasing epsilon."""
        rows = [r for r in self.rows if math.isclose(r.t, t, rel_tol=1e-12)]
        return sorted(rows, key=lambda r: -r.epsilon)

    def at_epsilon(self, epsilon):
        rows = [r for r in self.rows if math.isclose(r.epsilon, epsilon, rel_tol=1e-12, abs_tol=1e-15)]
        return sorted(rows, key=lambda r: r.t)

    def values(self):
        return np.array([r.estimate.value for r in self.rows])

    def csv_rows(self):
        for r in self.rows:
            e = r.estimate
            yield (r.epsilon, r.t, e.p, e.value, e.ci_low, e.ci_high, e.replicas)

    def to_csv(self, path):
        write_csv(path, self.HEADER, self.csv_rows())


def projection_observable(chart, i) -> Callable:
    """``pi_i`` as an observable on ambient states."""
    return lambda x: chart.project(x)[..., i]


def ambient_observable(i) -> Callable:
    return lambda x: np.asarray(x)[..., i]


def _default_scheme(system, scheme):
    if scheme is None:
        return "exact_leaf" if system.leaf_flow is not None else "heun"
    return scheme


def _check_p(system, p):
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    if p < 2 and not system.corollaries:
        warnings.warn(
            f"p={p} < 2: the coupling bound is only guaranteed for small t in this regime",
            RuntimeWarning,
            stacklevel=3,
        )


def _observe(batch, f):
    """Observable ``f`` on a batch: an int selects a vertical chart coordinate."""
    if isinstance(f, (int, np.integer)):
        return batch.projections[..., int(f)]
    return np.asarray(f(batch.states), dtype=float)


def estimate_coupled_error(
    system: FoliatedSystem,
    f: Union[Callable, int],
    eps_grid,
    t_grid,
    p=2.0,
    replicas=400,
    seed=0,
    dt=1e-2,
    x0=None,
    scheme=None,
    block_size=64,
    threads=1,
) -> EstimateTable:
    """``[E sup_{s <= t ^ tau} |f(y^eps_s) - f(x_s)|^p]^(1/p)`` in fast time.

    ``f`` is a callable on ambient states or an int selecting the vertical
    chart coordinate ``pi_f``.  Both paths are stopped at the perturbed exit
    step.
    """
    _check_p(system, p)
    scheme = _default_scheme(system, scheme)
    t_grid = sorted(float(t) for t in t_grid)
    if t_grid[0] <= 0:
        raise ParameterError("t grid must be positive")
    steps = int(math.ceil(t_grid[-1] / dt - 1e-9))
    dt = t_grid[-1] / steps
    idx = [int(round(t / dt)) for t in t_grid]
    rows = []
    for j, eps in enumerate(float(e) for e in eps_grid):
        if eps < 0:
            raise ParameterError(f"epsilon must be >= 0, got {eps}")
        base, pert = simulate_replicas(
            system.with_epsilon(eps), x0, dt, steps, seed, replicas, scheme, block_size, threads, coupled=True
        )
        diff = np.abs(_observe(pert, f) - _observe(base, f))
        diff = np.where(pert.stop_mask(), diff, 0.0)
        running = np.maximum.accumulate(diff, axis=1)
        for k, (t, i) in enumerate(zip(t_grid, idx)):
            est = lp_estimate(running[:, i], p, seed, key=1000 * j + k)
            rows.append(Row(eps, t, est))
    return EstimateTable(rows, float(p), int(seed), "coupled_error")


def fit_epsilon_order(table: EstimateTable, t) -> RateFit:
    """Log-log slope of the estimate against epsilon at fixed ``t``."""
    rows = [r for r in table.at_t(t) if r.epsilon > 0]
    if len(rows) < 3:
        raise FitError(f"need >= 3 positive epsilon points at t={t}, got {len(rows)}")
    return _loglog([r.epsilon for r in rows], [r.estimate.value for r in rows])


def fit_time_envelope(table: EstimateTable, epsilon, form, growth_tol=0.5) -> RateBound:
    """Smallest envelope of the declared form that dominates the table at ``epsilon``.

    For the polynomial corollary forms the constant ``K1`` is the largest
    ratio estimate/shape.  The form is rejected with :class:`EnvelopeError`
    when that ratio keeps growing in ``t`` (log-log slope above
    ``growth_tol``), i.e. the data outgrow the envelope at a power-law rate.
    The ``lemma21`` form fits ``K2 >= 0`` by least squares on
    ``log(estimate / (eps t))`` against ``t^p`` before choosing ``K1``.
    """
    if form not in ("lemma21", "cor22", "cor23"):
        raise ParameterError(f"time envelope form must be lemma21, cor22 or cor23, got {form!r}")
    rows = table.at_epsilon(epsilon)
    if len(rows) < 3:
        raise FitError(f"need >= 3 t points at epsilon={epsilon}, got {len(rows)}")
    if epsilon <= 0:
        raise ParameterError("time envelopes need epsilon > 0")
    p = table.p
    t = np.array([r.t for r in rows])
    est = np.array([r.estimate.value for r in rows])
    K2 = 0.0
    growth = None
    if form == "lemma21":
        pos = est > 0
        if pos.sum() >= 2:
            fit = linregress(t[pos] ** p, np.log(est[pos] / (epsilon * t[pos])))
            K2 = max(0.0, float(fit.slope))
    shape = _envelope_shape(form, t, epsilon, K2, p)
    ratio = est / shape
    if form != "lemma21" and np.all(ratio > 0):
        growth = float(linregress(np.log(t), np.log(ratio)).slope)
        if growth > growth_tol:
            raise EnvelopeError(
                f"estimate/envelope ratio grows like t^{growth:.2f} for form {form}; "
                f"the {form} envelope cannot dominate this system"
            )
    K1 = float(np.max(ratio))
    constants = {"K1": K1, "K2": K2} if form == "lemma21" else {"K1": K1}
    bound = K1 * shape
    with np.errstate(invalid="ignore", divide="ignore"):
        max_ratio = float(np.max(np.where(bound > 0, est / bound, 0.0)))
    grid = tuple(zip(t.tolist(), est.tolist(), bound.tolist()))
    return RateBound(form, constants, p=p, grid=grid, max_ratio=max_ratio, growth_slope=growth, epsilon=float(epsilon))


def fit_theorem_bound(eps, est, t, p, alpha, beta, eta: ErgodicRate) -> RateBound:
    """Nonnegative ``C1, C2`` minimising the summed bound ``C1 eps^alpha + C2 eta(t |ln eps|^(2 beta/p))``
    subject to domination of every grid estimate (a small linear program)."""
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < beta < 0.5:
        raise ParameterError(f"beta must lie in (0, 1/2), got {beta}")
    eps = np.asarray(eps, dtype=float)
    est = np.asarray(est, dtype=float)
    if np.any((eps <= 0) | (eps >= 1)):
        raise ParameterError("the theorem bound needs 0 < epsilon < 1")
    a = eps**alpha
    b = np.asarray(eta(t * np.abs(np.log(eps)) ** (2 * beta / p)), dtype=float)
    if np.all(est <= 0):
        C1 = C2 = 0.0
    elif np.all(b <= 0):
        C1, C2 = float(np.max(est / a)), 0.0
    else:
        res = linprog(
            c=[a.sum(), b.sum()],
            A_ub=-np.column_stack([a, b]),
            b_ub=-est,
            bounds=[(0, None), (0, None)],
            method="highs",
        )
        if not res.success:
            raise EnvelopeError(f"no nonnegative constants dominate the theorem grid: {res.message}")
        C1, C2 = (float(v) for v in res.x)
        # tighten against solver round-off so domination holds exactly
        scale = float(np.max(np.where(C1 * a + C2 * b > 0, est / (C1 * a + C2 * b), 1.0)))
        if scale > 1:
            C1, C2 = C1 * scale, C2 * scale
    bound = C1 * a + C2 * b
    with np.errstate(invalid="ignore", divide="ignore"):
        max_ratio = float(np.max(np.where(bound > 0, est / bound, 0.0)))
    grid = tuple(zip(eps.tolist(), est.tolist(), bound.tolist()))
    return RateBound("thm41", {"C1": C1, "C2": C2}, alpha, beta, p, grid, max_ratio, eta=eta, t=float(t))


def estimate_eta(system: FoliatedSystem, p=2.0, replicas=64, horizon=400.0, dt=1e-2, seed=0, nodes=64, burn_in=10.0):
    """Fit the ergodic rate shared by all ``g = dpi_i(K)`` from the unperturbed start ``x0``.

    The L^p error uses, per replica and time, the largest error over the
    vertical components.
    """
    d = system.chart.codim
    gs = [system.vertical_component(i) for i in range(d)]
    v0 = system.chart.project(system.x0)
    target = np.array([leaf_average_quadrature(system, g, v0, nodes) for g in gs])
    ta = leaf_average_timeseries(system, gs, system.x0, horizon, dt, replicas, seed)
    err = ta.errors(target).max(axis=-1)
    return fit_eta(ta.times, err, p=p, burn_in=burn_in)


@dataclass(eq=False)
class TheoremResult:
    table: EstimateTable
    fit: Optional[RateFit]
    bound: RateBound
    path: AveragedPath
    eta: ErgodicRate

    def monotone(self, mode="separated"):
        return check_monotone([r.estimate for r in self.table.rows], mode)


def _averaged_path(system, field_, horizon, step, gammas=()):
    if field_ is None:
        field_ = averaged_field(system)
    v0 = system.chart.project(system.x0)
    return solve_averaged_ode(field_, v0, horizon, step, system.chart.vertical_domain, gammas)


def _slow_batch(system, eps, horizon, h_slow, dt_max, seed, replicas, scheme, block_size, threads):
    dt, steps = fast_step(eps, horizon, h_slow, dt_max)
    batch = simulate_replicas(system.with_epsilon(eps), None, dt, steps, seed, replicas, scheme, block_size, threads)
    return rescaled_view(batch, eps, horizon), batch


def verify_theorem(
    system: FoliatedSystem,
    eps_grid,
    t=1.0,
    p=2.0,
    alpha=0.9,
    beta=0.4,
    replicas=400,
    seed=0,
    h_slow=1e-2,
    dt_max=1e-2,
    eta: Optional[ErgodicRate] = None,
    field_: Optional[AveragedField] = None,
    ode_step=1e-3,
    scheme=None,
    block_size=64,
    threads=1,
    eta_replicas=64,
    eta_horizon=400.0,
) -> TheoremResult:
    """Transversal sup-error of the rescaled path against the averaged ODE.

    Per epsilon estimates ``[E sup_{s <= t} |pi(y_{s/eps ^ tau}) - v(s)|^p]^(1/p)``
    (the stopped state is frozen while ``v`` continues), fits the epsilon
    exponent and the dominating ``C1 eps^alpha + C2 eta(...)`` envelope.
    ``eta`` is fitted from unperturbed paths when not given.
    """
    _check_p(system, p)
    scheme = _default_scheme(system, scheme)
    path = _averaged_path(system, field_, t, ode_step)
    if path.T0 is not None:
        raise HorizonError(f"t={t} is not below the boundary-hit time T0={path.T0:g} of the averaged path")
    if eta is None:
        eta = estimate_eta(system, p=p, replicas=eta_replicas, horizon=eta_horizon, seed=seed)
    eps_grid = sorted((float(e) for e in eps_grid), reverse=True)
    rows = []
    for j, eps in enumerate(eps_grid):
        rv, _ = _slow_batch(system, eps, t, h_slow, dt_max, seed, replicas, scheme, block_size, threads)
        diff = np.linalg.norm(rv.projections - path(rv.slow_times)[None], axis=-1)
        rows.append(Row(eps, float(t), lp_estimate(diff.max(axis=1), p, seed, key=j)))
    table = EstimateTable(rows, float(p), int(seed), "theorem")
    vals = table.values()
    fit = _loglog(eps_grid, vals) if len(eps_grid) >= 3 and np.all(vals > 0) else None
    bound = fit_theorem_bound(eps_grid, vals, t, p, alpha, beta, eta)
    return TheoremResult(table, fit, bound, path, eta)


@dataclass(frozen=True)
class ExitRow:
    epsilon: float
    t_gamma: float
    exits: int
    replicas: int
    probability: float
    wilson_low: float
    wilson_high: float
    estimate: McEstimate
    bound: float


@dataclass(eq=False)
class ExitTable:
    rows: List[ExitRow]
    gamma: float
    p: float
    master_seed: int

    HEADER = ("epsilon", "t_gamma", "p", "probability", "wilson_low", "wilson_high", "estimate", "bound", "replicas")

    def to_csv(self, path):
        write_csv(
            path,
            self.HEADER,
            ((r.epsilon, r.t_gamma, self.p, r.probability, r.wilson_low, r.wilson_high, r.estimate.value, r.bound,
              r.replicas) for r in self.rows),
        )

    def bound_holds(self):
        """Empirical frequency compatible with the bound (95% Wilson) wherever the bound is < 1."""
        return all(r.wilson_low <= r.bound for r in self.rows if r.bound < 1)

    def nonincreasing(self):
        return all(b.probability <= a.probability for a, b in zip(self.rows[:-1], self.rows[1:]))


def estimate_exit_probability(
    system: FoliatedSystem,
    gamma,
    p=2.0,
    eps_grid=(0.2, 0.1, 0.05),
    replicas=400,
    seed=0,
    t_gamma=None,
    h_slow=1e-2,
    dt_max=1e-2,
    field_: Optional[AveragedField] = None,
    ode_step=1e-3,
    max_horizon=100.0,
    scheme=None,
    block_size=64,
    threads=1,
) -> ExitTable:
    """Empirical ``P(eps tau^eps < T_gamma)`` next to ``gamma^-p E[sup |pi(y) - v|^p]``.

    ``T_gamma`` comes from the averaged path unless given explicitly; it must
    be finite.
    """
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    _check_p(system, p)
    scheme = _default_scheme(system, scheme)
    if t_gamma is None:
        path = _averaged_path(system, field_, max_horizon, ode_step, [gamma])
        t_gamma = path.T_gamma[float(gamma)]
        if not math.isfinite(t_gamma):
            raise ParameterError(
                f"averaged path stays farther than gamma={gamma} from the boundary up to {max_horizon}; "
                "set t_gamma explicitly"
            )
    else:
        path = _averaged_path(system, field_, t_gamma, ode_step, [gamma])
    t_gamma = float(t_gamma)
    if t_gamma <= 0:
        raise ParameterError("T_gamma is zero: the start point is already within gamma of the boundary")
    rows = []
    for j, eps in enumerate(sorted((float(e) for e in eps_grid), reverse=True)):
        rv, batch = _slow_batch(system, eps, t_gamma, h_slow, dt_max, seed, replicas, scheme, block_size, threads)
        exit_times = rv.exit_times
        exits = int(np.sum(exit_times < t_gamma))
        diff = np.linalg.norm(rv.projections - path(rv.slow_times)[None], axis=-1)
        diff = np.where(batch.stop_mask(), diff, 0.0)
        est = lp_estimate(diff.max(axis=1), p, seed, key=j)
        ci = binomtest(exits, replicas).proportion_ci(0.95, method="wilson")
        bound = float((est.value / gamma) ** p)
        rows.append(ExitRow(eps, t_gamma, exits, int(replicas), exits / replicas, float(ci.low), float(ci.high), est, bound))
    return ExitTable(rows, float(gamma), float(p), int(seed))


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: tuple
    epsilon: float
    horizon: float
    codim: int

    @property
    def top(self):
        return self.exponents[0]

    @property
    def transversal(self):
        """The ``codim`` largest exponents (the conservative choice for nonpositivity checks)."""
        return self.exponents[: self.codim]


def _heun_tangent_step(system, x, Phi, dt, dB):
    eps = system.epsilon

    def drift(y, P):
        f = system.drift(y)
        J = system.drift.jacobian(y)
        if eps:
            f = f + eps * system.perturbation(y)
            J = J + eps * system.perturbation.jacobian(y)
        return f, J @ P

    def noise(y, P):
        g = np.zeros_like(y)
        G = np.zeros_like(P)
        for k, fld in enumerate(system.diffusion):
            g = g + fld(y) * dB[k]
            G = G + (fld.jacobian(y) @ P) * dB[k]
        return g, G

    f, F = drift(x, Phi)
    g, G = noise(x, Phi)
    xp, Pp = x + f * dt + g, Phi + F * dt + G
    f2, F2 = drift(xp, Pp)
    g2, G2 = noise(xp, Pp)
    return x + 0.5 * (f + f2) * dt + 0.5 * (g + g2), Phi + 0.5 * (F + F2) * dt + 0.5 * (G + G2)


def estimate_lyapunov(
    system: FoliatedSystem,
    epsilon,
    horizon=1000.0,
    dt=1e-2,
    seed=0,
    qr_every=10,
    scheme=None,
    x0=None,
    replica=0,
) -> LyapunovSpectrum:
    """Full Lyapunov spectrum in ambient coordinates by QR re-orthonormalisation.

    ``exact_leaf`` propagates tangent vectors with the exact leaf-flow
    Jacobian followed by ``I + eps dt DK``; ``heun`` integrates the
    variational equation alongside the state.  The chart domain is ignored:
    the spectrum concerns the flow on the whole space.
    """
    system = system.with_epsilon(epsilon)
    scheme = _default_scheme(system, scheme)
    if scheme == "exact_leaf" and system.leaf_flow is None:
        raise SchemeError(f"system {system.name!r} has no closed-form leaf flow")
    fields = [system.perturbation] if scheme == "exact_leaf" else [system.drift, system.perturbation, *system.diffusion]
    for fld in fields:
        if not fld.has_jacobian:
            raise JacobianMissing(f"Lyapunov estimation needs the Jacobian of {fld!r}")
    if qr_every < 1:
        raise ParameterError("qr_every must be >= 1")
    steps = int(math.ceil(horizon / dt - 1e-9))
    dt = horizon / steps
    noise = generate_noise(seed, replica, system.noise_dim, dt, steps).increments
    N = system.ambient_dim
    x = np.asarray(system.x0 if x0 is None else x0, dtype=float).copy()
    Phi = np.eye(N)
    logs = np.zeros(N)
    eye = np.eye(N)
    K = system.perturbation
    eps = system.epsilon
    for k in range(steps):
        dB = noise[k]
        if scheme == "exact_leaf":
            x, R = system.leaf_flow.ambient_step(x, dt, dB)
            Phi = R @ Phi
            if eps:
                Phi = (eye + (eps * dt) * K.jacobian(x)) @ Phi
                x = x + (eps * dt) * K(x)
        else:
            x, Phi = _heun_tangent_step(system, x, Phi, dt, dB)
        if (k + 1) % qr_every == 0 or k == steps - 1:
            Qm, Rm = np.linalg.qr(Phi)
            diag = np.diag(Rm)
            logs += np.log(np.abs(diag))
            Phi = Qm * np.sign(diag)
    exps = np.sort(logs / horizon)[::-1]
    return LyapunovSpectrum(tuple(float(e) for e in exps), float(epsilon), float(horizon), system.chart.codim)


def estimate_delta(
    system: FoliatedSystem,
    eps_grid,
    t=1.0,
    s=0.0,
    p=2.0,
    component=0,
    replicas=200,
    seed=0,
    h_slow=1e-2,
    dt_max=1e-2,
    field_: Optional[AveragedField] = None,
    scheme=None,
    block_size=64,
    threads=1,
) -> EstimateTable:
    """``[E sup_{u <= t} |delta(eps, u)|^p]^(1/p)`` for ``g = dpi_component(K)``."""
    _check_p(system, p)
    scheme = _default_scheme(system, scheme)
    Q = field_ if field_ is not None else averaged_field(system)
    g = system.vertical_component(component)
    Qg = Q.component(component)
    rows = []
    for j, eps in enumerate(sorted((float(e) for e in eps_grid), reverse=True)):
        rv, _ = _slow_batch(system, eps, s + t, h_slow, dt_max, seed, replicas, scheme, block_size, threads)
        _, vals = delta_running(rv, g, Qg, s, t)
        rows.append(Row(eps, float(t), lp_estimate(np.abs(vals).max(axis=1), p, seed, key=j)))
    return EstimateTable(rows, float(p), int(seed), "delta")


def strong_error_order(
    system: FoliatedSystem,
    exact: Callable,
    horizon=1.0,
    dt_fine=2.5e-3,
    factors=(4, 2, 1),
    paths=1000,
    seed=0,
    scheme="heun",
) -> RateFit:
    """Strong convergence order of a scheme against a closed-form solution.

    One fine Brownian path per replica is summed into coarser increments, so
    every step size sees the same noise.  ``exact(x0, B_T)`` returns the
    ambient solution at ``horizon`` for Brownian endpoints ``B_T`` of shape
    ``(R, r)``.  The fit is ``log E|X_T - exact| `` against ``log dt``.
    """
    steps = int(round(horizon / dt_fine))
    if steps < 1 or not math.isclose(steps * dt_fine, horizon, rel_tol=1e-9):
        raise ParameterError("horizon must be a multiple of dt_fine")
    inc = noise_block(seed, range(int(paths)), system.noise_dim, dt_fine, steps)
    target = np.asarray(exact(system.x0, inc.sum(axis=1)), dtype=float)
    dts, errs = [], []
    for m in sorted(factors, reverse=True):
        if steps % m:
            raise ParameterError(f"factor {m} does not divide {steps} steps")
        coarse = inc.reshape(inc.shape[0], steps // m, m, -1).sum(axis=2)
        batch = integrate_paths(system, None, coarse, dt_fine * m, scheme)
        dts.append(dt_fine * m)
        errs.append(float(np.mean(np.linalg.norm(batch.states[:, -1] - target, axis=-1))))
    return _loglog(dts, errs)
