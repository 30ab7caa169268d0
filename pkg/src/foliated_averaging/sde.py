"""Seeded Brownian increments and Stratonovich integration of foliated systems.

Two schemes are available:

``heun``
    Stochastic Heun predictor-corrector in ambient coordinates; converges to
    the Stratonovich solution without an explicit drift correction.
``exact_leaf``
    Exact leaf flow of the unperturbed system in chart coordinates composed
    with an Euler step for ``epsilon K``.  The vertical coordinates change only
    through the perturbation, so they are preserved bit-exactly when
    ``epsilon = 0``.

Trajectories are stopped at the first grid point outside the chart domain;
batched paths freeze the stopped state for the remaining grid points.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, HorizonError, ParameterError, SchemeError
from .io import format_float, write_csv
from .systems import FoliatedSystem

__all__ = [
    "NoisePath",
    "Trajectory",
    "PathBatch",
    "RescaledPath",
    "random_stream",
    "generate_noise",
    "noise_block",
    "integrate_paths",
    "integrate_stratonovich",
    "integrate_coupled",
    "simulate_replicas",
    "fast_step",
    "rescaled_view",
    "SCHEMES",
]

log = logging.getLogger(__name__)

SCHEMES = ("heun", "exact_leaf")
_MAX_SEED = 2**64 - 1


def random_stream(master_seed, *key) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(master_seed, *key)``.

    Equivalent to the ``key``-th child of ``SeedSequence(master_seed).spawn``,
    so streams are independent and can be created in any order.
    """
    master_seed = int(master_seed)
    if not 0 <= master_seed <= _MAX_SEED:
        raise ParameterError(f"master_seed must be an unsigned 64-bit integer, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True, eq=False)
class NoisePath:
    dt: float
    steps: int
    r: int
    increments: np.ndarray
    master_seed: int
    replica_index: int

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def brownian(self):
        """Brownian path ``B_t`` on the grid, starting at 0."""
        out = np.zeros((self.steps + 1, self.r))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def coarsen(self, factor) -> "NoisePath":
        """Sum consecutive blocks of ``factor`` increments (same Brownian path, larger dt)."""
        factor = int(factor)
        if factor < 1 or self.steps % factor:
            raise ParameterError(f"cannot coarsen {self.steps} steps by {factor}")
        inc = self.increments.reshape(self.steps // factor, factor, self.r).sum(axis=1)
        return NoisePath(self.dt * factor, self.steps // factor, self.r, inc, self.master_seed, self.replica_index)


def _check_grid(r, dt, steps):
    if not (np.isfinite(dt) and dt > 0):
        raise ParameterError(f"dt must be positive, got {dt}")
    if int(steps) < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if int(r) < 1:
        raise ParameterError(f"driving dimension must be >= 1, got {r}")


def generate_noise(master_seed, replica_index, r, dt, steps) -> NoisePath:
    """I.i.d. N(0, dt) increments for one replica."""
    _check_grid(r, dt, steps)
    rng = random_stream(master_seed, replica_index)
    inc = rng.standard_normal((int(steps), int(r))) * math.sqrt(dt)
    return NoisePath(float(dt), int(steps), int(r), inc, int(master_seed), int(replica_index))


def noise_block(master_seed, replicas: Sequence[int], r, dt, steps):
    """Stack of increments ``(len(replicas), steps, r)``; row i is replica ``replicas[i]``."""
    _check_grid(r, dt, steps)
    out = np.empty((len(replicas), int(steps), int(r)))
    for i, rep in enumerate(replicas):
        out[i] = random_stream(master_seed, rep).standard_normal((int(steps), int(r)))
    out *= math.sqrt(dt)
    return out


@dataclass(eq=False)
class Trajectory:
    """One time-stamped path; ``exit_step`` indexes the first state outside the domain."""

    times: np.ndarray
    states: np.ndarray
    chart_states: np.ndarray
    exit_step: Optional[int]
    dt: float
    t_end: float
    leaf_dim: int

    @property
    def projections(self):
        return self.chart_states[:, self.leaf_dim:]

    @property
    def exit_time(self):
        return None if self.exit_step is None else float(self.times[self.exit_step])

    def to_csv(self, path):
        """Columns ``t, x1..xN, pi1..pid`` with an ``# exit_time=`` footer."""
        N = self.states.shape[1]
        d = self.projections.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(N)] + [f"pi{i + 1}" for i in range(d)]
        rows = np.column_stack([self.times, self.states, self.projections])
        et = "none" if self.exit_time is None else format_float(self.exit_time)
        write_csv(path, header, rows, footer=[f"exit_time={et}"])


@dataclass(eq=False)
class PathBatch:
    """Replica batch on a common grid; ``exit_step`` is -1 for paths that never exit."""

    times: np.ndarray
    states: np.ndarray
    chart_states: np.ndarray
    exit_step: np.ndarray
    dt: float
    leaf_dim: int

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def replicas(self):
        return self.states.shape[0]

    @property
    def projections(self):
        return self.chart_states[..., self.leaf_dim:]

    @property
    def exited(self):
        return self.exit_step >= 0

    def stop_mask(self):
        """Boolean ``(R, S+1)`` mask of grid points at or before the stopping index."""
        last = np.where(self.exited, self.exit_step, len(self.times) - 1)
        return np.arange(len(self.times))[None, :] <= last[:, None]

    def replica(self, i) -> Trajectory:
        k = int(self.exit_step[i])
        stop = len(self.times) if k < 0 else k + 1
        return Trajectory(
            self.times[:stop],
            self.states[i, :stop],
            self.chart_states[i, :stop],
            None if k < 0 else k,
            self.dt,
            self.t_end,
            self.leaf_dim,
        )


def _noise_term(system, x, dB):
    total = np.zeros_like(x)
    for k, field in enumerate(system.diffusion):
        total += field(x) * dB[:, k, None]
    return total


def _drift(system, x):
    f = system.drift(x)
    if system.epsilon:
        f = f + system.epsilon * system.perturbation(x)
    return f


def integrate_paths(system: FoliatedSystem, x0, increments, dt, scheme="heun") -> PathBatch:
    """Integrate a batch driven by ``increments`` of shape ``(R, steps, r)``.

    ``x0`` is one start point ``(N,)`` shared by all rows or one per row ``(R, N)``;
    ``None`` uses the system's default initial condition.
    """
    if scheme not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if scheme == "exact_leaf" and system.leaf_flow is None:
        raise SchemeError(f"system {system.name!r} has no closed-form leaf flow")
    chart = system.chart
    increments = np.asarray(increments, dtype=float)
    R, steps, r = increments.shape
    if r != system.noise_dim:
        raise ParameterError(f"noise has {r} columns, system needs {system.noise_dim}")
    x0 = np.asarray(system.x0 if x0 is None else x0, dtype=float)
    if x0.shape not in ((chart.ambient_dim,), (R, chart.ambient_dim)) or not np.all(np.isfinite(x0)):
        raise DomainError(f"initial point {x0} is not a finite point of R^{chart.ambient_dim}", x0)
    if not np.all(chart.contains(x0)):
        raise DomainError(f"initial point {x0.tolist()} is outside the {chart.name} chart domain", x0)
    x0 = np.broadcast_to(x0, (R, chart.ambient_dim))

    n = chart.leaf_dim
    box = chart.vertical_domain
    eps = system.epsilon
    S = steps + 1
    chart_states = np.empty((R, S, n + chart.codim))
    exit_step = np.full(R, -1, dtype=np.int64)
    alive = np.ones(R, dtype=bool)

    if scheme == "heun":
        states = np.empty((R, S, chart.ambient_dim))
        x = x0.copy()
        states[:, 0] = x
        for k in range(steps):
            dB = increments[:, k]
            f = _drift(system, x)
            g = _noise_term(system, x, dB)
            xp = x + f * dt + g
            x_new = x + 0.5 * (f + _drift(system, xp)) * dt + 0.5 * (g + _noise_term(system, xp, dB))
            x = np.where(alive[:, None], x_new, x)
            states[:, k + 1] = x
            inside = box.contains(chart.project(x))
            newly = alive & ~inside
            exit_step[newly] = k + 1
            alive &= inside
        chart_states[:] = chart.unwrap(chart.chart_state(states), axis=-2)
    else:
        flow = system.leaf_flow
        c = chart.chart_state(x0)
        chart_states[:, 0] = c
        for k in range(steps):
            c_new = flow.chart_step(c, dt, increments[:, k])
            if eps:
                p = chart.ambient_from_state(c_new)
                c_new = c_new + (eps * dt) * chart.dphi(p, system.perturbation(p))
            c = np.where(alive[:, None], c_new, c)
            chart_states[:, k + 1] = c
            inside = box.contains(c[:, n:])
            newly = alive & ~inside
            exit_step[newly] = k + 1
            alive &= inside
        states = chart.ambient_from_state(chart_states)

    times = dt * np.arange(S)
    return PathBatch(times, states, chart_states, exit_step, float(dt), n)


def integrate_stratonovich(system: FoliatedSystem, x0, noise: NoisePath, scheme="heun") -> Trajectory:
    """Single trajectory, truncated after the first exit from the chart domain."""
    batch = integrate_paths(system, x0, noise.increments[None], noise.dt, scheme)
    return batch.replica(0)


def integrate_coupled(system: FoliatedSystem, x0, noise: NoisePath, scheme="heun"):
    """Unperturbed (``epsilon = 0``) and perturbed trajectories on one noise path."""
    base = integrate_stratonovich(system.with_epsilon(0.0), x0, noise, scheme)
    pert = integrate_stratonovich(system, x0, noise, scheme)
    return base, pert


def _concat(batches):
    first = batches[0]
    return PathBatch(
        first.times,
        np.concatenate([b.states for b in batches]),
        np.concatenate([b.chart_states for b in batches]),
        np.concatenate([b.exit_step for b in batches]),
        first.dt,
        first.leaf_dim,
    )


def simulate_replicas(
    system: FoliatedSystem,
    x0,
    dt,
    steps,
    master_seed,
    replicas,
    scheme="heun",
    block_size=64,
    threads=1,
    coupled=False,
):
    """Monte Carlo batch of ``replicas`` paths (replica indices ``0..replicas-1``).

    Replicas are processed in fixed blocks of ``block_size``; ``threads`` only
    changes how blocks are scheduled, never the numbers produced.  With
    ``coupled=True`` returns ``(unperturbed, perturbed)`` batches driven by the
    same increments.
    """
    replicas = int(replicas)
    if replicas < 1:
        raise ParameterError("need at least one replica")
    block_size = max(1, int(block_size))
    blocks = [range(i, min(i + block_size, replicas)) for i in range(0, replicas, block_size)]
    base_system = system.with_epsilon(0.0)

    def run(block):
        inc = noise_block(master_seed, block, system.noise_dim, dt, steps)
        pert = integrate_paths(system, x0, inc, dt, scheme)
        if not coupled:
            return pert
        return integrate_paths(base_system, x0, inc, dt, scheme), pert

    log.debug("simulating %d replicas x %d steps (dt=%g, eps=%g)", replicas, steps, dt, system.epsilon)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    if coupled:
        return _concat([r[0] for r in results]), _concat([r[1] for r in results])
    return _concat(results)


def fast_step(epsilon, slow_horizon, h_slow=1e-2, dt_max=1e-2):
    """Fast-time step and step count for a slow horizon under the rescaling ``s = epsilon t``.

    The fast step is at most ``dt_max`` (leaf resolution) and at most
    ``h_slow / epsilon`` (slow-time resolution); it is shrunk so the grid ends
    exactly at ``slow_horizon / epsilon``.
    """
    if not epsilon > 0:
        raise ParameterError(f"rescaling needs epsilon > 0, got {epsilon}")
    if not (h_slow > 0 and dt_max > 0 and slow_horizon > 0):
        raise ParameterError("h_slow, dt_max and slow_horizon must be positive")
    fast_horizon = slow_horizon / epsilon
    dt = min(dt_max, h_slow / epsilon)
    steps = max(1, int(math.ceil(fast_horizon / dt - 1e-9)))
    log.info("eps=%g: %d fast steps of dt=%g", epsilon, steps, fast_horizon / steps)
    return fast_horizon / steps, steps


@dataclass(eq=False)
class RescaledPath:
    """A path viewed on slow time ``s = epsilon * t``; leading axes are replicas."""

    slow_times: np.ndarray
    states: np.ndarray
    chart_states: np.ndarray
    exit_step: np.ndarray
    epsilon: float
    leaf_dim: int

    @property
    def projections(self):
        return self.chart_states[..., self.leaf_dim:]

    @property
    def exit_times(self):
        """``epsilon * tau`` per replica (``inf`` if no exit)."""
        es = np.atleast_1d(self.exit_step)
        out = np.full(es.shape, np.inf)
        hit = es >= 0
        out[hit] = self.slow_times[es[hit]]
        return out


def rescaled_view(path, epsilon, slow_horizon=None) -> RescaledPath:
    """Reindex a :class:`Trajectory` or :class:`PathBatch` on slow time."""
    if not epsilon > 0:
        raise ParameterError(f"rescaling needs epsilon > 0, got {epsilon}")
    if slow_horizon is not None and epsilon * path.t_end < slow_horizon * (1 - 1e-12):
        raise HorizonError(
            f"path reaches slow time {epsilon * path.t_end:g}, {slow_horizon:g} requested"
        )
    if isinstance(path, Trajectory):
        es = np.array([-1 if path.exit_step is None else path.exit_step])
        return RescaledPath(
            epsilon * path.times, path.states[None], path.chart_states[None], es, float(epsilon), path.leaf_dim
        )
    return RescaledPath(
        epsilon * path.times, path.states, path.chart_states, path.exit_step, float(epsilon), path.leaf_dim
    )
