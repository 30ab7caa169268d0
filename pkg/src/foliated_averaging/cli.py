"""Command-line front end: one subcommand per experiment.

``foliated <experiment> --config FILE [flags]`` or ``foliated run FILE``.
Artifacts go to ``<out>/<experiment>/<tag>/{table.csv, summary.txt, manifest}``.
Exit status is 0 when every asserted property holds, 2 when one fails and
1 on runtime or configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path
from typing import List, Tuple

import numpy as np

from . import __version__
from . import experiments as ex
from .averaging import averaged_field
from .config import EXPERIMENTS, RunConfig, apply_overrides, parse_raw, validate
from .errors import ConfigError, EnvelopeError, FoliatedError
from .io import write_csv
from .sde import fast_step, simulate_replicas
from .systems import cylinder_system, scalar_linear_system, sphere_system

__all__ = ["main", "run", "build_system", "run_experiment", "Outcome"]

log = logging.getLogger(__name__)


@dataclasses.dataclass
class Outcome:
    """What an experiment produced: a CSV table, a summary and property verdicts."""

    header: Tuple[str, ...]
    rows: list
    summary: dict
    properties: List[Tuple[str, bool]]

    @property
    def ok(self):
        return all(v for _, v in self.properties)


def build_system(cfg: RunConfig):
    s, c = cfg.system, cfg.chart
    name = s["name"]
    if name == "cylinder":
        kwargs = dict(lambda1=s["lambda1"], lambda2=s["lambda2"], perturbation=s["perturbation"],
                      r_min=c["r_min"], r_max=c["r_max"], z_min=c["z_min"], z_max=c["z_max"])
        if s["k"] is not None:
            kwargs["k"] = s["k"]
        if s["x0"] is not None:
            kwargs["x0"] = s["x0"]
        return cylinder_system(**kwargs)
    if name == "sphere":
        kwargs = dict(sigma=s["sigma"], lambda1=s["lambda1"], perturbation=s["perturbation"],
                      r_min=c["r_min"], r_max=c["r_max"])
        if s["k"] is not None:
            kwargs["k"] = s["k"]
        if s["x0"] is not None:
            kwargs["x0"] = s["x0"]
        return sphere_system(**kwargs)
    system = scalar_linear_system(w_min=c["w_min"], w_max=c["w_max"])
    if s["x0"] is not None:
        system = dataclasses.replace(system, x0=np.asarray(s["x0"], dtype=float))
    return system


def _scheme(cfg):
    sch = cfg.run["scheme"]
    return None if sch == "auto" else sch


def _observable(cfg, system):
    obs = cfg["coupled"]["observable"]
    i = int(obs[-1]) - 1
    if obs.startswith("pi"):
        if i >= system.chart.codim:
            raise ConfigError(f"coupled.observable {obs}: the chart has {system.chart.codim} vertical coordinates")
        return i
    if i >= system.ambient_dim:
        raise ConfigError(f"coupled.observable {obs}: the system has {system.ambient_dim} ambient coordinates")
    return ex.ambient_observable(i)


def _fmt(x):
    return None if x is None else (x if not isinstance(x, float) or math.isfinite(x) else str(x))


def _table_rows(table):
    return list(table.csv_rows())


def _simulate(cfg, system):
    run = cfg.run
    horizon = max(run["t"])
    steps = int(math.ceil(horizon / run["dt"] - 1e-9))
    dt = horizon / steps
    d, N = system.chart.codim, system.ambient_dim
    rows, exits = [], {}
    for eps in run["epsilon"]:
        batch = simulate_replicas(system.with_epsilon(eps), None, dt, steps, cfg.seed, 1, _scheme(cfg) or
                                  ("exact_leaf" if system.leaf_flow is not None else "heun"))
        tr = batch.replica(0)
        exits[repr(eps)] = _fmt(tr.exit_time)
        for t, x, v in zip(tr.times, tr.states, tr.projections):
            rows.append((eps, t, *x, *v))
    header = ("epsilon", "t", *[f"x{i + 1}" for i in range(N)], *[f"pi{i + 1}" for i in range(d)])
    return Outcome(header, rows, {"steps": steps, "dt": dt, "exit_time": exits}, [])


def _average(cfg, system):
    a = cfg["average"]
    Q = averaged_field(system, a["source"], a["grid"], a["nodes"], seed=cfg.seed)
    d = system.chart.codim
    mesh = np.stack(np.meshgrid(*Q.grid, indexing="ij"), axis=-1).reshape(-1, d)
    vals = Q.table.reshape(-1, d)
    header = (("v_grid",) if d == 1 else tuple(f"v_grid{i + 1}" for i in range(d))) + tuple(f"Q{i + 1}" for i in range(d))
    summary = {"source": a["source"], "lipschitz_estimate": Q.lipschitz_estimate}
    props = []
    if system.closed_form_average is not None and a["source"] == "quadrature":
        err = float(np.max(np.abs(vals - np.asarray(system.closed_form_average(mesh)))))
        summary["max_error_vs_closed_form"] = err
        props.append((f"quadrature matches closed-form average within {a['tol']:g}", err <= a["tol"]))
    return Outcome(header, [tuple(r) for r in np.column_stack([mesh, vals])], summary, props)


def _coupled(cfg, system):
    run, c = cfg.run, cfg["coupled"]
    table = ex.estimate_coupled_error(
        system, _observable(cfg, system), run["epsilon"], run["t"], run["p"], run["replicas"], cfg.seed,
        run["dt"], scheme=_scheme(cfg), block_size=run["block_size"], threads=cfg.threads,
    )
    summary, props = {}, []
    eps_pos = sorted({e for e in run["epsilon"] if e > 0}, reverse=True)
    for t in sorted(set(run["t"])):
        ests = [r.estimate for r in table.at_t(t) if r.epsilon > 0]
        if len(ests) >= 2:
            props.append((f"estimate decreases with epsilon at t={t:g} (CI-separated)", ex.check_monotone(ests)))
        if len(eps_pos) >= 3:
            fit = ex.fit_epsilon_order(table, t)
            summary[f"epsilon_order_t={t!r}"] = {"slope": fit.slope, "stderr": fit.stderr, "r_squared": fit.r_squared}
            lo, hi = c["slope_min"], c["slope_max"]
            if lo is not None or hi is not None:
                lo = -math.inf if lo is None else lo
                hi = math.inf if hi is None else hi
                props.append((f"epsilon order at t={t:g} in [{lo:g}, {hi:g}]", lo <= fit.slope <= hi))
    if c["envelope"] != "none":
        for eps in eps_pos:
            key = f"envelope_{c['envelope']}_eps={eps!r}"
            try:
                b = ex.fit_time_envelope(table, eps, c["envelope"], c["growth_tol"])
                summary[key] = {"constants": b.constants, "growth_slope": b.growth_slope}
                rejected = False
            except EnvelopeError as exc:
                summary[key] = {"rejected": str(exc)}
                rejected = True
            want = c["expect"] == "reject"
            verb = "rejected" if want else "dominates"
            props.append((f"{c['envelope']} envelope {verb} at eps={eps:g}", rejected == want))
    return Outcome(table.HEADER, _table_rows(table), summary, props)


def _theorem(cfg, system):
    run, th = cfg.run, cfg["theorem"]
    (t,) = run["t"][:1]
    res = ex.verify_theorem(
        system, run["epsilon"], t, run["p"], th["alpha"], th["beta"], run["replicas"], cfg.seed,
        run["h_slow"], run["dt_max"], scheme=_scheme(cfg), block_size=run["block_size"], threads=cfg.threads,
        eta_replicas=th["eta_replicas"], eta_horizon=th["eta_horizon"],
    )
    eta = res.eta
    vals = res.table.values()
    summary = {
        "eta": {"model": eta.model, "c": eta.c, "q": eta.q},
        "constants": res.bound.constants,
        "alpha": th["alpha"],
        "beta": th["beta"],
        "T0": _fmt(res.path.T0),
        "fast_steps": {repr(e): fast_step(e, t, run["h_slow"], run["dt_max"])[1] for e in run["epsilon"]},
    }
    props = [("envelope C1 eps^alpha + C2 eta dominates every estimate", res.bound.dominates())]
    if np.all(vals <= th["zero_tol"]):
        props.append((f"estimates vanish (<= {th['zero_tol']:g})", True))
    else:
        props.append((f"estimate decreases with epsilon ({th['monotone']})", res.monotone(th["monotone"])))
        if res.fit is not None:
            summary["epsilon_order"] = {"slope": res.fit.slope, "stderr": res.fit.stderr}
            props.append(("fitted epsilon exponent > 0", res.fit.slope > 0))
    if len(run["t"]) > 1:
        summary["note"] = f"theorem uses the first t value only ({t!r})"
    return Outcome(res.table.HEADER, _table_rows(res.table), summary, props)


def _exit(cfg, system):
    run, e = cfg.run, cfg["exit"]
    table = ex.estimate_exit_probability(
        system, e["gamma"], run["p"], run["epsilon"], run["replicas"], cfg.seed, e["t_gamma"], run["h_slow"],
        run["dt_max"], max_horizon=e["max_horizon"], scheme=_scheme(cfg), block_size=run["block_size"],
        threads=cfg.threads,
    )
    rows = [(r.epsilon, r.t_gamma, table.p, r.probability, r.wilson_low, r.wilson_high, r.estimate.value, r.bound,
             r.replicas) for r in table.rows]
    summary = {"gamma": table.gamma, "t_gamma": table.rows[0].t_gamma, "exits": {repr(r.epsilon): r.exits for r in table.rows}}
    props = [
        ("exit frequency nonincreasing as epsilon decreases", table.nonincreasing()),
        ("exit frequency within the bound where the bound is < 1 (95% Wilson)", table.bound_holds()),
    ]
    return Outcome(table.HEADER, rows, summary, props)


def _lyapunov(cfg, system):
    run, ly = cfg.run, cfg["lyapunov"]
    N = system.ambient_dim
    specs = [ex.estimate_lyapunov(system, eps, ly["horizon"], run["dt"], cfg.seed, ly["qr_every"], _scheme(cfg))
             for eps in sorted(run["epsilon"], reverse=True)]
    header = ("epsilon", "horizon", *[f"lambda{i + 1}" for i in range(N)])
    rows = [(s.epsilon, s.horizon, *s.exponents) for s in specs]
    props = []
    if ly["top_rate"] is not None:
        for s in specs:
            want = ly["top_rate"] * s.epsilon
            props.append((f"top exponent {s.top:.4g} = {want:.4g} +- {ly['top_tol']:g} at eps={s.epsilon:g}",
                          abs(s.top - want) <= ly["top_tol"]))
    if ly["transversal_max"] is not None:
        tops = [max(s.transversal) for s in specs]
        props.append((f"transversal exponents <= {ly['transversal_max']:g}", all(v <= ly["transversal_max"] for v in tops)))
        props.append(("transversal exponents nonincreasing toward 0 as epsilon decreases",
                      all(abs(b) <= abs(a) + 1e-12 for a, b in zip(tops[:-1], tops[1:]))))
    return Outcome(header, rows, {"codim": system.chart.codim}, props)


def _delta(cfg, system):
    run, dl = cfg.run, cfg["delta"]
    (t,) = run["t"][:1]
    table = ex.estimate_delta(
        system, run["epsilon"], t, dl["s"], run["p"], dl["component"], run["replicas"], cfg.seed, run["h_slow"],
        run["dt_max"], scheme=_scheme(cfg), block_size=run["block_size"], threads=cfg.threads,
    )
    ests = [r.estimate for r in table.rows]
    props = [("delta estimate shows no significant increase as epsilon decreases", ex.check_monotone(ests, "no_inversion"))]
    summary = {}
    if len(ests) >= 3 and all(e.value > 0 for e in ests):
        fit = ex.fit_epsilon_order(table, t)
        summary["epsilon_order"] = {"slope": fit.slope, "stderr": fit.stderr}
    return Outcome(table.HEADER, _table_rows(table), summary, props)


_RUNNERS = {
    "simulate": _simulate,
    "average": _average,
    "coupled-error": _coupled,
    "theorem": _theorem,
    "exit-prob": _exit,
    "lyapunov": _lyapunov,
    "delta": _delta,
}


def run_experiment(cfg: RunConfig) -> Outcome:
    system = build_system(cfg)
    return _RUNNERS[cfg.experiment](cfg, system)


def run(cfg: RunConfig, out=None, stream=None) -> int:
    """Execute ``cfg``, write artifacts and print one verdict line per property."""
    stream = sys.stdout if stream is None else stream
    base = Path(out if out is not None else cfg.out)
    target = base / cfg.experiment / cfg.tag
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            outcome = run_experiment(cfg)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except FoliatedError as exc:
        print(f"error: {cfg.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    target.mkdir(parents=True, exist_ok=True)
    write_csv(target / "table.csv", outcome.header, outcome.rows)
    summary = {
        "experiment": cfg.experiment,
        "master_seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "results": outcome.summary,
        "properties": {name: ("pass" if ok else "FAIL") for name, ok in outcome.properties},
    }
    (target / "summary.txt").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_fmt) + "\n", encoding="utf-8")
    (target / "manifest").write_text(
        f"config_hash={cfg.config_hash()} master_seed={cfg.seed} version={__version__}\n", encoding="utf-8"
    )
    for name, ok in outcome.properties:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}", file=stream)
    print(f"wrote {target}", file=stream)
    return 0 if outcome.ok else 2


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _threads(text):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from None


def _setting(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        parsed = parse_raw(f"v = {value}")["v"]
    except ConfigError:
        parsed = value
    return key.strip(), parsed


def _parser():
    p = argparse.ArgumentParser(prog="foliated", description="Simulate foliated SDEs and check averaging rates.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def flags(sp, config_required):
        if config_required:
            sp.add_argument("config", help="config file")
        else:
            sp.add_argument("--config", help="config file")
        sp.add_argument("--seed", type=int, help="master seed (u64)")
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--eps", type=_floats, help="comma-separated epsilon grid")
        sp.add_argument("--t", type=_floats, help="comma-separated time grid")
        sp.add_argument("--p", type=float)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=_threads, help="worker threads or 'auto'")
        sp.add_argument("--set", type=_setting, action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. run.h_slow=0.005")
        sp.add_argument("-v", "--verbose", action="store_true")

    flags(sub.add_parser("run", help="run the experiment named in a config file"), True)
    for name in EXPERIMENTS:
        flags(sub.add_parser(name, help=f"run the {name} experiment"), False)
    return p


def _overrides(args):
    ov = {}
    if args.command != "run":
        ov["experiment"] = args.command
    for flag, key in (("seed", "seed"), ("replicas", "run.replicas"), ("eps", "run.epsilon"), ("t", "run.t"),
                      ("p", "run.p"), ("out", "out"), ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            ov[key] = v
    ov.update(dict(args.set))
    return ov


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    env_seed = os.environ.get("FOLIATED_SEED")
    try:
        fallback = int(env_seed) if env_seed not in (None, "") else None
    except ValueError:
        print(f"error: FOLIATED_SEED must be an integer, got {env_seed!r}", file=sys.stderr)
        return 1
    try:
        raw = {}
        if args.config:
            raw = parse_raw(Path(args.config).read_text(encoding="utf-8"))
        cfg = validate(apply_overrides(raw, _overrides(args)), seed_fallback=fallback)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
