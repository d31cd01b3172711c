"""Command-line entry point.

Every command reads a stream (``--input`` CSV) or generates one in process
(``--generate`` JSON spec), runs one pipeline or diagnostic and writes
``metrics.csv`` (one row per step), ``summary.json`` and, where it applies,
a per-group or per-model table into ``--output-dir``.

Exit status: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

import numpy as np

from . import __version__, counterexamples, datagen
from .descent import LearnerState, StepError, StepSchedule, run_stream
from .equilibrium import (
    avg_gradient,
    bound_eval,
    default_delta,
    identity_constant_step,
    identity_decaying_step,
    nmr_estimate,
    regret,
    report_from_grads,
)
from .io import (
    METRIC_COLUMNS,
    SCHEMA_VERSION,
    IngestError,
    ensure_dir,
    index_battles,
    ingest_csv,
    write_battles_csv,
    write_csv,
    write_json,
    write_stream_csv,
)
from .losses import LossInstance
from .pipelines import (
    Stream,
    debias_classification,
    debias_regression,
    decorrelate_lasso_logistic,
    decorrelate_ridge,
    elo_run,
    multigroup_classification,
    multigroup_regression,
    quantile_ensemble,
    quantile_track,
)

COMMANDS = ("debias", "multigroup", "track-quantile", "ensemble", "elo", "diagnose", "counterexample", "simulate")
DEFAULT_ETA = 0.01
SEED_ENV = "GEQ_SEED"


class ConfigError(ValueError):
    """Bad flags or configuration values."""


# ---------------------------------------------------------------- parsing


def _float_list(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_source(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="CSV file to ingest")
    src.add_argument("--generate", help="generator spec as JSON text or a path to a JSON file")
    p.add_argument("--repeat", type=int, default=1, help="number of seeded repetitions (needs --generate)")
    p.add_argument("--parallel", action="store_true", help="run repetitions in worker processes")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--output-dir", default="gradeq_out")
    p.add_argument("--seed", type=int, default=None, help=f"generator seed (the {SEED_ENV} variable overrides it)")
    p.add_argument("--config", default=None, help="JSON file of flag values; command-line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradeq", description="Gradient-equilibrium diagnostics and corrections.")
    parser.add_argument("--version", action="version", version=f"gradeq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("debias", help="online bias correction of a prediction stream")
    _add_source(p)
    _add_common(p)
    p.add_argument("--kind", choices=["regression", "classification"], default="regression")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--b", type=float, default=None, help="bound on |y - f| (default: observed maximum)")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--theta1", type=float, default=0.0)

    p = sub.add_parser("multigroup", help="debias or decorrelate over group columns")
    _add_source(p)
    _add_common(p)
    p.add_argument("--kind", choices=["regression", "classification"], default="regression")
    p.add_argument("--regularizer", choices=["none", "ridge", "lasso"], default="none",
                   help="none: group indicators; ridge (regression) or lasso (classification): decorrelation")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--lam", default=None, help="penalty weight, a number or 1/T or 1/sqrt(T)")
    p.add_argument("--c", type=float, default=None, help="bound on feature norms (default: observed maximum)")
    p.add_argument("--disjoint", action="store_true", help="groups are disjoint; enables per-group bounds")

    p = sub.add_parser("track-quantile", help="online quantile tracking")
    _add_source(p)
    _add_common(p)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--theta1", type=float, default=0.0)

    p = sub.add_parser("ensemble", help="weighted ensemble of quantile trackers")
    _add_source(p)
    _add_common(p)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--nus", type=_float_list, default=[0.01, 0.05, 0.5])
    p.add_argument("--nu-ens", type=float, default=1.0)

    p = sub.add_parser("elo", help="online Elo scores from pairwise battles")
    _add_source(p)
    _add_common(p)
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--c", type=float, default=None, help="polynomial schedule eta_t = c t^-alpha (with --alpha)")
    p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("diagnose", help="gradient-equilibrium diagnostics of plain descent on a stream")
    _add_source(p)
    _add_common(p)
    p.add_argument("--loss", choices=["squared", "quantile", "absolute", "logistic"], default="squared")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--range-a", type=float, default=-1.0)
    p.add_argument("--range-b", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=1.0, help="shift radius for the no-move-regret estimate")
    p.add_argument("--grid-size", type=int, default=201)

    p = sub.add_parser("counterexample", help="simulate an analytic construction")
    _add_common(p)
    p.add_argument("--name", choices=list(counterexamples.NAMES), default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--y", type=_float_list, default=None, help="sequence for zero-regret-bias (default: seeded normals)")

    p = sub.add_parser("simulate", help="write a generated stream to CSV")
    _add_common(p)
    p.add_argument("--spec", default=None, help="generator spec as JSON text or a path")
    p.add_argument("--output", default=None, help="CSV path to write")
    return parser


def _load_json_arg(text: str, what: str):
    try:
        if os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                return json.load(fh)
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{what}: cannot read JSON ({exc})") from None


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise ConfigError(f"unknown command {command!r}")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse flags, fold in ``--config`` values and validate them."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_json_arg(args.config, "--config")
        if not isinstance(cfg, dict):
            raise ConfigError("--config must hold a JSON object")
        sp = _subparser(parser, args.command)
        dests = {a.dest for a in sp._actions} - {"help", "config"}
        cleaned = {}
        for k, v in cfg.items():
            key = k.replace("-", "_")
            if key not in dests:
                raise ConfigError(f"--config: unknown key {k!r} for {args.command}")
            cleaned[key] = v
        sp.set_defaults(**cleaned)
        args = parser.parse_args(argv)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            args.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    validate(args)
    return args


def validate(args: argparse.Namespace) -> None:
    """Check required and mutually dependent parameters before any work."""
    cmd = args.command
    if cmd in ("debias", "multigroup", "track-quantile", "ensemble", "elo", "diagnose"):
        if not (args.input or args.generate):
            raise ConfigError(f"{cmd} needs --input or --generate")
        if args.repeat < 1:
            raise ConfigError("--repeat must be >= 1")
        if args.repeat > 1 and not args.generate:
            raise ConfigError("--repeat needs --generate (an ingested file has no seed to vary)")
    eta = getattr(args, "eta", None)
    if cmd != "counterexample" and eta is not None and not (eta >= 0 and math.isfinite(eta)):
        raise ConfigError("--eta must be finite and nonnegative")
    if cmd in ("track-quantile", "ensemble", "diagnose") and not 0 <= args.tau <= 1:
        raise ConfigError("--tau must lie in [0, 1]")
    if cmd in ("debias", "multigroup") and not 0 < args.epsilon < 0.5:
        raise ConfigError("--epsilon must lie in (0, 1/2)")
    if cmd == "multigroup":
        if args.regularizer == "ridge" and args.kind != "regression":
            raise ConfigError("ridge decorrelation is for --kind regression")
        if args.regularizer == "lasso" and args.kind != "classification":
            raise ConfigError("lasso decorrelation is for --kind classification")
        if args.regularizer == "none" and args.lam is not None:
            raise ConfigError("--lam needs --regularizer ridge or lasso")
    if cmd == "ensemble":
        if any(not (v >= 0) for v in args.nus) or not args.nu_ens >= 0:
            raise ConfigError("learning rates must be nonnegative")
    if cmd in ("elo", "diagnose"):
        if (args.c is None) != (args.alpha is None):
            raise ConfigError("--c and --alpha go together")
        if args.alpha is not None and not (args.c > 0 and 0 <= args.alpha < 1):
            raise ConfigError("need c > 0 and alpha in [0, 1)")
    if cmd == "diagnose" and args.loss == "logistic" and not args.range_a < args.range_b:
        raise ConfigError("need --range-a < --range-b")
    if cmd == "counterexample":
        need = {
            None: ["name"],
            "nr-not-geq-abs": ["T"],
            "geq-not-nr-abs": ["T", "c"],
            "nr-not-geq-squared": ["a", "b", "n", "m", "reps"],
            "zero-regret-bias": [],
            "spiral": ["eta", "L", "T"],
        }[args.name]
        missing = [k for k in need if getattr(args, k) is None]
        if args.name == "zero-regret-bias" and args.y is None and args.T is None:
            missing.append("y or T")
        if missing:
            raise ConfigError(f"counterexample {args.name or ''} needs --{', --'.join(missing)}")
    if cmd == "simulate":
        if not (args.spec and args.output):
            raise ConfigError("simulate needs --spec and --output")


# ---------------------------------------------------------------- inputs


def load_spec(text: str, seed: Optional[int]) -> datagen.StreamSpec:
    d = _load_json_arg(text, "generator spec")
    if not isinstance(d, dict):
        raise ConfigError("generator spec must be a JSON object")
    try:
        spec = datagen.StreamSpec.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"generator spec: {exc}") from None
    if seed is not None:
        spec = datagen.StreamSpec(spec.kind, spec.length, seed, spec.b, spec.params)
    return spec


def named_battles(battles: np.ndarray):
    """Route generated battles through the same naming as an ingested file."""
    triples = [(f"m{int(a)}", f"m{int(b)}", f"m{int(b)}" if y == 1 else f"m{int(a)}") for a, b, y in battles]
    return index_battles(triples)


def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


def load_input(args, seed: Optional[int]):
    """Stream (or ``(battles, names)`` for elo) from the configured source."""
    disjoint = bool(getattr(args, "disjoint", False))
    if args.input:
        if args.command == "elo":
            return ingest_csv(args.input, "battles")
        return ingest_csv(args.input, "stream", warn=_warn, disjoint=disjoint)
    spec = load_spec(args.generate, seed)
    if args.command == "elo":
        if not spec.is_battles:
            raise ConfigError("elo needs a bradley-terry generator spec")
        return named_battles(datagen.generate_battles(spec))
    if spec.is_battles:
        raise ConfigError(f"{args.command} needs a stream spec, not bradley-terry")
    st = datagen.generate_stream(spec)
    return Stream(st.f, st.y, st.z, st.labels, disjoint=disjoint and st.z is not None, ids=st.ids)


# ---------------------------------------------------------------- outputs


def _metric_cells(rep, i: int):
    ir = None if rep.identity_residual is None else rep.identity_residual[i]
    bd = None if rep.bound is None else rep.bound[i]
    sat = None if rep.satisfied is None else bool(rep.satisfied[i])
    return [rep.avg_grad_norm[i], ir, bd, sat]


def _summary_core(rep) -> dict:
    return {
        "T": int(len(rep)),
        "final_avg_grad_norm": rep.final(),
        "bound_satisfaction_fraction": rep.satisfaction_fraction,
        "final_bound": None if rep.bound is None or not len(rep) else float(rep.bound[-1]),
        "max_identity_residual": None if rep.identity_residual is None or not len(rep)
        else float(np.nanmax(rep.identity_residual)) if np.any(np.isfinite(rep.identity_residual)) else None,
    }


def write_pipeline(res, outdir: str) -> dict:
    cols = res.columns() + METRIC_COLUMNS
    rep = res.report
    rows = (list(r) + _metric_cells(rep, i) for i, r in enumerate(res.rows()))
    write_csv(os.path.join(outdir, "metrics.csv"), cols, rows)
    summary = _summary_core(rep)
    summary["final_bias_norms"] = {"overall": abs(float(np.mean(res.adjusted - res.y))) if res.T else None}
    if res.group_reports:
        grows = []
        for lab, g in res.group_reports.items():
            summary["final_bias_norms"][f"group:{lab}"] = None if g.bias is None else abs(g.bias)
            grows.append([lab, g.count, g.bias,
                          None if g.bound_series is None or g.count == 0 else g.bound_series[-1],
                          g.all_satisfied, g.sublinear])
        write_csv(os.path.join(outdir, "groups.csv"),
                  ["group", "count", "bias", "bound", "satisfied", "sublinear"], grows)
    if "coverage" in res.extras and res.T:
        cov = float(np.asarray(res.extras["coverage"])[-1])
        summary["coverage"] = cov
        summary["coverage_gap"] = abs(cov - float(res.extras["tau"]))
    else:
        summary["coverage_gap"] = None
    for key in ("b", "delta", "epsilon", "lam", "c", "quantile_loss", "guarantee_valid"):
        if key in res.extras:
            summary[key] = res.extras[key]
    if "expert_coverage" in res.extras:
        tau = float(res.extras["tau"])
        summary["expert_coverage_gap"] = np.abs(np.asarray(res.extras["expert_coverage"]) - tau)
        summary["expert_quantile_loss"] = res.extras["expert_quantile_loss"]
        summary["final_weights"] = np.asarray(res.extras["weights"])[-1]
    return summary


# ---------------------------------------------------------------- commands


def cmd_debias(args, data, outdir):
    if args.kind == "regression":
        res = debias_regression(data, args.eta, b=args.b, delta=args.delta, theta1=args.theta1)
    else:
        data.check_classification()
        res = debias_classification(data, args.eta, epsilon=args.epsilon, theta1=args.theta1)
    return write_pipeline(res, outdir)


def _lam_arg(text):
    if text is None:
        return None
    try:
        return float(text)
    except (TypeError, ValueError):
        return str(text)


def cmd_multigroup(args, data, outdir):
    if data.z is None:
        raise ConfigError("multigroup needs group:<label> columns")
    lam = _lam_arg(args.lam)
    if args.regularizer == "ridge":
        res = decorrelate_ridge(data, args.eta, lam="1/T" if lam is None else lam, b=args.b, c=args.c)
    elif args.regularizer == "lasso":
        res = decorrelate_lasso_logistic(data, args.eta, lam="1/sqrt(T)" if lam is None else lam, c=args.c)
    elif args.kind == "regression":
        res = multigroup_regression(data, args.eta, b=args.b, delta=args.delta)
    else:
        res = multigroup_classification(data, args.eta, epsilon=args.epsilon)
    return write_pipeline(res, outdir)


def cmd_track_quantile(args, data, outdir):
    res = quantile_track(data, args.tau, args.eta, b=args.b, theta1=args.theta1)
    return write_pipeline(res, outdir)


def cmd_ensemble(args, data, outdir):
    res = quantile_ensemble(data, args.tau, args.nus, args.nu_ens)
    return write_pipeline(res, outdir)


def cmd_elo(args, data, outdir):
    battles, names = data
    sched = StepSchedule.polynomial(args.c, args.alpha) if args.alpha is not None else None
    res = elo_run(battles, len(names), args.eta, lam=args.lam, schedule=sched, names=list(names))
    rep = res.report
    rows = ([i + 1, names[int(res.battles[i, 0])], names[int(res.battles[i, 1])], int(battles[i, 2]), res.probs[i]]
            + _metric_cells(rep, i) for i in range(len(res.probs)))
    write_csv(os.path.join(outdir, "metrics.csv"), ["t", "model_a", "model_b", "y", "p"] + METRIC_COLUMNS, rows)
    write_csv(os.path.join(outdir, "elo.csv"), ["model", "score", "count", "signed_bias", "raw_bias"], res.table.rows())
    summary = _summary_core(rep)
    sb = res.table.signed_bias
    summary["final_bias_norms"] = {n: (None if res.table.counts[m] == 0 else abs(float(sb[m])))
                                   for m, n in enumerate(names)}
    finite = sb[np.isfinite(sb)]
    summary["max_abs_signed_bias"] = float(np.max(np.abs(finite))) if finite.size else None
    summary["coverage_gap"] = None
    summary["scores"] = dict(zip(names, res.table.scores.tolist()))
    return summary


def _diagnose_losses(args, data: Stream):
    kw = {}
    if args.loss == "quantile":
        kw["tau"] = args.tau
    if args.loss == "logistic":
        kw.update(a=args.range_a, b=args.range_b)
    out = []
    for t, (f, y) in enumerate(zip(data.f, data.y), start=1):
        try:
            out.append(LossInstance(args.loss, y=float(y), f=float(f), **kw))
        except ValueError as exc:
            raise IngestError(f"record {t}: {exc}") from None
    return out


def _diagnose_bound(args, traj, resid: np.ndarray):
    if traj.T == 0:
        return None
    if not traj.schedule.is_constant:
        return bound_eval(traj, "dec")
    eta = traj.schedule.eta
    if not eta > 0:
        return None
    bmax = np.maximum.accumulate(np.abs(resid))
    if args.loss == "squared":
        if eta >= 2:
            _warn(f"eta={eta} >= 2: the squared-loss bound does not apply")
            return None
        return bound_eval(traj, "squared_avg_grad", {"b": bmax, "delta": default_delta(eta)})
    if args.loss == "quantile":
        return bound_eval(traj, "quantile_avg_grad", {"b": bmax})
    if args.loss == "absolute":
        return bound_eval(traj, "zero_curv_1d", {"L": 1.0, "h": bmax})
    eps = np.minimum.accumulate(np.minimum(resid - args.range_a, args.range_b - resid))
    return bound_eval(traj, "logistic_band_avg_grad", {"range_a": args.range_a, "range_b": args.range_b, "epsilon": eps})


def cmd_diagnose(args, data, outdir):
    if data.z is not None:
        _warn("group columns are ignored by diagnose")
    losses = _diagnose_losses(args, data)
    sched = StepSchedule.polynomial(args.c, args.alpha) if args.alpha is not None else StepSchedule.constant(args.eta)
    state = LearnerState(np.zeros(1), sched)
    traj = run_stream(losses, state)
    rep = avg_gradient(traj)
    if traj.T:
        rep.identity_residual = identity_constant_step(traj) if sched.is_constant and sched.eta > 0 \
            else identity_decaying_step(traj) if not sched.is_constant else None
        bnd = _diagnose_bound(args, traj, data.y - data.f)
        if bnd is not None:
            rep.attach_bound(bnd)
    cols = ["t", "f", "y", "theta", "grad", "loss"] + METRIC_COLUMNS
    rows = ([i + 1, data.f[i], data.y[i], traj.thetas[i, 0], traj.grads[i, 0], traj.losses[i]] + _metric_cells(rep, i)
            for i in range(traj.T))
    write_csv(os.path.join(outdir, "metrics.csv"), cols, rows)
    summary = _summary_core(rep)
    summary["loss"] = args.loss
    summary["final_bias_norms"] = {"avg_gradient": rep.final()}
    summary["coverage_gap"] = None
    if args.loss == "quantile" and traj.T:
        cover = np.mean(data.y <= data.f + traj.thetas[:-1, 0])
        summary["coverage_gap"] = abs(float(cover) - args.tau)
    if traj.T:
        rr = regret(traj, losses, allow_unconverged=True)
        summary["avg_regret"] = rr.avg_regret
        summary["oracle_theta"] = rr.oracle_theta
        summary["nmr_estimate"] = nmr_estimate(traj, losses, args.radius, args.grid_size)
    return summary


def cmd_counterexample(args, outdir, seed):
    params = {k: getattr(args, k) for k in ("T", "a", "b", "c", "n", "m", "reps", "eta", "L") if getattr(args, k) is not None}
    if args.name == "zero-regret-bias":
        if args.y is not None:
            params["y"] = args.y
        else:
            params["y"] = datagen.rng_for(0 if seed is None else seed).standard_normal(args.T)
    con = counterexamples.build(args.name, **params)
    T, d = con.T, con.thetas.shape[1]
    rep = report_from_grads(con.grads)
    traj = con.trajectory()
    if args.name == "spiral":
        rep.identity_residual = identity_constant_step(traj)
        rep.attach_bound(bound_eval(traj, "gd_avg_grad"))
    cols = ["t"] + [f"theta_{k}" for k in range(d)] + [f"grad_{k}" for k in range(d)] + METRIC_COLUMNS
    rows = ([i + 1] + list(con.thetas[i]) + list(con.grads[i]) + _metric_cells(rep, i) for i in range(T))
    write_csv(os.path.join(outdir, "metrics.csv"), cols, rows)
    summary = _summary_core(rep)
    summary["name"] = args.name
    summary["analytic"] = con.analytic
    summary["avg_gradient"] = float(np.linalg.norm(con.avg_grad()))
    summary["final_bias_norms"] = {"avg_gradient": summary["avg_gradient"]}
    summary["coverage_gap"] = None
    if args.name == "spiral":
        summary["final_sq_norm"] = float(con.thetas[-1] @ con.thetas[-1])
    else:
        summary["measured"] = con.measured()
    return summary


def cmd_simulate(args, seed):
    spec = load_spec(args.spec, seed)
    parent = os.path.dirname(os.path.abspath(args.output))
    ensure_dir(parent)
    if spec.is_battles:
        write_battles_csv(datagen.generate_battles(spec), args.output)
    else:
        write_stream_csv(datagen.generate_stream(spec), args.output)
    return {"spec": spec.to_dict(), "output": args.output, "T": spec.length}


STREAM_COMMANDS = {
    "debias": cmd_debias,
    "multigroup": cmd_multigroup,
    "track-quantile": cmd_track_quantile,
    "ensemble": cmd_ensemble,
    "elo": cmd_elo,
    "diagnose": cmd_diagnose,
}


# ---------------------------------------------------------------- driver


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def run_once(args: argparse.Namespace, seed: Optional[int], outdir: str) -> dict:
    """One sequential run; writes outputs into ``outdir`` and returns the summary."""
    start = time.perf_counter()
    ensure_dir(outdir)
    caught: List[str] = []
    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        if args.command == "counterexample":
            summary = cmd_counterexample(args, outdir, seed)
        elif args.command == "simulate":
            summary = cmd_simulate(args, seed)
        else:
            data = load_input(args, seed)
            summary = STREAM_COMMANDS[args.command](args, data, outdir)
        caught = [str(w.message) for w in wlist]
    for msg in caught:
        _warn(msg)
    summary["command"] = args.command
    summary["warnings"] = caught
    summary["runtime_seconds"] = time.perf_counter() - start
    summary["provenance"] = {
        "config": _config_echo(args),
        "seed": seed,
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "input": args.input if getattr(args, "input", None) else "generated",
    }
    write_json(os.path.join(outdir, "summary.json"), summary)
    return summary


def _run_child(args, seed, outdir):
    try:
        run_once(args, seed, outdir)
        return 0, ""
    except StepError as exc:
        return 3, str(exc)
    except (ConfigError, IngestError, ValueError, KeyError) as exc:
        return 2, str(exc)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        return 3, f"{type(exc).__name__}: {exc}"


def _base_seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    if getattr(args, "generate", None):
        return load_spec(args.generate, None).seed
    return None


def execute(args: argparse.Namespace) -> int:
    seed = _base_seed(args)
    repeat = getattr(args, "repeat", 1)
    if repeat == 1:
        code, msg = _run_child(args, seed, args.output_dir)
        if code:
            print(f"error: {msg}", file=sys.stderr)
        return code
    run_seeds = datagen.seeds(0 if seed is None else seed, repeat)
    dirs = [os.path.join(args.output_dir, f"run_{i:03d}") for i in range(repeat)]
    if args.parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_child, [args] * repeat, run_seeds, dirs))
    else:
        results = [_run_child(args, s, d) for s, d in zip(run_seeds, dirs)]
    for i, (code, msg) in enumerate(results):
        if code:
            print(f"error: run {i}: {msg}", file=sys.stderr)
    ensure_dir(args.output_dir)
    write_json(os.path.join(args.output_dir, "runs.json"), {
        "runs": [{"dir": d, "seed": s, "exit": c} for d, s, (c, _) in zip(dirs, run_seeds, results)],
        "version": __version__,
    })
    return max(c for c, _ in results)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return execute(args)


if __name__ == "__main__":
    sys.exit(main())
