"""Command-line front end: ``pacbayes {bound,posterior,train,verify,report}``.

A run is described by a JSON config file::

    {"seed": 7, "out": "results/occam", "jobs": 4,
     "params": {"kind": "occam", "world": "world.json", "n": 50, "delta": 0.05}}

Flags override the file (``--seed``, ``--out``, ``--jobs`` at the top level;
``--delta``, ``--lambda``, ``--alpha``, ``--trials`` inside ``params``).
Relative paths in ``params`` are resolved against the config file's
directory. Every output directory gets a ``manifest.json`` whose hash covers
the parameters, seed and package version but not the parallelism degree,
which never changes results.

Exit codes: 0 success, 1 a certified claim failed (or training diverged),
2 usage/config error. Errors are printed to stderr as one JSON object and
no output files are written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    CSV_COLUMNS,
    KINDS,
    BoundReport,
    bernstein_bound,
    bernstein_union_bound,
    catoni_expected_bound,
    catoni_hc_bound,
    dropout_bound,
    l2_bound,
    local_hc_bound,
    occam_bound,
    pac_bayes_bound,
    pac_bayes_grid,
    train_var_bound,
    train_var_prior_bound,
    zero_variance_bound,
)
from .datasets import dataset_from_dict
from .hypotheses import SampleSet, empirical_loss, empirical_variance, world_from_dict
from .persist import (
    dumps,
    read_json,
    write_bound_report,
    write_csv,
    write_json,
    write_manifest,
    write_trace,
    write_validity,
)
from .posteriors import (
    DropoutPosterior,
    GaussianShiftPosterior,
    dropout_kl,
    gaussian_kl,
    gibbs_weights,
    kl_discrete,
    posterior_to_dict,
    select_lambda,
)
from .rng import make_rng, stream_id, substream
from .simulation import (
    VALIDITY_KINDS,
    EnumerationBudgetExceeded,
    ExperimentParams,
    GibbsAlgorithm,
    ValidityReport,
    estimate_mean_posterior,
    outlier_world,
    random_world,
    run_validity_experiment,
)
from .training import TrainConfig, TrainingDiverged, make_posterior, sgd_minimize_bound

__all__ = ["main", "build_parser", "ConfigError"]

COMMANDS = ("bound", "posterior", "train", "verify", "report")
_PATH_KEYS = ("world", "dataset", "results")


class ConfigError(ValueError):
    """Invalid command line, config file or parameters (exit code 2)."""

    code = "config_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pacbayes", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "bound": "evaluate a generalization bound",
        "posterior": "build a posterior and write it with its bound",
        "train": "minimize the Gaussian or dropout bound by SGD",
        "verify": "Monte-Carlo validity experiment on a finite world",
        "report": "summarize the JSON reports in a results directory",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=_u64, help="run seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
        p.add_argument("--delta", type=float, help="confidence parameter")
        p.add_argument("--lambda", dest="lam", type=float, help="lambda")
        p.add_argument("--alpha", type=float, help="dropout rate")
        p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        if name == "report":
            p.add_argument("results", nargs="?", type=Path, help="results directory")
    return parser


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


# -- configuration ----------------------------------------------------------------


def _load_config(args) -> dict:
    cfg: dict = {}
    base = Path.cwd()
    if args.config is not None:
        try:
            cfg = read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        base = args.config.resolve().parent
    if cfg.get("command", args.command) != args.command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
    params = dict(cfg.get("params", {}))
    for key in _PATH_KEYS:
        if isinstance(params.get(key), str):
            path = Path(params[key])
            params[key] = str(path if path.is_absolute() else base / path)
    for flag, key in (("delta", "delta"), ("lam", "lambda"), ("alpha", "alpha"),
                      ("trials", "trials")):
        if getattr(args, flag) is not None:
            params[key] = getattr(args, flag)
    if getattr(args, "results", None) is not None:
        params["results"] = str(args.results)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out = args.out if args.out is not None else cfg.get("out")
    if out is not None and args.out is None and not Path(out).is_absolute():
        out = base / out
    jobs = args.jobs if args.jobs is not None else cfg.get("jobs", os.cpu_count() or 1)
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("jobs must be a positive integer")
    return {"command": args.command, "params": params, "seed": seed,
            "out": None if out is None else Path(out), "jobs": jobs}


def _need(params, key, kind=float):
    if key not in params or params[key] is None:
        raise ConfigError(f"missing parameter {key!r}")
    try:
        return kind(params[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {params[key]!r}") from exc


def _int(params, key):
    v = _need(params, key, float)
    if v != int(v):
        raise ConfigError(f"{key!r} must be an integer")
    return int(v)


def _need_seed(run):
    if run["seed"] is None:
        raise ConfigError(f"{run['command']} draws random numbers and needs a seed")
    return run["seed"]


def _need_out(run) -> Path:
    if run["out"] is None:
        raise ConfigError("no output directory (use --out or 'out' in the config)")
    return run["out"]


def _hash_config(run) -> dict:
    """The part of a run that determines its results."""
    return {"command": run["command"], "params": run["params"], "seed": run["seed"]}


# -- world and sample -------------------------------------------------------------------


def _load_world(params):
    if "world" in params:
        try:
            data = read_json(params["world"])
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read world {params['world']}: {exc}") from exc
        world, space, loss = world_from_dict(data)
        return world, space, loss, hashlib.sha256(dumps(data).encode()).hexdigest()[:16]
    for key, builder in (("random_world", random_world), ("outlier_world", outlier_world)):
        if key in params:
            spec = dict(params[key])
            world, space, loss = builder(**spec)
            return world, space, loss, f"{key}:{json.dumps(spec, sort_keys=True)}"
    raise ConfigError("missing 'world' (or 'random_world' / 'outlier_world')")


def _sample(params, world, run):
    """The sample given in params, or one of ``n`` draws from the seed's "sample" stream."""
    if "sample" in params:
        ids = {sid: i for i, sid in enumerate(world.ids)}
        try:
            idx = [s if isinstance(s, int) else ids[s] for s in params["sample"]]
        except KeyError as exc:
            raise ConfigError(f"unknown situation id {exc}") from exc
        if any(not 0 <= i < len(world) for i in idx):
            raise ConfigError("sample index out of range")
        return SampleSet(tuple(idx)), None
    rng = make_rng(_need_seed(run), "sample")
    return world.draw(_int(params, "n"), rng), stream_id(rng)


# -- commands --------------------------------------------------------------------------


def _direct_bound(kind, p) -> BoundReport:
    f = lambda k: _need(p, k)  # noqa: E731
    lm = float(p.get("l_max", 1.0))
    if kind == "occam":
        return occam_bound(f("l_hat"), f("prior_nats"), _int(p, "n"), f("delta"), lm)
    if kind == "pac_bayes":
        return pac_bayes_bound(f("l_hat_q"), f("kl_nats"), _int(p, "n"), f("delta"), lm, f("lambda"))
    if kind == "pac_bayes_grid":
        return pac_bayes_grid(f("l_hat_q"), f("kl_nats"), _int(p, "n"), f("delta"), lm,
                              _need(p, "grid", list))
    if kind in ("l2", "dropout"):
        theta = np.asarray(_need(p, "theta", list), dtype=float)
        if kind == "l2":
            return l2_bound(GaussianShiftPosterior(theta), f("l_hat_q"), _int(p, "n"),
                            f("delta"), lm, f("lambda"))
        return dropout_bound(DropoutPosterior(f("alpha"), theta), f("l_hat_q"), _int(p, "n"),
                             f("delta"), lm, f("lambda"))
    if kind == "train_var":
        return train_var_bound(f("e_l_hat"), f("e_kl_to_mean"), _int(p, "n"), lm, f("lambda"))
    if kind == "train_var_prior":
        return train_var_prior_bound(f("e_l_hat"), f("e_kl_to_prior"), _int(p, "n"), lm,
                                     f("lambda"))
    if kind == "local_hc":
        return local_hc_bound(f("l_hat_q"), f("kl_to_mean_est"), _int(p, "n"), f("delta"), lm,
                              f("lambda"))
    if kind == "catoni_expected":
        return catoni_expected_bound(f("e_l_hat"), f("lambda"),
                                     _int(p, "n") if "n" in p else None, lm)
    if kind == "catoni_hc":
        return catoni_hc_bound(f("l_hat_q"), _int(p, "n"), f("delta"), lm, f("lambda"))
    if kind == "bernstein":
        return bernstein_bound(f("mu_hat"), f("sigma2_hat"), _int(p, "n"), f("delta"), lm)
    if kind == "bernstein_union":
        return bernstein_union_bound(f("mu_hat"), f("sigma2_hat"), f("prior_nats"),
                                     _int(p, "n"), f("delta"), lm)
    if kind == "zero_variance":
        return zero_variance_bound(f("l_hat"), f("prior_nats"), _int(p, "n"), f("delta"), lm)
    raise AssertionError(kind)


_WORLD_RULE_KINDS = ("occam", "bernstein", "bernstein_union", "zero_variance")
_WORLD_GIBBS_KINDS = ("pac_bayes", "pac_bayes_grid", "catoni_hc")


def _world_bound(kind, p, run) -> BoundReport:
    world, space, loss, _ = _load_world(p)
    sample, _ = _sample(p, world, run)
    delta = _need(p, "delta")
    if kind in _WORLD_RULE_KINDS:
        h = _int(p, "hypothesis") if "hypothesis" in p else 0
        if not 0 <= h < len(space):
            raise ConfigError("hypothesis index out of range")
        l_hat = empirical_loss(loss, h, sample)
        nats = float(space.prior_nats[h])
        if kind == "occam":
            return occam_bound(l_hat, nats, sample.n, delta, loss.l_max)
        var = empirical_variance(loss, h, sample)
        if kind == "bernstein":
            return bernstein_bound(l_hat, var, sample.n, delta, loss.l_max)
        if kind == "bernstein_union":
            return bernstein_union_bound(l_hat, var, nats, sample.n, delta, loss.l_max)
        if var != 0:
            raise ConfigError(f"rule {h} has nonzero empirical variance on this sample")
        return zero_variance_bound(l_hat, nats, sample.n, delta, loss.l_max)
    if kind == "pac_bayes_grid":
        return select_lambda(_need(p, "grid", list), sample, space, loss, delta)[2]
    q = gibbs_weights(space, sample, loss, _need(p, "lambda"))
    if kind == "pac_bayes":
        return pac_bayes_bound(q.empirical_loss(), kl_discrete(q.weights, space.prior),
                               sample.n, delta, loss.l_max, q.lam)
    return catoni_hc_bound(q.empirical_loss(), sample.n, delta, loss.l_max, q.lam)


def _summary_bound(r: BoundReport) -> str:
    lam = "" if r.lam is None else f" lambda={r.lam!r}"
    flag = " (vacuous)" if r.vacuous else ""
    return (f"{r.kind}: {r.value!r}{flag}  empirical={r.empirical_term!r} "
            f"complexity_nats={r.complexity_nats!r}{lam} delta={r.delta!r} n={r.n} "
            f"l_max={r.l_max!r}\n")


def _finish(out: Path, run, files_writer, seeds) -> int:
    out.mkdir(parents=True, exist_ok=True)
    files = files_writer(out)
    write_manifest(out, _hash_config(run), seeds, files)
    return 0


def cmd_bound(run) -> int:
    p = run["params"]
    kind = _need(p, "kind", str)
    if kind not in KINDS:
        raise ConfigError(f"unknown bound kind {kind!r}; expected one of {', '.join(KINDS)}")
    if "world" in p or "random_world" in p:
        if kind not in _WORLD_RULE_KINDS + _WORLD_GIBBS_KINDS:
            raise ConfigError(f"kind {kind!r} cannot be computed from a world file")
        report = _world_bound(kind, p, run)
    else:
        report = _direct_bound(kind, p)
    out = _need_out(run)

    def write(d):
        files = write_bound_report(d, report)
        (d / "summary.txt").write_text(_summary_bound(report), encoding="utf-8")
        return files + [d / "summary.txt"]

    sys.stdout.write(_summary_bound(report))
    return _finish(out, run, write, {"run": run["seed"]})


def cmd_posterior(run) -> int:
    p = run["params"]
    out = _need_out(run)
    if "theta" in p:
        theta = np.asarray(_need(p, "theta", list), dtype=float)
        post = make_posterior(theta, p.get("alpha"))
        kl = dropout_kl(post) if isinstance(post, DropoutPosterior) else gaussian_kl(post)
        payload = posterior_to_dict(post, l_max=float(p.get("l_max", 1.0)))
        payload["kl_nats"] = kl
        summary = f"{payload['kind']} posterior: d={post.d} kl_nats={kl!r}\n"
        report = None
        seeds = {"run": run["seed"]}
    else:
        world, space, loss, world_id = _load_world(p)
        sample, sample_seed = _sample(p, world, run)
        delta = _need(p, "delta")
        if "grid" in p:
            _, q, report = select_lambda(_need(p, "grid", list), sample, space, loss, delta)
        else:
            q = gibbs_weights(space, sample, loss, _need(p, "lambda"))
            report = pac_bayes_bound(q.empirical_loss(), kl_discrete(q.weights, space.prior),
                                     sample.n, delta, loss.l_max, q.lam)
        payload = posterior_to_dict(q, world_id=world_id, sample_seed=sample_seed,
                                    l_max=loss.l_max)
        summary = f"gibbs posterior: lambda={q.lam!r} n={q.n}\n" + _summary_bound(report)
        seeds = {"run": run["seed"], "sample": sample_seed}

    def write(d):
        files = [write_json(d / "posterior.json", payload)]
        if report is not None:
            files += write_bound_report(d, report)
        (d / "summary.txt").write_text(summary, encoding="utf-8")
        return files + [d / "summary.txt"]

    sys.stdout.write(summary)
    return _finish(out, run, write, seeds)


_TRAIN_KEYS = {"lambda": "lam", "delta": "delta", "alpha": "alpha", "eta0": "eta0",
               "kappa": "kappa", "minibatch": "minibatch", "mc_per_step": "mc_per_step",
               "steps": "steps", "checkpoint_every": "checkpoint_every",
               "checkpoint_mc": "checkpoint_mc", "final_mc": "final_mc", "theta0": "theta0"}


def cmd_train(run) -> int:
    p = run["params"]
    seed = _need_seed(run)
    out = _need_out(run)
    ds = p.get("dataset")
    if isinstance(ds, str):
        try:
            ds = read_json(ds)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read dataset: {exc}") from exc
    if not isinstance(ds, dict):
        raise ConfigError("missing 'dataset' (path or inline object)")
    try:
        data, model = dataset_from_dict(ds)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed dataset: {exc!r}") from exc
    if data.is_binary:
        raise ConfigError("training needs a multiclass (differentiable) model")
    kwargs = {v: p[k] for k, v in _TRAIN_KEYS.items() if p.get(k) is not None}
    if "theta0" in kwargs:
        kwargs["theta0"] = tuple(kwargs["theta0"])
    try:
        config = TrainConfig(seed=seed, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        theta, trace, report = sgd_minimize_bound(data, model, config)
    except TrainingDiverged as exc:
        err = exc.to_dict()
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", err)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1
    post = make_posterior(theta, config.alpha)
    payload = posterior_to_dict(post, seed=seed, n=data.n, l_max=model.l_max)
    summary = _summary_bound(report) + (
        f"theta={[float(t) for t in theta]!r} mc_std_error={report.extra['mc_std_error']!r}\n")

    def write(d):
        files = [write_json(d / "theta.json", payload), write_trace(d / "trace.csv", trace)]
        files += write_bound_report(d, report)
        (d / "summary.txt").write_text(summary, encoding="utf-8")
        return files + [d / "summary.txt"]

    sys.stdout.write(summary)
    _finish(out, run, write, {"run": seed, "streams": ["sgd", "checkpoint", "final"]})
    return 0


def cmd_verify(run) -> int:
    p = run["params"]
    seed = _need_seed(run)
    out = _need_out(run)
    kind = _need(p, "kind", str)
    if kind not in VALIDITY_KINDS:
        raise ConfigError(f"unknown validity kind {kind!r}; expected one of "
                          f"{', '.join(VALIDITY_KINDS)}")
    world, space, loss, world_id = _load_world(p)
    trials = _int(p, "trials") if "trials" in p else 1000
    budget = _int(p, "budget") if "budget" in p else 10**6
    rng = make_rng(seed, "verify", kind)
    lam = float(p.get("lambda", 1.0))
    mean_posterior = None
    if kind == "local_hc":
        if len(world) * len(space) > budget:
            raise EnumerationBudgetExceeded("world exceeds the enumeration budget")
        m = _int(p, "mean_resamples") if "mean_resamples" in p else 500
        mean_posterior = tuple(estimate_mean_posterior(
            GibbsAlgorithm(space, loss, lam), world, _int(p, "n"), m,
            substream(rng, "mean-posterior")).tolist())
    try:
        params = ExperimentParams(n=_int(p, "n"), delta=_need(p, "delta"), lam=lam,
                                  grid=tuple(p.get("grid", (1.0, 2.0, 4.0))),
                                  lambda_cap=float(p.get("lambda_cap", 1e6)),
                                  hypothesis=int(p.get("hypothesis", 0)),
                                  mean_posterior=mean_posterior)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    report, records = run_validity_experiment(kind, world, space, loss, params, trials, rng,
                                              jobs=run["jobs"], budget=budget,
                                              return_trials=True)
    summary = _summary_validity(report) + f"world={world_id}\n"

    def write(d):
        files = write_validity(d, report, records)
        (d / "summary.txt").write_text(summary, encoding="utf-8")
        return files + [d / "summary.txt"]

    sys.stdout.write(summary)
    _finish(out, run, write, {"run": seed, "streams": [f"verify/{kind}"]})
    return 0 if (report.passed or not report.certified) else 1


def _summary_validity(r: ValidityReport) -> str:
    status = "PASS" if r.passed else "FAIL"
    tag = "" if r.certified else " (estimated prior; not a certificate)"
    return (f"{r.kind}: {status}{tag}  violations={r.violation_count}/{r.m} "
            f"rate={r.violation_rate!r} upper_limit@{r.confidence!r}={r.upper_limit!r} "
            f"delta={r.delta!r} n={r.n}\n")


def cmd_report(run) -> int:
    p = run["params"]
    results = Path(_need(p, "results", str))
    if not results.is_dir():
        raise ConfigError(f"results directory {results} does not exist")
    lines, rows, failed = [], [], False
    for path in sorted(results.rglob("*.json")):
        if path.name in ("manifest.json",):
            continue
        d = read_json(path)
        rel = path.relative_to(results).as_posix()
        if isinstance(d, dict) and d.get("kind") in KINDS and "value" in d:
            r = BoundReport.from_dict(d)
            lines.append(f"{rel}: " + _summary_bound(r))
            rows.append([rel] + r.csv_row())
        elif isinstance(d, dict) and "violation_count" in d:
            r = ValidityReport.from_dict(d)
            failed |= r.certified and not r.passed
            lines.append(f"{rel}: " + _summary_validity(r))
    text = "".join(lines) if lines else "no reports found\n"
    sys.stdout.write(text)
    if run["out"] is not None:
        def write(d):
            (d / "summary.txt").write_text(text, encoding="utf-8")
            return [d / "summary.txt", write_csv(d / "bounds.csv", ("file",) + CSV_COLUMNS, rows)]

        _finish(run["out"], run, write, {"run": run["seed"]})
    return 1 if failed else 0


_HANDLERS = {"bound": cmd_bound, "posterior": cmd_posterior, "train": cmd_train,
             "verify": cmd_verify, "report": cmd_report}


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}, sort_keys=True) + "\n")
    return 2


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = _load_config(args)
        return _HANDLERS[run["command"]](run)
    except EnumerationBudgetExceeded as exc:
        return _fail("budget_exceeded", str(exc))
    except (ConfigError, ValueError) as exc:
        return _fail("config_error", str(exc))
