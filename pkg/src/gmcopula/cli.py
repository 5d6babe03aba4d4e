"""Command-line interface.

Subcommands: fit, impute, predict, simulate (study1|study2) and evaluate.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataFormatError, SchemaError, expand_rpl, load_dataset, write_dataset, write_schema
from .imputation import multiple_impute, posterior_predictive, write_completed
from .margins import DegenerateMarginError
from .model import Hyperparams, default_hyperparams
from .sampler import (ChainConfig, ConfigError, DegenerateColumnError, NumericalError, dump_draw,
                      read_draws, run_chain)

log = logging.getLogger("gmcopula")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
HYPER_KEYS = tuple(f.name for f in fields(Hyperparams))
CHAIN_KEYS = ("n_iter", "burn_in", "thin", "seed", "labels")
RUN_DEFAULTS = {"n_iter": 2000, "burn_in": 1000, "thin": 50, "seed": 0, "labels": "conditional",
                "margin_kind": "margin_adjust"}
MARGIN_KINDS = ("margin_adjust", "ecdf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(title: str, obj: dict) -> None:
    print(f"# {title}")
    print(json.dumps(obj, indent=2, sort_keys=True))
    sys.stdout.flush()


# ----------------------------------------------------------------------------
# config resolution


def resolve_run_config(config_path: str | None, overrides: dict, p_star: int) -> tuple[dict, Hyperparams, ChainConfig]:
    """Merge defaults, the JSON config file and command-line flags (flags win)."""
    cfg = dict(RUN_DEFAULTS)
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(HYPER_KEYS) - set(RUN_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["margin_kind"] not in MARGIN_KINDS:
        raise UsageError(f"margin_kind must be one of {MARGIN_KINDS}")
    hyper_kw = {k: cfg[k] for k in HYPER_KEYS if k in cfg}
    try:
        hyper = default_hyperparams(p_star, **hyper_kw)
        hyper.check_dims(p_star)
        chain = ChainConfig(int(cfg["n_iter"]), int(cfg["burn_in"]), int(cfg["thin"]), int(cfg["seed"]),
                            hyper, cfg["labels"])
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    resolved = {**{k: cfg[k] for k in CHAIN_KEYS}, "margin_kind": cfg["margin_kind"], "hyper": hyper.to_json()}
    return resolved, hyper, chain


# ----------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    data = load_dataset(args.data, args.schema)
    view = expand_rpl(data)
    overrides = {"n_iter": args.n_iter, "burn_in": args.burn_in, "thin": args.thin, "seed": args.seed,
                 "labels": args.labels, "margin_kind": args.margin_kind,
                 "H": args.H, "k": args.k, "delta": args.delta}
    resolved, hyper, chain = resolve_run_config(args.config, overrides, view.p_star)
    _emit("resolved config", resolved)
    print(f"# seed {chain.seed}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out / "data.csv")
    write_schema(data.schema, out / "schema.json")
    timings: dict = {}
    t0 = time.perf_counter()
    with open(out / "draws.jsonl", "w") as fh:
        run_chain(data, view, chain, timings=timings, on_draw=lambda d: fh.write(dump_draw(d) + "\n"))
    manifest = {
        "version": __version__, "command": "fit", "config": resolved, "seed": chain.seed,
        "schema_hash": data.schema_hash(), "n": data.n, "p": data.p, "p_star": view.p_star,
        "retained_iterations": chain.retained_iterations(),
        "wall_clock_seconds": {"total": time.perf_counter() - t0, **timings},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(manifest['retained_iterations'])} draws to {out / 'draws.jsonl'}")
    return EXIT_OK


def _load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    manifest_path = fit_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{fit_dir} has no manifest.json; run `fit` first")
    manifest = json.loads(manifest_path.read_text())
    data = load_dataset(fit_dir / "data.csv", fit_dir / "schema.json")
    if data.schema_hash() != manifest["schema_hash"]:
        raise SchemaError("schema in fit directory does not match its manifest")
    return manifest, data, expand_rpl(data), read_draws(fit_dir / "draws.jsonl")


def cmd_impute(args) -> int:
    manifest, data, view, draws = _load_fit(args.fit_dir)
    kind = args.margin_kind or manifest["config"].get("margin_kind", "margin_adjust")
    m = args.m or len(draws)
    if m > len(draws):
        raise UsageError(f"--m {m} exceeds the {len(draws)} retained draws")
    resolved = {"fit_dir": str(args.fit_dir), "m": m, "margin_kind": kind, "seed": manifest["seed"]}
    _emit("resolved config", resolved)
    print(f"# seed {manifest['seed']}")
    # evenly spaced draws across the retained set
    idx = np.linspace(0, len(draws) - 1, m).round().astype(int)
    completed = multiple_impute([draws[i] for i in idx], data, view, kind)
    paths = write_completed(completed, args.out)
    (Path(args.out) / "manifest.json").write_text(json.dumps(
        {"command": "impute", "config": resolved, "draw_iterations": [draws[i].iteration for i in idx],
         "files": [p.name for p in paths]}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(paths)} completed datasets to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    manifest, data, view, draws = _load_fit(args.fit_dir)
    kind = args.margin_kind or manifest["config"].get("margin_kind", "margin_adjust")
    n_new = args.n or data.n
    resolved = {"fit_dir": str(args.fit_dir), "n": n_new, "reps": args.reps or len(draws),
                "margin_kind": kind, "seed": args.seed}
    _emit("resolved config", resolved)
    print(f"# seed {args.seed}")
    sets = posterior_predictive(draws, n_new, data, view, reps=resolved["reps"],
                                rng=np.random.default_rng(args.seed), kind=kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r, d in enumerate(sets, start=1):
        write_dataset(d, out / f"predictive_{r:04d}.csv")
    (out / "manifest.json").write_text(json.dumps({"command": "predict", "config": resolved},
                                                  indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(sets)} predictive datasets to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import simbench as sb

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.design == "study1":
        try:
            cfg = sb.Study1Config(args.n, args.beta, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        _emit("resolved config", {"design": "study1", "n": cfg.n, "beta": cfg.beta, "seed": cfg.seed})
        print(f"# seed {cfg.seed}")
        full, masked = sb.gen_study1(cfg)
        pairs = [(out, full, masked)]
    else:
        try:
            cfg2 = sb.Study2Config(snr=args.snr, replicates=args.replicates, seed=args.seed,
                                   protected_rows=args.protected_rows, base_csv=args.base)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        _emit("resolved config", {"design": "study2", "snr": cfg2.snr, "replicates": cfg2.replicates,
                                  "protected_rows": cfg2.protected_rows, "seed": cfg2.seed,
                                  "base": cfg2.base_csv or "synthetic"})
        print(f"# seed {cfg2.seed}")
        reps = sb.gen_study2(cfg2)
        pairs = [(out / f"rep_{r:03d}", f, m) for r, (f, m) in enumerate(reps, start=1)] if len(reps) > 1 \
            else [(out, *reps[0])]
    for d, full, masked in pairs:
        d.mkdir(parents=True, exist_ok=True)
        write_dataset(full, d / "full.csv")
        write_dataset(masked, d / "masked.csv")
        write_schema(full.schema, d / "schema.json")
    print(f"wrote {len(pairs)} dataset pair(s) under {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import simbench as sb

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.design == "study1":
        resolved = {"design": "study1", "n": args.n, "beta": args.beta, "seed": args.seed,
                    "n_iter": args.n_iter, "burn_in": args.burn_in, "thin": args.thin}
        _emit("resolved config", resolved)
        print(f"# seed {args.seed}")
        full, masked = sb.gen_study1(sb.Study1Config(args.n, args.beta, args.seed))
        view = expand_rpl(masked)
        try:
            chain = ChainConfig(args.n_iter, args.burn_in, args.thin, args.seed, default_hyperparams(view.p_star))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        rep = sb.study1_margin_report(full, masked, run_chain(masked, view, chain), args.beta)
        sb.write_study1_report([rep], out / "study1_margin.csv")
        lo, hi = rep.p3_interval
        summary = {"sup_margin_adjust": rep.sup_ma, "sup_observed_ecdf": rep.sup_observed,
                   "p3_mean": rep.p3_mean, "p3_interval": [lo, hi], "p3_observed": rep.p3_observed}
        (out / "study1_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        _emit("summary", summary)
        return EXIT_OK
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    bad = set(methods) - set(sb.METHODS)
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}; choose from {sb.METHODS}")
    settings = sb.BenchmarkSettings(n_iter=args.n_iter, burn_in=args.burn_in, m=args.m, level=args.level,
                                    delta=args.delta, seed=args.seed)
    if settings.burn_in >= settings.n_iter:
        raise UsageError("burn_in must be < n_iter")
    resolved = {"design": "study2", "methods": methods, "replicates": args.replicates, "snr": args.snr,
                "base": args.base or "synthetic", "n_iter": settings.n_iter, "burn_in": settings.burn_in,
                "m": settings.m, "level": settings.level, "delta": settings.delta, "seed": args.seed,
                "threads": args.threads}
    _emit("resolved config", resolved)
    print(f"# seed {args.seed}")
    reps = sb.gen_study2(sb.Study2Config(snr=args.snr, m=max(2, args.m), replicates=args.replicates,
                                         seed=args.seed, base_csv=args.base))
    rows, _ = sb.run_benchmark(reps, methods, settings, n_jobs=args.threads)
    sb.write_metrics(rows, out / "metrics.csv")
    (out / "manifest.json").write_text(json.dumps({"command": "evaluate", "config": resolved},
                                                  indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r.method:14s} {r.term:11s} bias {r.bias:+.3f} coverage {r.coverage:.2f} width {r.width:.2f}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmcopula", description="Gaussian mixture copula imputation for mixed data")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="run the sampler and store retained draws")
    f.add_argument("--data", required=True)
    f.add_argument("--schema", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--n-iter", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--H", type=int)
    f.add_argument("--k", type=int)
    f.add_argument("--delta", type=float)
    f.add_argument("--labels", choices=("conditional", "marginal"))
    f.add_argument("--margin-kind", choices=MARGIN_KINDS)
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("impute", help="write completed datasets from a fit")
    i.add_argument("--fit-dir", required=True)
    i.add_argument("--m", type=int)
    i.add_argument("--out", required=True)
    i.add_argument("--margin-kind", choices=MARGIN_KINDS)
    i.set_defaults(func=cmd_impute)

    r = sub.add_parser("predict", help="write posterior predictive datasets from a fit")
    r.add_argument("--fit-dir", required=True)
    r.add_argument("--n", type=int, help="rows per dataset (default: fitted n)")
    r.add_argument("--reps", type=int, help="number of datasets (default: one per draw)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--margin-kind", choices=MARGIN_KINDS)
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="generate simulation-study datasets")
    s.add_argument("design", choices=("study1", "study2"))
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--snr", type=float, default=1.0)
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--protected-rows", type=int, default=300)
    s.add_argument("--base", help="CSV with FI, Age, BMI columns (default: synthetic covariates)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="run a simulation benchmark")
    e.add_argument("--design", choices=("study1", "study2"), default="study2")
    e.add_argument("--method", default="gmc_ma,gmc_ecdf,complete_case")
    e.add_argument("--replicates", type=int, default=20)
    e.add_argument("--snr", type=float, default=1.0)
    e.add_argument("--base")
    e.add_argument("--n", type=int, default=2000)
    e.add_argument("--beta", type=float, default=1.0)
    e.add_argument("--n-iter", type=int, default=4000)
    e.add_argument("--burn-in", type=int, default=2000)
    e.add_argument("--thin", type=int, default=35)
    e.add_argument("--m", type=int, default=10)
    e.add_argument("--level", type=float, default=0.99)
    e.add_argument("--delta", type=float, default=5.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=1, help="worker processes across replicates")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gmcopula: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, DataFormatError, DegenerateColumnError, DegenerateMarginError,
            FileNotFoundError) as exc:
        print(f"gmcopula: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gmcopula: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
