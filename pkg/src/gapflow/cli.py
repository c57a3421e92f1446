"""Command-line experiment runner.

::

    gapflow simulate {ufm,scalar,reduced-theta,reduced-etf,reduced-gamma} --config run.toml
    gapflow verify {coupling,thm1,lemma2,lemma3,bessel,density}
    gapflow mc thm2 --trials 1000 --n 512 --d 16 --delta 0.1
    gapflow sweep --config run.toml --axis temperature.tau_star --values 0.04,0.07,0.1

Every run writes ``trajectory.csv`` (when the experiment has one),
``summary.json`` and ``resolved_config.json`` into its output directory.
Exit codes: 0 success, 2 bad configuration or input, 3 numerical
divergence, 4 invariant violation under ``--self-check``.
"""

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, config, experiments
from .dynamics import CSV_COLUMNS
from .exceptions import IntegrationDivergedError, InvalidInputError, InvariantViolationError
from .geometry import RNG_NAME, RNG_VERSION
from .metrics import COVARIANCE_NORMALIZATION

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INVARIANT = 4

VERIFY_SUITES = ("coupling", "thm1", "lemma2", "lemma3", "bessel", "density")


def worker_count():
    """Worker cap from ``GAPFLOW_THREADS`` (default: all CPUs)."""
    raw = os.environ.get("GAPFLOW_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise config.ConfigError(f"GAPFLOW_THREADS must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise config.ConfigError(f"GAPFLOW_THREADS must be a positive integer, got {raw!r}")
    return value


# --------------------------------------------------------------------------
# writers


def _fmt(value):
    return "%.17g" % value


def emit_trajectory(record, path):
    """Write the CSV contract: fixed header, ``%.17g`` values, ``\\n`` line ends."""
    if len(record) == 0:
        raise InvalidInputError("cannot write an empty trajectory")
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(_fmt(v) for v in row) for row in record.rows)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def emit_diagnostics(record, path):
    """Extra per-sample series (scale rate, violated pairs, ...) next to the trajectory."""
    names = sorted(record.extras)
    if not names:
        return None
    lines = [",".join(["t"] + names)]
    t = record.column("t")
    for k in range(len(record)):
        lines.append(",".join([_fmt(t[k])] + [_fmt(record.extras[name][k]) for name in names]))
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary(command, resolved, results, bounds, started, extra=None):
    out = {
        "artifact": "gapflow",
        "version": __version__,
        "command": command,
        "config_hash": config.config_hash(resolved),
        "wall_time_s": time.perf_counter() - started,
        "rng": {"name": RNG_NAME, "version": RNG_VERSION},
        "covariance_normalization": COVARIANCE_NORMALIZATION,
        "bounds": bounds,
    }
    out.update(extra or {})
    out.update(results)
    return out


def write_outputs(out_dir, command, resolved, record, results, bounds, started, extra=None, echo=True):
    os.makedirs(out_dir, exist_ok=True)
    stale = os.path.join(out_dir, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    if record is not None:
        emit_trajectory(record, os.path.join(out_dir, "trajectory.csv"))
        emit_diagnostics(record, os.path.join(out_dir, "diagnostics.csv"))
    _write_json(os.path.join(out_dir, "resolved_config.json"), resolved)
    summary = _summary(command, resolved, results, bounds, started, extra)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    if echo:
        print(json.dumps(_jsonable(resolved), sort_keys=True))
    return summary


# --------------------------------------------------------------------------
# commands


def _resolve_simulate(args, kind):
    cfg = config.load(args.config)
    if args.config is not None and cfg["experiment"]["kind"] != kind and _file_sets_kind(args.config):
        raise config.ConfigError(f"config declares experiment.kind = {cfg['experiment']['kind']!r}, command asks for {kind!r}")
    cfg = config.override(cfg, "experiment.kind", kind)
    for flag, key in (("seed", "experiment.seed"), ("n", "experiment.n"), ("d", "experiment.d"),
                      ("horizon", "integrator.horizon"), ("dt", "integrator.dt")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = config.override(cfg, key, value)
    cfg = config.apply_overrides(cfg, args.set)
    if args.out is not None:
        cfg = config.override(cfg, "output.dir", args.out)
    return cfg


def _file_sets_kind(path):
    with open(path, "rb") as fh:
        return "kind" in config.tomllib.load(fh).get("experiment", {})


def _check(problems, self_check):
    if self_check and problems:
        raise InvariantViolationError("; ".join(problems))


def run_config(cfg, command, self_check=False, echo=True):
    """Execute a resolved simulate config and write its outputs."""
    started = time.perf_counter()
    out_dir = cfg["output"]["dir"]
    try:
        record, results, bounds = experiments.simulate(cfg)
    except IntegrationDivergedError as exc:
        if exc.record is not None and len(exc.record):
            os.makedirs(out_dir, exist_ok=True)
            emit_trajectory(exc.record, os.path.join(out_dir, "trajectory.csv"))
        raise
    problems = experiments.self_check(cfg["experiment"]["kind"], record)
    extra = {
        "beta_cap": cfg["temperature"]["beta_max"] if cfg["temperature"]["cap"] else None,
        "self_check": {"enabled": self_check, "violations": problems},
    }
    summary = write_outputs(out_dir, command, cfg, record, results, bounds, started, extra, echo)
    _check(problems, self_check)
    return record, summary


def cmd_simulate(args):
    cfg = _resolve_simulate(args, args.kind)
    run_config(cfg, f"simulate {args.kind}", args.self_check, not args.quiet)
    return EXIT_OK


def _verify_call(suite, args):
    pick = {k: v for k, v in vars(args).items() if v is not None}
    seed = pick.get("seed", 0)
    if suite == "coupling":
        return experiments.verify_coupling(pick.get("count", 20), pick.get("n", 6), pick.get("d", 4), seed)
    if suite == "lemma2":
        return experiments.verify_lemma2(pick.get("count", 100), seed)
    if suite == "lemma3":
        return experiments.verify_lemma3(pick.get("count", 20), pick.get("n", 6), pick.get("d", 4), seed)
    if suite == "bessel":
        return experiments.verify_bessel()
    if suite == "density":
        return experiments.verify_density(samples=pick.get("samples", 1_000_000), seed=seed)
    n, gamma0 = pick.get("n", 64), pick.get("gamma0", 0.5)
    record, results, bounds = experiments.verify_thm1(
        n, gamma0, pick.get("horizon", 1e5), pick.get("dt", 1e-3), pick.get("samples", 200)
    )
    lemma_h = pick.get("lemma1_horizon", 1e3)
    if lemma_h > 0:
        lemma_started = time.perf_counter()
        _, lemma, lemma_bounds = experiments.lemma1_conservation(n, gamma0, dt=pick.get("dt", 1e-3), horizon=lemma_h)
        lemma["wall_time_s"] = time.perf_counter() - lemma_started
        results["lemma1_conservation"] = lemma
        results["passed"] = bool(results["passed"] and lemma["passed"])
        bounds = bounds + lemma_bounds
    return record, results, bounds


def cmd_verify(args):
    started = time.perf_counter()
    resolved = {"command": "verify", "suite": args.suite}
    resolved.update({k: v for k, v in sorted(vars(args).items()) if k not in ("func", "quiet", "out", "self_check") and v is not None})
    record, results, bounds = _verify_call(args.suite, args)
    out_dir = args.out or os.path.join("runs", f"verify-{args.suite}")
    write_outputs(out_dir, f"verify {args.suite}", resolved, record, results, bounds, started, echo=not args.quiet)
    _check([] if results["passed"] else [f"verify {args.suite} failed"], args.self_check)
    return EXIT_OK


def cmd_mc(args):
    started = time.perf_counter()
    workers = worker_count()
    resolved = {
        "command": "mc thm2",
        "n": args.n, "d": args.d, "tau0": args.tau0, "gamma0": args.gamma0,
        "delta": args.delta, "trials": args.trials, "seed": args.seed,
    }
    _, results, bounds = experiments.run_mc_thm2(
        args.n, args.d, args.tau0, args.gamma0, args.delta, args.trials, args.seed, workers
    )
    out_dir = args.out or os.path.join("runs", "mc-thm2")
    write_outputs(out_dir, "mc thm2", resolved, None, results, bounds, started, {"workers": workers}, echo=not args.quiet)
    _check([] if results["passed"] else ["Monte Carlo check failed"], args.self_check)
    return EXIT_OK


def _sweep_label(text):
    return text.replace("/", "_")


def cmd_sweep(args):
    base = config.apply_overrides(config.load(args.config), args.set)
    texts = [v.strip() for v in args.values.split(",") if v.strip()]
    if not texts:
        raise config.ConfigError("--values must list at least one value")
    out_root = args.out or base["output"]["dir"]
    runs = []
    for text in texts:
        cfg = config.override(base, args.axis, config.parse_value(text))
        cfg = config.override(cfg, "output.dir", os.path.join(out_root, f"{args.axis}={_sweep_label(text)}"))
        runs.append((text, cfg))
    kind = base["experiment"]["kind"]
    workers = min(worker_count(), len(runs))

    def one(item):
        return run_config(item[1], f"simulate {kind}", args.self_check, echo=False)[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, runs))
    else:
        records = [one(item) for item in runs]
    os.makedirs(out_root, exist_ok=True)
    lines = [",".join([args.axis] + [f"final_{c}" for c in CSV_COLUMNS])]
    for (text, _), record in zip(runs, records):
        lines.append(",".join([text] + [_fmt(v) for v in record.rows[-1]]))
    with open(os.path.join(out_root, "aggregate.csv"), "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    if not args.quiet:
        print(json.dumps({"axis": args.axis, "values": texts, "out": out_root}))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--out", help="output directory")
    p.add_argument("--self-check", action="store_true", help="exit 4 when an invariant or check fails")
    p.add_argument("-q", "--quiet", action="store_true", help="do not echo the resolved config")


def build_parser():
    parser = argparse.ArgumentParser(prog="gapflow", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gapflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate one flow")
    sim.add_argument("kind", choices=config.SIMULATE_KINDS)
    sim.add_argument("--config", help="TOML config file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--d", type=int)
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=VERIFY_SUITES)
    ver.add_argument("--n", type=int)
    ver.add_argument("--d", type=int)
    ver.add_argument("--gamma0", type=float)
    ver.add_argument("--horizon", type=float)
    ver.add_argument("--dt", type=float)
    ver.add_argument("--samples", type=int, help="log-spaced samples (thm1) or Monte Carlo draws (density)")
    ver.add_argument("--count", type=int, help="number of random instances")
    ver.add_argument("--lemma1-horizon", type=float, help="horizon of the fixed-step conservation run (thm1; 0 skips)")
    ver.add_argument("--seed", type=int)
    _add_common(ver)
    ver.set_defaults(func=cmd_verify)

    mc = sub.add_parser("mc", help="Monte Carlo experiments")
    mc.add_argument("experiment", choices=("thm2",))
    mc.add_argument("--n", type=int, default=512)
    mc.add_argument("--d", type=int, default=16)
    mc.add_argument("--tau0", type=float, default=0.07)
    mc.add_argument("--gamma0", type=float, default=0.3)
    mc.add_argument("--delta", type=float, default=0.1)
    mc.add_argument("--trials", type=int, default=1000)
    mc.add_argument("--seed", type=int, default=0)
    _add_common(mc)
    mc.set_defaults(func=cmd_mc)

    sw = sub.add_parser("sweep", help="run one config over several values of a key")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, metavar="SECTION.KEY")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    _add_common(sw)
    sw.set_defaults(func=cmd_sweep)
    return parser


def _error_record(exc, code, out_dir=None):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, IntegrationDivergedError):
        record["last_t"] = exc.last_t
    print(json.dumps(_jsonable(record)), file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            _write_json(os.path.join(out_dir, "error.json"), record)
        except OSError:
            pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = getattr(args, "out", None)
    try:
        return args.func(args)
    except IntegrationDivergedError as exc:
        _error_record(exc, EXIT_DIVERGED, out_dir)
        return EXIT_DIVERGED
    except InvariantViolationError as exc:
        _error_record(exc, EXIT_INVARIANT, out_dir)
        return EXIT_INVARIANT
    except (InvalidInputError, ValueError, OSError) as exc:
        _error_record(exc, EXIT_CONFIG, out_dir)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
