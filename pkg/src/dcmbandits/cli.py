"""Command-line front end.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import platform
import sys
from pathlib import Path

import numba
import numpy as np

from . import __version__
from .clicklog import (
    LogFormatError,
    estimate_all,
    parse_log,
    generate_sessions,
    replay,
    synthetic_query,
    write_log,
)
from .dcm import DcmInstance
from .harness import (
    LowerBoundSpec,
    aggregate,
    log_grid,
    make_lb_instance,
    run_many,
    theorem1_leading_bound,
    theorem2_leading_bound,
    theorem3_lower_bound,
)
from .policies import POLICY_NAMES
from .theory import check_argmax_oracles, check_klucb_bisection, or_batch, run_lemma_suites

log = logging.getLogger("dcmbandits")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _policy_list(text):
    names = [x.strip() for x in str(text).split(",") if x.strip()]
    bad = [n for n in names if n not in POLICY_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown policies {bad}; choose from {', '.join(POLICY_NAMES)}")
    return names


def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys use option names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


# -- argument groups -------------------------------------------------------


def _add_instance_args(p, L="16", K="4", delta="0.15", gamma="0.5"):
    p.add_argument("--instance", help="DCM instance file (overrides --L/--K/--p/--delta/--gamma)")
    p.add_argument("--L", type=int, default=int(L), help="number of items")
    p.add_argument("--K", type=int, default=int(K), help="number of positions")
    p.add_argument("--p", type=float, default=0.2, help="attraction of the optimal items")
    p.add_argument("--delta", type=float, default=float(delta), help="attraction gap")
    p.add_argument("--gamma", type=float, default=float(gamma), help="common termination probability")


def _add_run_args(p, horizon=100_000, runs=20, policies="dcm-klucb,first-click,last-click,ranked-klucb"):
    p.add_argument("--horizon", "-n", type=int, default=horizon)
    p.add_argument("--runs", type=int, default=runs)
    p.add_argument("--seed", type=int, default=0, help="run i uses seed + i")
    p.add_argument("--policies", type=_policy_list, default=_policy_list(policies))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--exclude-init", action="store_true",
                   help="do not count regret of the initialization steps")
    p.add_argument("--regret", choices=("realized", "expected"), default="realized")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcmbandits", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    for name, policies, help_ in (
        ("simulate", "dcm-klucb,first-click,last-click,ranked-klucb", "run policies on one instance"),
        ("compare", ",".join(POLICY_NAMES), "simulate with all five policies"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file; flags win")
        _add_instance_args(p)
        _add_run_args(p, policies=policies)
        p.add_argument("--out", default="results", help="output directory")

    p = sub.add_parser("sweep", help="final regret over a parameter grid")
    p.add_argument("--config")
    p.add_argument("--L", type=_int_list, default=[16, 32, 64])
    p.add_argument("--K", type=_int_list, default=[2, 4, 8])
    p.add_argument("--p", type=_float_list, default=[0.2])
    p.add_argument("--delta", type=_float_list, default=[0.15, 0.075])
    p.add_argument("--gamma", type=_float_list, default=[0.8])
    _add_run_args(p, policies="dcm-klucb")
    p.add_argument("--out", default="results")

    p = sub.add_parser("generate", help="write a synthetic multi-query click log")
    p.add_argument("--config")
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--sessions", type=int, default=100_000, help="sessions per query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="logs")

    p = sub.add_parser("estimate", help="fit one DCM per query from a click log")
    p.add_argument("log", help="click log file")
    p.add_argument("--config")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed line")
    p.add_argument("--out", default="estimates")

    p = sub.add_parser("replay", help="run policies on fitted per-query DCMs")
    p.add_argument("estimates", help="directory of query_<id>.dcm files")
    p.add_argument("--config")
    p.add_argument("--positions", type=int, default=5, help="list length K (<= 10)")
    _add_run_args(p, horizon=10_000, runs=5, policies="dcm-klucb,ranked-klucb,ranked-exp3")
    p.add_argument("--out", default="results")

    p = sub.add_parser("verify", help="randomized checks of the or-function inequalities and oracles")
    p.add_argument("--config")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=1000, help="argmax oracle trials")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bounds", help="print the regret bound values")
    p.add_argument("--config")
    _add_instance_args(p)
    p.add_argument("--horizon", "-n", type=float, default=100_000)
    p.add_argument("--eps", type=float, default=0.1)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, filling unset options from ``--config`` when given."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        defaults = {}
        for key, value in cfg.items():
            action = known[key]
            if action.const is True and action.nargs == 0:
                defaults[key] = value.lower() in ("1", "true", "yes")
            else:
                defaults[key] = action.type(value) if action.type else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# -- output helpers --------------------------------------------------------


def _manifest(args, seeds=None, extra=None) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    out = {
        "command": args.command,
        "config": config,
        "seeds": list(seeds) if seeds is not None else None,
        "versions": {
            "dcmbandits": __version__,
            "numpy": np.__version__,
            "numba": numba.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        out.update(extra)
    return out


def _write_csv(path: Path, header, rows, manifest) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    side = dict(manifest, file=path.name)
    path.with_name(path.name + ".manifest.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def _instance_from_args(args) -> tuple[DcmInstance, LowerBoundSpec | None]:
    if args.instance:
        try:
            text = Path(args.instance).read_text()
        except OSError:
            raise
        try:
            return DcmInstance.from_text(text), None
        except ValueError as exc:
            raise ConfigError(f"{args.instance}: {exc}") from None
    try:
        spec = LowerBoundSpec.top(args.L, args.K, args.p, args.delta, args.gamma)
        return make_lb_instance(spec), spec
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_run_args(args) -> list[int]:
    if args.horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if args.runs < 1:
        raise ConfigError("runs must be >= 1")
    if args.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not args.policies:
        raise ConfigError("no policies given")
    return [args.seed + i for i in range(args.runs)]


def _run_kwargs(args) -> dict:
    return {"include_init": not args.exclude_init, "regret": args.regret}


# -- subcommands -----------------------------------------------------------


def cmd_simulate(args) -> int:
    instance, _ = _instance_from_args(args)
    seeds = _check_run_args(args)
    traces = run_many(instance, args.policies, args.horizon, seeds, jobs=args.jobs, **_run_kwargs(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = log_grid(args.horizon)
    manifest = _manifest(args, seeds, {"instance": instance.to_text()})
    trace_rows, summary_rows = [], []
    for policy in args.policies:
        for tr in traces[policy]:
            trace_rows.extend((policy, tr.seed, int(t), _fmt(tr.cum_regret[t - 1])) for t in grid)
        s = aggregate(traces[policy])
        summary_rows.extend(
            (policy, int(t), _fmt(s.mean[t - 1]), _fmt(s.sem[t - 1]), s.runs) for t in grid
        )
        log.info("%s: final regret %.2f +- %.2f", policy, s.final_mean, s.final_sem)
    _write_csv(out / "traces.csv", ("policy", "seed", "t", "cum_regret"), trace_rows, manifest)
    _write_csv(out / "summary.csv", ("policy", "t", "mean", "sem", "runs"), summary_rows, manifest)
    (out / "instance.dcm").write_text(instance.to_text())
    print(f"wrote {out / 'traces.csv'} and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    seeds = _check_run_args(args)
    axes = [args.L, args.K, args.p, args.delta, args.gamma]
    if any(len(a) == 0 for a in axes):
        raise ConfigError("every grid axis needs at least one value")
    cells = list(itertools.product(*axes))
    specs = []
    for L, K, p, delta, gamma in cells:
        try:
            specs.append(LowerBoundSpec.top(L, K, p, delta, gamma))
        except ValueError as exc:
            raise ConfigError(f"cell L={L} K={K} p={p} delta={delta} gamma={gamma}: {exc}") from None
    rows = []
    for spec in specs:
        traces = run_many(make_lb_instance(spec), args.policies, args.horizon, seeds,
                          jobs=args.jobs, **_run_kwargs(args))
        for policy in args.policies:
            s = aggregate(traces[policy])
            rows.append((spec.L, spec.K, _fmt(spec.p), _fmt(spec.delta), _fmt(spec.gamma), policy,
                         args.horizon, _fmt(s.final_mean), _fmt(s.final_sem), s.runs))
            log.info("L=%d K=%d delta=%g gamma=%g %s: %.2f", spec.L, spec.K, spec.delta,
                     spec.gamma, policy, s.final_mean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ("L", "K", "p", "delta", "gamma", "policy", "horizon", "mean", "sem", "runs")
    _write_csv(out / "sweep.csv", header, rows, _manifest(args, seeds))
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.queries < 1 or args.sessions < 1:
        raise ConfigError("queries and sessions must be >= 1")
    out = Path(args.out)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    path = out / "sessions.log"
    with open(path, "w") as fh:
        for q in range(args.queries):
            instance, display = synthetic_query(rng)
            (out / "truth" / f"query_{q}.dcm").write_text(instance.to_text())
            write_log(generate_sessions(instance, display, args.sessions, seed=args.seed * 1000 + q, query=q), fh)
    path.with_name(path.name + ".manifest.json").write_text(
        json.dumps(dict(_manifest(args), file=path.name), indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    errors: list[LogFormatError] = []
    with open(args.log) as fh:
        try:
            estimates = estimate_all(parse_log(fh, strict=args.strict, errors=errors))
        except LogFormatError as exc:
            print(f"error: {args.log}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if errors:
        print(f"skipped {len(errors)} malformed line(s); first: {errors[0]}", file=sys.stderr)
    if not estimates:
        raise ConfigError(f"{args.log}: no valid sessions")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for q, est in estimates.items():
        (out / f"query_{q}.dcm").write_text(est.instance.to_text())
        report[str(q)] = {
            "sessions": est.sessions,
            "item_ids": list(est.item_ids),
            "item_examined": est.item_examined.tolist(),
            "position_clicks": est.position_clicks.tolist(),
            "low_confidence_items": est.low_confidence_items,
            "low_confidence_positions": est.low_confidence_positions,
        }
    manifest = _manifest(args, extra={"skipped_lines": len(errors), "queries": report})
    (out / "estimates.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"estimated {len(estimates)} queries into {out}")
    return EXIT_OK


def load_estimates(directory) -> dict[int, DcmInstance]:
    files = sorted(Path(directory).glob("query_*.dcm"), key=lambda f: int(f.stem.split("_", 1)[1]))
    if not files:
        raise FileNotFoundError(f"no query_*.dcm files in {directory}")
    models = {}
    for f in files:
        try:
            models[int(f.stem.split("_", 1)[1])] = DcmInstance.from_text(f.read_text())
        except ValueError as exc:
            raise ConfigError(f"{f}: {exc}") from None
    return models


def cmd_replay(args) -> int:
    seeds = _check_run_args(args)
    if not 1 <= args.positions <= 10:
        raise ConfigError("positions must lie in [1, 10]")
    models = load_estimates(args.estimates)
    result = replay(models, args.policies, args.horizon, seeds, positions=args.positions,
                    jobs=args.jobs, **_run_kwargs(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = log_grid(args.horizon)
    rows = []
    for policy in args.policies:
        s = result.summary[policy]
        rows.extend((policy, int(t), _fmt(s.mean[t - 1]), _fmt(s.sem[t - 1]), s.runs) for t in grid)
    manifest = _manifest(args, seeds, {"queries": sorted(models)})
    _write_csv(out / "replay_summary.csv", ("policy", "t", "mean", "sem", "runs"), rows, manifest)
    print(f"wrote {out / 'replay_summary.csv'}")
    return EXIT_OK


def run_verification(samples=10_000, trials=1000, seed=0, or_fn=or_batch, stream=None) -> bool:
    """Run every check, print one line each, and dump the worst sample of failures."""
    stream = sys.stdout if stream is None else stream
    ok = True
    for r in run_lemma_suites(samples, seed=seed, or_fn=or_fn):
        status = "PASS" if r.passed else "FAIL"
        print(f"lemma{r.lemma} K={r.K} samples={r.samples} worst_margin={r.worst_margin:.3e} {status}",
              file=stream)
        if not r.passed:
            ok = False
            print(f"  counterexample: {json.dumps(r.worst_input)}", file=stream)
    for r in [*check_argmax_oracles(trials, seed), check_klucb_bisection(samples, seed)]:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name} trials={r.trials} mismatches={len(r.mismatches)} {status}", file=stream)
        if not r.passed:
            ok = False
            print(f"  counterexample: {json.dumps(r.mismatches[0])}", file=stream)
    print("verification " + ("passed" if ok else "FAILED"), file=stream)
    return ok


def cmd_verify(args) -> int:
    if args.samples < 1 or args.trials < 1:
        raise ConfigError("samples and trials must be >= 1")
    return EXIT_OK if run_verification(args.samples, args.trials, args.seed) else EXIT_VERIFY


def cmd_bounds(args) -> int:
    instance, spec = _instance_from_args(args)
    if args.horizon < 3 or args.eps <= 0:
        raise ConfigError("need horizon >= 3 and eps > 0")
    v = instance.termination
    print(f"L = {instance.L}")
    print(f"K = {instance.K}")
    print(f"horizon = {args.horizon:g}")
    if np.all(v == v[0]):
        print(f"theorem1_leading = {float(theorem1_leading_bound(instance, args.horizon, args.eps))!r}")
    if np.all(np.diff(v) <= 0):
        print(f"theorem2_leading = {float(theorem2_leading_bound(instance, args.horizon, args.eps))!r}")
    if spec is not None and spec.delta > 0:
        print(f"theorem3_lower = {float(theorem3_lower_bound(spec, args.horizon))!r}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_simulate,
    "sweep": cmd_sweep,
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "replay": cmd_replay,
    "verify": cmd_verify,
    "bounds": cmd_bounds,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
