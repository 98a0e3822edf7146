"""Command-line interface.

Exit codes: 0 success, 1 a run failed its performance constraints,
2 backend error, 3 bad input.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__
from .backend import (
    FULL_SYSTEM,
    MSR_ADDRESSES,
    MSR_RAPL_POWER_UNIT,
    Backend,
    MsrBackend,
    SimBackend,
    open_backend,
    read_traces_csv,
    write_traces_csv,
)
from .codec import (
    DomainId,
    DomainKind,
    PowerLimit,
    decode_power_limit,
    describe_limit,
    encode_power_limit,
)
from .errors import (
    BackendFailure,
    DomainUnavailable,
    EmptyTrace,
    LevelNotSampled,
    MissingEndpoints,
    OutOfRange,
    PermissionDenied,
    RaplError,
    SchemaError,
    Unrepresentable,
)
from .harness import ExperimentConfig, calibrate, run_graduated, run_report
from .metrics import (
    build_cdf,
    curves_from_report,
    dump_json,
    ep_report,
    read_curves_csv,
    write_cdf_csv,
    write_curves_csv,
)
from .node_model.profile import BUILTIN_PROFILES, load_profile, profile_to_dict
from .optimizer import ALL_POLICIES, SUITE_LEVELS, CapPolicy, evaluate_suite, write_suite_csv
from .validation import validate

EXIT_OK, EXIT_VERDICT, EXIT_BACKEND, EXIT_INPUT = 0, 1, 2, 3

# Config-file keys that are CLI settings rather than experiment fields.
CLI_KEYS = ("backend", "profile", "seed", "output_dir")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 3), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _levels(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated fractions: {text!r}")


def _common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--backend", choices=("sim", "msr"), help="measurement backend (default sim)")
    g.add_argument("--profile", help=f"built-in profile ({', '.join(BUILTIN_PROFILES)}) or JSON path")
    g.add_argument("--seed", type=int, help="simulation seed (default 0)")
    g.add_argument("--output-dir", type=Path, help="directory for output files (default .)")
    g.add_argument("--config", type=Path, help="JSON config; flags override its values")
    g.add_argument("--no-timestamps", action="store_true", help="omit wall-clock timestamps from outputs")
    if experiment:
        e = p.add_argument_group("experiment overrides")
        e.add_argument("--levels", type=_levels, help="comma-separated load levels")
        e.add_argument("--duration", type=float, dest="level_duration", help="seconds per level")
        e.add_argument("--settle", type=float, dest="settle_interval", help="settle seconds before/after a level")
        e.add_argument("--calibration-runs", type=int)
        e.add_argument("--tolerance", type=float, dest="performance_tolerance")
        e.add_argument("--time-good", type=float)
        e.add_argument("--time-tolerable", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="raplprop",
        description="RAPL power measurement, proportionality metrics and power-cap search.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="measure the 100%% load throughput target")
    _common(p)

    p = sub.add_parser("profile-run", help="graduated load-level run; writes run report and curves")
    _common(p)

    p = sub.add_parser("metrics", help="EP/PG/LD tables from a run report or curve file")
    p.add_argument("report", type=Path, help="run report JSON, curve JSON or curve CSV")
    p.add_argument("--json", type=Path, dest="json_out", help="also write an EP report JSON here")

    p = sub.add_parser("trace", help="sample a power trace from the backend")
    _common(p, experiment=False)
    p.add_argument("--load", type=float, default=1.0)
    p.add_argument("--trace-duration", type=float, default=10.0, help="seconds to sample")
    p.add_argument("--resolution", type=float, default=0.05, help="sample spacing in seconds")
    p.add_argument("--domains", default="package,core,uncore,dram,full_system",
                   help="comma-separated subjects to trace")

    p = sub.add_parser("cdf", help="CDF of normalised instantaneous power")
    _common(p, experiment=False)
    p.add_argument("--trace", type=Path, help="trace CSV (default: sample the backend)")
    p.add_argument("--domain", default="package", help="subject to build the CDF for")
    p.add_argument("--normalizer", type=float, help="watts (default: node maximum power limit)")
    p.add_argument("--load", type=float, default=1.0)
    p.add_argument("--trace-duration", type=float, default=120.0)
    p.add_argument("--resolution", type=float, default=0.05)

    p = sub.add_parser("optimize", help="search power caps per policy and level")
    _common(p)
    p.add_argument("--policies", default=",".join(x.value for x in ALL_POLICIES),
                   help="comma-separated of cpuonly, memonly, cpumem ('' for none)")
    p.add_argument("--dry-run", action="store_true",
                   help="with --backend msr: search on the simulator, print the register writes only")

    p = sub.add_parser("registers", help="decode RAPL registers; optionally program a limit")
    _common(p, experiment=False)
    p.add_argument("--set", action="append", default=[], metavar="DOMAIN=WATTS",
                   help="program a limit, e.g. core-0=20 (repeatable)")
    p.add_argument("--window", type=float, help="time window in seconds (default one time unit)")
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="print register writes without performing them")

    p = sub.add_parser("profile", help="list or show workload profiles")
    psub = p.add_subparsers(dest="profile_command", required=True)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    return parser


# -- settings --------------------------------------------------------------------

def _settings(args) -> tuple[dict, ExperimentConfig]:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}")
        if not isinstance(doc, dict):
            raise SchemaError("config must be a JSON object", field="<root>")
    cli = {"backend": "sim", "profile": "specpower-2012", "seed": 0, "output_dir": "."}
    cli.update({k: doc.pop(k) for k in CLI_KEYS if k in doc})
    for k in CLI_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cli[k] = v
    cli["output_dir"] = Path(cli["output_dir"])
    cfg = ExperimentConfig.from_dict({**doc, "seed": cli["seed"]})
    overrides = {
        "load_levels": getattr(args, "levels", None),
        **{k: getattr(args, k, None) for k in (
            "level_duration", "settle_interval", "calibration_runs", "performance_tolerance",
            "time_good", "time_tolerable",
        )},
    }
    return cli, cfg.with_overrides(**overrides)


def _open(cli, dry_run=False):
    profile = load_profile(cli["profile"])
    backend = open_backend(cli["backend"], profile, seed=cli["seed"], dry_run=dry_run)
    return profile, backend


def _out(cli, name: str) -> Path:
    cli["output_dir"].mkdir(parents=True, exist_ok=True)
    return cli["output_dir"] / name


# -- commands --------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    cli, cfg = _settings(args)
    profile, backend = _open(cli)
    target = calibrate(backend, profile, cfg)
    unit = "sessions" if profile.kind.value == "session" else "ops"
    print(f"calibrated 100% target for {profile.name}: {target:.10g} {unit}")
    return EXIT_OK


def cmd_profile_run(args) -> int:
    cli, cfg = _settings(args)
    profile, backend = _open(cli)
    run = run_graduated(backend, profile, cfg)
    doc = run_report(run, profile, cfg, cli["backend"], timestamps=not args.no_timestamps)
    validate(doc, "run-report")
    report_path = _out(cli, "run-report.json")
    dump_json(doc, report_path)
    write_curves_csv(run.curves, _out(cli, "power-curves.csv"))
    print(f"wrote {report_path} and {_out(cli, 'power-curves.csv')}")
    if doc["metrics"]:
        _print_metrics(doc["metrics"])
    failed = [f"{r.load:g}" for r, v in zip(run.results, run.verdicts) if not v.passed]
    if failed:
        print(f"performance constraints failed at levels {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def _print_metrics(block: dict) -> None:
    print(f"{'subject':<14}{'idle %':>8}{'range %':>9}{'EP':>8}{'LD':>8}")
    for s, r in block.items():
        print(f"{s:<14}{r['idle_pct']:>8.2f}{r['dynamic_range_pct']:>9.2f}{r['ep']:>8.3f}{r['ld']:>8.3f}")
    for s, r in block.items():
        pg = "  ".join(f"{k}:{v:+.3f}" for k, v in r["pg"].items())
        print(f"PG {s}: {pg}")


def cmd_metrics(args) -> int:
    path: Path = args.report
    if not path.exists():
        raise InputError(f"no such file: {path}")
    if path.suffix.lower() == ".csv":
        curves = read_curves_csv(path)
    else:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path} is not valid JSON: {exc}", field="<root>")
        if isinstance(doc, dict) and "schema" in doc:
            validate(doc, "run-report")
        curves = curves_from_report(doc)
    block = {s: ep_report(c).to_dict() for s, c in curves.items()}
    _print_metrics(block)
    if args.json_out:
        out = {"schema": "raplprop/ep-report/1", "source": str(path), "reports": block}
        validate(out, "ep-report")
        dump_json(out, args.json_out)
    return EXIT_OK


def _sample(backend: Backend, args, subjects):
    if isinstance(backend, SimBackend):
        backend.set_load(args.load)
        backend.settle(args.load, 1.0)
    return backend.sample_trace(subjects, args.trace_duration, args.resolution)


def cmd_trace(args) -> int:
    cli, _ = _settings(args)
    _, backend = _open(cli)
    subjects = [s.strip() for s in args.domains.split(",") if s.strip()]
    traces = _sample(backend, args, subjects)
    path = _out(cli, "power-trace.csv")
    write_traces_csv(traces.values(), path)
    clamped = sum(t.clamped for t in traces.values())
    print(f"wrote {path} ({len(next(iter(traces.values())))} samples per subject"
          + (f", {clamped} negative uncore samples clamped" if clamped else "") + ")")
    return EXIT_OK


def cmd_cdf(args) -> int:
    cli, _ = _settings(args)
    if args.trace is not None:
        if not args.trace.exists():
            raise InputError(f"no such file: {args.trace}")
        traces = read_traces_csv(args.trace)
        if args.domain not in traces:
            raise EmptyTrace(f"trace has no samples for {args.domain!r}")
        trace = traces[args.domain]
        backend = None
    else:
        _, backend = _open(cli)
        trace = _sample(backend, args, [args.domain])[args.domain]
    normalizer = args.normalizer
    if normalizer is None:
        if args.domain == FULL_SYSTEM:
            raise InputError("full_system has no power-limit maximum; pass --normalizer")
        kind = args.domain.partition("-")[0]
        if backend is None:
            profile = load_profile(cli["profile"])
            backend = SimBackend(profile, seed=cli["seed"])
        normalizer = backend.capabilities.max_power(kind)
        if "-" in args.domain:
            normalizer /= backend.capabilities.sockets
    cdf = build_cdf(trace, normalizer)
    path = _out(cli, f"cdf-{args.domain}.csv")
    write_cdf_csv(cdf, path)
    print(f"wrote {path}: {len(cdf.values)} points, normaliser {normalizer:g} W, "
          f"max normalised power {cdf.values[-1]:.3f}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cli, cfg = _settings(args)
    try:
        policies = [CapPolicy.parse(p) for p in args.policies.split(",") if p.strip()]
    except ValueError as exc:
        raise InputError(str(exc))
    levels = args.levels if args.levels is not None else SUITE_LEVELS
    profile = load_profile(cli["profile"])
    hw = None
    if cli["backend"] == "msr":
        if not args.dry_run:
            raise BackendFailure("the msr backend cannot drive workload levels; use --dry-run "
                                 "to print the register writes for the simulated optimum")
        hw = MsrBackend(dry_run=True)
    backend = SimBackend(profile, seed=cli["seed"])
    report = evaluate_suite(backend, profile, cfg, levels, policies)
    doc = report.to_dict()
    if not args.no_timestamps:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    validate(doc, "suite-report")
    path = _out(cli, "suite-report.json")
    dump_json(doc, path)
    write_suite_csv(report, _out(cli, "suite.csv"))
    print(f"{'load':>5} {'policy':<8} {'core W':>8} {'dram W':>8} {'savings %':>10} {'eff %':>7} {'cands':>6} verdict")
    failed = False
    for u in report.levels:
        for p, r in report.results[u].items():
            t = r.best_totals or {}
            core = f"{t[DomainKind.CORE]:.1f}" if DomainKind.CORE in t else "-"
            dram = f"{t[DomainKind.DRAM]:.1f}" if DomainKind.DRAM in t else "-"
            ok = r.best_caps is not None and r.verdict.passed
            failed |= not ok
            print(f"{u:>5.2f} {p.value:<8} {core:>8} {dram:>8} {r.savings_pct:>10.3f} "
                  f"{r.efficiency_gain_pct:>7.3f} {r.candidates_evaluated:>6} {'pass' if ok else 'none passed'}")
    if report.post_cap_curves:
        v, c = report.metrics("vanilla"), report.metrics("post_cap")
        print(f"{'subject':<14}{'EP vanilla':>11}{'EP capped':>11}{'LD vanilla':>11}{'LD capped':>11}")
        for s in v:
            print(f"{s:<14}{v[s]['ep']:>11.4f}{c[s]['ep']:>11.4f}{v[s]['ld']:>11.4f}{c[s]['ld']:>11.4f}")
    print(f"wrote {path} and {_out(cli, 'suite.csv')}")
    if hw is not None:
        print("# register writes for the best setting per level and policy (not performed)")
        for u in report.levels:
            for p, r in report.results[u].items():
                if r.best_caps is None:
                    continue
                print(f"# load {u:g} {p.value}")
                for d, limit in sorted(r.best_caps.items()):
                    if d in hw.capabilities.domains:
                        hw.set_limit(d, limit)
    return EXIT_VERDICT if failed else EXIT_OK


def cmd_registers(args) -> int:
    cli, _ = _settings(args)
    if cli["backend"] == "msr":
        backend = MsrBackend(dry_run=args.dry_run)
    else:
        backend = SimBackend(load_profile(cli["profile"]), seed=cli["seed"])
    caps = backend.capabilities
    u = caps.units
    raw_units = backend.read_register(0, MSR_RAPL_POWER_UNIT)
    print(f"units {MSR_RAPL_POWER_UNIT:#x} = {raw_units:#018x}: power {u.power_unit:g} W, "
          f"energy {u.energy_unit:.6g} J, time {u.time_unit * 1e6:.2f} us")
    for d in caps.domains:
        info = caps.power_info.get(d)
        line = f"{d.label:<10} limit {describe_limit(backend.get_limit(d))}"
        if info is not None:
            line += (f"; range {info.min_power:g}-{info.max_power:g} W, "
                     f"max window {info.max_time_window * 1e3:.3f} ms")
        line += f"; energy counter {backend.read_energy(d).raw_counter:#010x}"
        print(line)
    window = args.window if args.window is not None else u.time_unit
    for item in args.set:
        label, sep, watts = item.partition("=")
        if not sep:
            raise InputError(f"--set expects DOMAIN=WATTS, got {item!r}")
        try:
            domain, bound = DomainId.parse(label.strip()), float(watts)
        except ValueError as exc:
            raise InputError(f"bad --set {item!r}: {exc}")
        limit = PowerLimit(bound, window, enabled=True, clamping=args.clamp)
        if isinstance(backend, SimBackend) and args.dry_run:
            addr = MSR_ADDRESSES[domain.kind]["limit"]
            backend.check_limit(domain, limit)
            raw = encode_power_limit(limit, u, base=backend.read_register(domain.socket, addr))
            print(f"socket{domain.socket} msr {addr:#05x} <- {raw:#018x}  "
                  f"{domain} {describe_limit(decode_power_limit(raw, u))}")
        else:
            raw = backend.set_limit(domain, limit)
            if not args.dry_run:
                print(f"{domain} <- {raw:#018x}  {describe_limit(backend.get_limit(domain))}")
    return EXIT_OK


def cmd_profile(args) -> int:
    if args.profile_command == "list":
        for name in BUILTIN_PROFILES:
            p = load_profile(name)
            print(f"{name:<20} {p.kind.value:<10} max {p.max_performance:.10g}")
        return EXIT_OK
    print(json.dumps(profile_to_dict(load_profile(args.name)), indent=2))
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "profile-run": cmd_profile_run,
    "metrics": cmd_metrics,
    "trace": cmd_trace,
    "cdf": cmd_cdf,
    "optimize": cmd_optimize,
    "registers": cmd_registers,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (PermissionDenied, DomainUnavailable, BackendFailure) as exc:
        print(f"backend error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except SchemaError as exc:
        where = f" (field: {exc.field})" if exc.field else ""
        print(f"input error: {exc}{where}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, EmptyTrace, MissingEndpoints, LevelNotSampled, OutOfRange,
            Unrepresentable, ValueError) as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RaplError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
