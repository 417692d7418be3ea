"""Command-line interface.

Exit codes: 0 success (no degradation), 1 degradation found by ``check``,
2 usage or data error.  Machine-readable output goes to stdout, diagnostics
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK, EXIT_DEGRADATION, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    """Bad input that is not an argparse syntax error; exits with 2."""


def _err(msg: str) -> None:
    print(f"perfvcs: {msg}", file=sys.stderr)


# -- helpers ------------------------------------------------------------------


def _store(args):
    from perfvcs.store import Store

    return Store.open(args.repo, args.store)


def _warn_dirty(store) -> None:
    if store.vcs.is_dirty():
        _err("warning: work tree has uncommitted changes; the profile is registered at HEAD anyway")


def _load(store, ref: str):
    """A profile from a digest (or unique prefix) or a profile file path."""
    from perfvcs.profile import load_profile

    if os.path.isfile(ref):
        return load_profile(ref), ref
    digest = store.resolve_digest(ref)
    return store.load(digest), digest


def _register(store, profile, args) -> str:
    digest = store.register_profile(profile, store.vcs.head())
    print(digest)
    return digest


def _thresholds(store, args):
    from perfvcs.detect import DetectionThresholds

    values = {}
    if store is not None:
        cp = store.config()
        if cp.has_section("thresholds"):
            values.update(cp["thresholds"])
    for name in ("z_limit", "iqr_multiplier", "stddev_limit", "integral_maybe", "integral_degradation", "cutoff_rel"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return DetectionThresholds.from_mapping(values)


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands -----------------------------------------------------------------


def cmd_init(args) -> int:
    from perfvcs.store import Store

    store = Store.init(args.repo, args.store)
    print(f"initialized store at {store.path}")
    return EXIT_OK


def cmd_status(args) -> int:
    store = _store(args)
    head = store.vcs.head()
    entry = store.lookup(head)
    print(f"{len(entry.registrations)} profiles registered at {head}")
    for r in entry.registrations:
        label = f" [{r.workload_label}]" if r.workload_label else ""
        print(f"  {r.digest} {r.collector_id}{label} {r.registered_at:%Y-%m-%dT%H:%M:%SZ}")
    return EXIT_OK


def cmd_log(args) -> int:
    store = _store(args)
    for commit in store.vcs.first_parents(store.vcs.head(), limit=args.max_count):
        n = len(store.lookup(commit).registrations)
        print(f"{commit} {n} profile{'s' if n != 1 else ''}")
    return EXIT_OK


def cmd_collect(args) -> int:
    from perfvcs.collect import ScaledWorkloadSpec, scaled_collect, time_wrapper_collect

    store = _store(args)
    _warn_dirty(store)
    if args.scaled:
        if not args.sizes:
            raise UsageError("--scaled needs --sizes")
        spec = ScaledWorkloadSpec(args.scaled, args.sizes, args.seed)
        workload_dir = args.workload_dir or store.path / "workloads"
        profile = scaled_collect(args.cmd, spec, workload_dir, args.reps, args.warmups, args.timeout,
                                 args.workload_label)
    else:
        profile = time_wrapper_collect(args.cmd, args.reps, args.warmups, args.timeout, args.workload_label,
                                       args.workload_size)
    for note in profile.header.notes:
        _err(f"note: {note}")
    _register(store, profile, args)
    return EXIT_OK


def cmd_import(args) -> int:
    from perfvcs.collect import import_trace, read_trace
    from perfvcs.profile import combine_workloads

    store = _store(args)
    _warn_dirty(store)
    sizes = args.workload_size or []
    if len(args.trace) > 1 and len(sizes) != len(args.trace):
        raise UsageError("several traces need one --workload-size per trace")
    profiles = []
    for i, path in enumerate(args.trace):
        size = sizes[i] if i < len(sizes) else None
        profiles.append(import_trace(read_trace(path), args.cmd, size, args.workload_label))
    profile = profiles[0] if len(profiles) == 1 else combine_workloads(profiles)
    _register(store, profile, args)
    return EXIT_OK


def cmd_check(args) -> int:
    from perfvcs.detect import check_profiles, render_report
    from perfvcs.store import BaselineSelector, NoBaselineError

    store = _store(args)
    t = _thresholds(store, args)
    if args.mode == "head":
        if args.refs:
            raise UsageError("check head takes no positional profiles")
        selector = BaselineSelector.parse(args.baseline_selector)
        head = store.vcs.head()
        reg = store.lookup(head).newest(args.collector, args.workload_label)
        if reg is None:
            raise UsageError(f"no matching profiles registered at {head[:12]}; run collect or import first")
        try:
            base_commit = store.find_baseline(head, selector)
        except NoBaselineError as exc:
            raise UsageError(f"{exc}; register a profile at the baseline commit or pick another "
                             "--baseline-selector") from None
        base_reg = store.lookup(base_commit).newest(reg.collector_id, reg.workload_label)
        if base_reg is None:
            raise UsageError(f"no {reg.collector_id} profile for workload {reg.workload_label!r} "
                             f"at baseline {base_commit[:12]}")
        baseline, target = store.load(base_reg.digest), store.load(reg.digest)
        base_id = f"{base_commit[:12]}:{base_reg.digest[:12]}"
        target_id = f"{head[:12]}:{reg.digest[:12]}"
    else:
        if len(args.refs) != 2:
            raise UsageError("check profiles needs BASELINE and TARGET")
        baseline, base_id = _load(store, args.refs[0])
        target, target_id = _load(store, args.refs[1])
    report = check_profiles(baseline, target, args.method, t, base_id, target_id)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        sys.stdout.write(render_report(report))
    return EXIT_DEGRADATION if report.has_degradation() else EXIT_OK


def cmd_model(args) -> int:
    from perfvcs.models import fit_profile

    store = _store(args)
    profile, digest = _load(store, args.digest)
    fitted = fit_profile(profile, args.method, args.kind, args.bins, args.window, args.bandwidth)
    if not fitted:
        raise UsageError("no independent variable: no uid has enough records with a workload size")
    new = [m for uid in fitted for m in fitted[uid]]
    families = {m.family for m in new}
    kept = [m for m in profile.models if not (m.uid in fitted and m.family in families)]
    modelled = replace(profile, models=tuple(kept + new))
    for uid, models in fitted.items():
        best = models[0]
        _err(f"{uid}: {best.describe()} r2={best.r_squared:.4f}")
    commits = store.commits_with(digest) if len(digest) == 64 else []
    if not commits:
        commits = [store.vcs.head()]
    for commit in commits:
        new_digest = store.register_profile(modelled, commit)
    print(new_digest)
    return EXIT_OK


def cmd_fuzz(args) -> int:
    from perfvcs.fuzz import FuzzConfig, fuzz_loop, write_report

    config = FuzzConfig(
        seed_workloads=args.seed,
        command_template=args.cmd,
        max_iterations=args.iterations,
        max_seconds=args.max_seconds,
        fitness_mode="coverage_hook" if args.coverage_cmd else "runtime_ratio",
        coverage_command=args.coverage_cmd,
        interest_threshold=args.threshold,
        timeout_per_run=args.timeout,
        rng_seed=args.rng_seed,
        repetitions=args.reps,
        out_dir=args.out,
        corpus_cap=args.corpus_cap,
        workers=args.workers,
        max_rules_per_mutation=args.max_rules,
        confirm=not args.no_confirm,
        stop_after_timeouts=args.stop_after_timeouts,
    )
    report = fuzz_loop(config)
    write_report(report, args.out, include_timing=config.confirm)
    sys.stdout.write(report.render_table())
    return EXIT_OK


def cmd_show(args) -> int:
    from perfvcs import report as emit

    store = None
    if not os.path.isfile(args.profile):
        store = _store(args)
    profile, _ = _load(store, args.profile)
    if args.kind == "scatter":
        uids = [args.uid] if args.uid else sorted({m.uid for m in profile.models})
        if not uids:
            raise UsageError("scatter needs --uid when the profile has no models")
        out = Path(args.output or "scatter")
        if len(uids) == 1 and out.suffix == ".svg":
            emit.emit_scatter(profile, uids[0], out, args.record_kind)
            print(out)
            return EXIT_OK
        out.mkdir(parents=True, exist_ok=True)
        for uid in uids:
            path = out / (_safe_name(uid) + ".svg")
            emit.emit_scatter(profile, uid, path, args.record_kind)
            print(path)
        return EXIT_OK
    if args.kind == "flame":
        text = emit.folded_stacks(profile)
    else:
        text = emit.bars_csv(profile, args.group_by)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(args.output)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _safe_name(uid: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in uid)[:100] or "uid"


def cmd_subject(args) -> int:
    from perfvcs.subjects import run_subject

    return run_subject(args)


def cmd_fsck(args) -> int:
    store = _store(args)
    problems = store.fsck()
    for p in problems:
        print(p)
    if problems:
        _err(f"{len(problems)} problems found")
        return EXIT_ERROR
    print("ok")
    return EXIT_OK


def cmd_workloads(args) -> int:
    from perfvcs.collect import ScaledWorkloadSpec, generate_scaled_workloads

    spec = ScaledWorkloadSpec(args.generator, args.sizes, args.seed)
    for path in generate_scaled_workloads(spec, args.out_dir):
        print(path)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _threshold_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("thresholds (defaults from .perfvcs/config)")
    g.add_argument("--z-limit", dest="z_limit", type=float)
    g.add_argument("--iqr-multiplier", dest="iqr_multiplier", type=float)
    g.add_argument("--stddev-limit", dest="stddev_limit", type=float)
    g.add_argument("--integral-maybe", dest="integral_maybe", type=float)
    g.add_argument("--integral-degradation", dest="integral_degradation", type=float)
    g.add_argument("--cutoff", dest="cutoff_rel", type=float, help="hide rows with |Δ%%| below this")


def build_parser() -> argparse.ArgumentParser:
    from perfvcs import __version__
    from perfvcs.detect import METHODS
    from perfvcs.subjects import add_subject_parsers

    parser = argparse.ArgumentParser(prog="perfvcs", description="Performance profiles versioned alongside git commits.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-C", dest="repo", default=".", help="run as if started in this directory")
    parser.add_argument("--store", default=None, help="store directory (default: $PERFVCS_DIR or <repo>/.perfvcs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("init", help="create the profile store")
    p.set_defaults(func=cmd_init)
    p = sub.add_parser("status", help="profiles registered at HEAD")
    p.set_defaults(func=cmd_status)
    p = sub.add_parser("log", help="registration counts along first-parent history")
    p.add_argument("-n", "--max-count", type=int, default=None)
    p.set_defaults(func=cmd_log)

    p = sub.add_parser("collect", help="time a command and register the profile at HEAD")
    p.add_argument("--cmd", required=True)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmups", type=int, default=0)
    p.add_argument("--timeout", type=float, default=None, help="seconds per run")
    p.add_argument("--workload-label", default="")
    p.add_argument("--workload-size", type=int, default=None)
    p.add_argument("--scaled", metavar="GENERATOR", help="generate workloads and run --cmd on each ({workload})")
    p.add_argument("--sizes", type=_sizes, help="comma-separated workload sizes for --scaled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workload-dir", default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("import", help="aggregate raw traces and register the profile at HEAD")
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--cmd", required=True, help="command the trace came from")
    p.add_argument("--workload-size", type=int, action="append")
    p.add_argument("--workload-label", default="")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("check", help="compare a baseline and a target profile")
    p.add_argument("mode", choices=("head", "profiles"))
    p.add_argument("refs", nargs="*", metavar="PROFILE", help="digests or files (profiles mode)")
    p.add_argument("--method", choices=METHODS, default="exclusive_time_outliers")
    p.add_argument("--baseline-selector", default="parent", help="parent | nth_ancestor:K | explicit:REV")
    p.add_argument("--collector", default=None, help="target collector id (head mode)")
    p.add_argument("--workload-label", default=None, help="target workload label (head mode)")
    p.add_argument("--format", choices=("table", "json"), default="table")
    _threshold_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("model", help="fit performance models and register the modelled profile")
    p.add_argument("--digest", required=True)
    p.add_argument("--method", choices=("parametric", "regressogram", "moving_average", "kernel"), default="parametric")
    p.add_argument("--kind", choices=("inclusive", "exclusive"), default="inclusive")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--bandwidth", type=float, default=0.0, help="0 selects Silverman's rule")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("fuzz", help="mutate workloads looking for slow inputs")
    p.add_argument("--seed", action="append", required=True, help="seed workload file (repeatable)")
    p.add_argument("--cmd", required=True, help="command template with {workload}")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--max-seconds", type=float, default=None)
    p.add_argument("--coverage-cmd", default=None, help="hook printing a visit count; enables coverage mode")
    p.add_argument("--threshold", type=float, default=1.5)
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default="fuzz-out")
    p.add_argument("--corpus-cap", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-rules", type=int, default=1, help="rule applications per mutation")
    p.add_argument("--stop-after-timeouts", type=int, default=None)
    p.add_argument("--no-confirm", action="store_true", help="skip runtime confirmation (coverage mode)")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("show", help="write a scatter plot, folded stacks or bar data")
    p.add_argument("profile", help="digest, prefix or profile file")
    p.add_argument("--kind", choices=("scatter", "flame", "bars"), required=True)
    p.add_argument("--uid")
    p.add_argument("--group-by", choices=("uid", "workload_size"), default="uid")
    p.add_argument("--record-kind", choices=("inclusive", "exclusive"), default="inclusive")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("subject", help="run a bundled test subject")
    add_subject_parsers(p)
    p.set_defaults(func=cmd_subject)

    p = sub.add_parser("fsck", help="verify objects and index")
    p.set_defaults(func=cmd_fsck)

    p = sub.add_parser("workloads", help="generate scaled workload files")
    p.add_argument("--generator", required=True)
    p.add_argument("--sizes", type=_sizes, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="workloads")
    p.set_defaults(func=cmd_workloads)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["subject"]:
        from perfvcs.subjects import main as subject_main

        return subject_main(argv[1:])
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    return _dispatch(args.func, args)


def _dispatch(func, args) -> int:
    from perfvcs.collect import CollectionError, TraceError
    from perfvcs.fuzz import FuzzError
    from perfvcs.models import ModelError
    from perfvcs.profile import ProfileError
    from perfvcs.store import StoreError
    from perfvcs.vcs import VcsError

    try:
        return func(args)
    except TraceError as exc:
        where = f"line {exc.line}: " if exc.line is not None else ""
        _err(f"error: bad trace: {where}{exc.args[0]}")
    except CollectionError as exc:
        _err(f"error: {exc}")
        if exc.stderr:
            sys.stderr.write(exc.stderr)
    except (UsageError, StoreError, VcsError, ProfileError, ModelError, FuzzError, ValueError, OSError) as exc:
        _err(f"error: {exc}")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
