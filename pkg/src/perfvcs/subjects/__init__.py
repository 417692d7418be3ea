"""Bundled test subjects, run as ``perfvcs subject regex|wordfreq WORKLOAD``.

Subjects are timed end to end, so this entry point imports only argparse and
the subject module it runs.
"""

from __future__ import annotations

import argparse
import sys


def add_subject_parsers(p: argparse.ArgumentParser) -> None:
    ss = p.add_subparsers(dest="subject", required=True)
    r = ss.add_parser("regex", help="naive backtracking matcher on each line")
    r.add_argument("workload")
    r.add_argument("--pattern", default=None)
    w = ss.add_parser("wordfreq", help="word counts in an open-addressing table")
    w.add_argument("workload")
    w.add_argument("--hash", choices=("sampled", "djb"), default="djb")
    w.add_argument("--trace", nargs="?", const="", default=None, help="write a trace (default <workload>.trace)")


def run_subject(args) -> int:
    if args.subject == "regex":
        from perfvcs.subjects import regex

        return regex.main(args.workload, args.pattern or regex.JAVA_CLASSNAME)
    from perfvcs.subjects import wordfreq

    trace = args.trace
    if trace == "":
        trace = args.workload + ".trace"
    return wordfreq.main(args.workload, args.hash, trace)


def main(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="perfvcs subject")
    add_subject_parsers(p)
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run_subject(args)
    except OSError as exc:
        print(f"perfvcs: error: {exc}", file=sys.stderr)
        return 2
