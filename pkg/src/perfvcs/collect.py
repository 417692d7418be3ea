"""Profile producers.

Raw trace format (``.trace``), one event per line::

    E <uid> <thread_id> <timestamp_us>     function entry
    X <uid> <thread_id> <timestamp_us>     function exit
    # comment

Any instrumenter (or the bundled subjects) can write this format and
:func:`import_trace` turns it into inclusive and exclusive times per function.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import time
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO

from perfvcs.profile import (
    CollectionHeader,
    Profile,
    ResourceRecord,
    combine_workloads,
    merge_repetitions,
    utc_now,
)

log = logging.getLogger(__name__)

EVENT_KINDS = {"E": "entry", "X": "exit"}


class TraceError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CollectionError(RuntimeError):
    def __init__(self, message: str, stderr: str = ""):
        self.stderr = stderr
        super().__init__(message if not stderr else f"{message}\n{stderr.rstrip()}")


@dataclass(frozen=True)
class RawTraceEvent:
    kind: str  # "entry" | "exit"
    uid: str
    thread_id: int
    timestamp_us: int
    line: Optional[int] = None

    def format(self) -> str:
        tag = "E" if self.kind == "entry" else "X"
        return f"{tag} {self.uid} {self.thread_id} {self.timestamp_us}"


def parse_trace(lines: Iterable[str]) -> Iterator[RawTraceEvent]:
    """Yield events from raw trace lines, remembering their 1-based line numbers."""
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(" ")
        if len(parts) != 4 or parts[0] not in EVENT_KINDS or not parts[1]:
            raise TraceError(f"malformed event {line!r}", lineno)
        try:
            thread_id = int(parts[2])
            stamp = int(parts[3])
        except ValueError:
            raise TraceError(f"non-integer thread id or timestamp in {line!r}", lineno) from None
        if thread_id < 0 or stamp < 0:
            raise TraceError(f"negative thread id or timestamp in {line!r}", lineno)
        yield RawTraceEvent(EVENT_KINDS[parts[0]], parts[1], thread_id, stamp, lineno)


def read_trace(path) -> list[RawTraceEvent]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_trace(fh))


def write_trace(events: Iterable[RawTraceEvent], out: TextIO) -> None:
    for ev in events:
        out.write(ev.format() + "\n")


class _Frame:
    __slots__ = ("uid", "entered", "nested")

    def __init__(self, uid: str, entered: int):
        self.uid = uid
        self.entered = entered
        self.nested = 0  # inclusive time of directly nested frames


def import_trace(
    events: Iterable[RawTraceEvent],
    command: str,
    workload_size: Optional[int] = None,
    workload_label: str = "",
    collected_at: Optional[datetime] = None,
) -> Profile:
    """Aggregate entry/exit events into per-function inclusive and exclusive time.

    Every matched entry/exit pair is one call.  A frame's exclusive time is its
    inclusive time minus the inclusive time of the frames directly nested in
    it (same-uid frames included), so per thread the exclusive times of all
    functions add up to the inclusive time of the top-level frames.  Threads
    are summed.
    """
    stacks: dict[int, list[_Frame]] = {}
    last_stamp: dict[int, int] = {}
    inclusive: dict[str, int] = {}
    exclusive: dict[str, int] = {}
    calls: dict[str, int] = {}
    first_trace: dict[str, tuple[str, ...]] = {}

    for index, ev in enumerate(events, start=1):
        where = ev.line if ev.line is not None else index
        tid = ev.thread_id
        prev = last_stamp.get(tid)
        if prev is not None and ev.timestamp_us < prev:
            raise TraceError(
                f"timestamp regression on thread {tid}: {ev.timestamp_us} after {prev}", where
            )
        last_stamp[tid] = ev.timestamp_us
        stack = stacks.setdefault(tid, [])
        if ev.kind == "entry":
            if ev.uid not in first_trace:
                first_trace[ev.uid] = tuple(f.uid for f in stack)
            stack.append(_Frame(ev.uid, ev.timestamp_us))
            continue
        if ev.kind != "exit":
            raise TraceError(f"unknown event kind {ev.kind!r}", where)
        if not stack or stack[-1].uid != ev.uid:
            expected = stack[-1].uid if stack else "nothing"
            raise TraceError(f"unmatched exit of {ev.uid!r} on thread {tid} (open frame: {expected})", where)
        frame = stack.pop()
        spent = ev.timestamp_us - frame.entered
        inclusive[frame.uid] = inclusive.get(frame.uid, 0) + spent
        exclusive[frame.uid] = exclusive.get(frame.uid, 0) + spent - frame.nested
        calls[frame.uid] = calls.get(frame.uid, 0) + 1
        if stack:
            stack[-1].nested += spent

    dangling = sorted({f.uid for stack in stacks.values() for f in stack})
    if dangling:
        raise TraceError(f"unmatched entry at end of trace for: {', '.join(dangling)}")

    records = []
    for uid in first_trace:
        if uid not in calls:
            continue
        trace = first_trace[uid]
        records.append(ResourceRecord(uid, inclusive[uid], "inclusive", calls[uid], None, trace))
        records.append(ResourceRecord(uid, exclusive[uid], "exclusive", calls[uid], None, trace))
    header = CollectionHeader(
        collector_id="trace-import",
        command=command,
        workload_label=workload_label,
        workload_size=workload_size,
        collected_at=collected_at or utc_now(),
    )
    return Profile(header, records)


# -- time wrapper -----------------------------------------------------------


def _argv(command: str | Sequence[str]) -> list[str]:
    return shlex.split(command) if isinstance(command, str) else list(command)


def run_timed(command: str | Sequence[str], timeout: Optional[float] = None) -> tuple[int, float, str]:
    """Run ``command`` once; return (exit status, wall-clock µs, stderr).

    Raises :class:`subprocess.TimeoutExpired` on timeout and
    :class:`CollectionError` when the executable cannot be started.
    """
    argv = _argv(command)
    start = time.perf_counter_ns()
    try:
        proc = subprocess.run(
            argv,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
            timeout=timeout,
        )
    except (FileNotFoundError, PermissionError) as exc:
        raise CollectionError(f"cannot run {argv[0]!r}: {exc}") from None
    elapsed = (time.perf_counter_ns() - start) / 1000.0
    return proc.returncode, elapsed, proc.stderr.decode("utf-8", "replace")


def time_wrapper_collect(
    command: str,
    repetitions: int = 1,
    warmups: int = 0,
    timeout: Optional[float] = None,
    workload_label: str = "",
    workload_size: Optional[int] = None,
) -> Profile:
    """Time whole runs of ``command`` and merge the measured runs.

    Runs are strictly sequential.  Warm-up runs are executed and discarded.
    A measured run that exceeds ``timeout`` seconds is dropped and noted; the
    collection fails when more than half of the measured runs time out.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    if warmups < 0:
        raise ValueError("warmups must be nonnegative")

    runs: list[Profile] = []
    timeouts = 0
    for i in range(warmups + repetitions):
        measured = i >= warmups
        try:
            status, elapsed, stderr = run_timed(command, timeout)
        except subprocess.TimeoutExpired:
            if measured:
                timeouts += 1
                log.warning("run %d of %r timed out after %ss", i - warmups + 1, command, timeout)
            continue
        if status != 0:
            raise CollectionError(f"{command!r} exited with status {status}", stderr)
        if not measured:
            continue
        header = CollectionHeader(
            collector_id="time-wrapper",
            command=command,
            workload_label=workload_label,
            workload_size=workload_size,
        )
        # a whole run has no measured callees, so both kinds carry the same amount
        records = [ResourceRecord(command, elapsed, kind, 1) for kind in ("inclusive", "exclusive")]
        runs.append(Profile(header, records))

    if timeouts * 2 > repetitions or not runs:
        raise CollectionError(f"{timeouts} of {repetitions} measured runs of {command!r} timed out")
    merged = merge_repetitions(runs)
    if timeouts:
        notes = merged.header.notes + (f"{timeouts} of {repetitions} runs discarded after timeout ({timeout}s)",)
        merged = Profile(replace(merged.header, notes=notes), merged.resources)
    return merged


# -- scaled workloads -------------------------------------------------------

GENERATORS = ("repeated_line", "random_words", "integer_sequence")
_LINE = "the quick brown fox jumps over the lazy dog\n"
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class ScaledWorkloadSpec:
    generator: str
    sizes: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(self.sizes))
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if not self.sizes:
            raise ValueError("sizes must be nonempty")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("sizes must be positive")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _rng(seed: int, size: int):
    import numpy as np

    # one independent stream per size so adding sizes never changes other files
    return np.random.default_rng([seed, size])


def _repeated_line(size: int, seed: int) -> bytes:
    reps = size // len(_LINE) + 1
    return (_LINE * reps).encode("ascii")[:size]


def _random_words(size: int, seed: int) -> bytes:
    rng = _rng(seed, size)
    out = bytearray()
    col = 0
    while len(out) < size:
        word = "".join(_LETTERS[i] for i in rng.integers(0, 26, int(rng.integers(1, 10))))
        sep = "\n" if col >= 60 else " "
        col = 0 if sep == "\n" else col + len(word) + 1
        out += (word + sep).encode("ascii")
    return bytes(out[:size])


def _integer_sequence(count: int, seed: int) -> bytes:
    rng = _rng(seed, count)
    values = rng.integers(0, 1_000_000, count)
    return "".join(f"{int(v)}\n" for v in values).encode("ascii")


_GENERATE = {
    "repeated_line": _repeated_line,
    "random_words": _random_words,
    "integer_sequence": _integer_sequence,
}


def generate_workload(generator: str, size: int, seed: int = 0) -> bytes:
    """Content of one workload: ``size`` bytes, or ``size`` integers for integer_sequence."""
    return _GENERATE[generator](size, seed)


def generate_scaled_workloads(spec: ScaledWorkloadSpec, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    paths = []
    for size in spec.sizes:
        path = out / f"{spec.generator}-{size}.txt"
        path.write_bytes(generate_workload(spec.generator, size, spec.seed))
        paths.append(path)
    return paths


def scaled_collect(
    command_template: str,
    spec: ScaledWorkloadSpec,
    workload_dir,
    repetitions: int = 1,
    warmups: int = 0,
    timeout: Optional[float] = None,
    workload_label: str = "",
) -> Profile:
    """Time ``command_template`` on every generated workload size.

    The template's ``{workload}`` placeholder receives each workload path.
    Records are keyed by the template rather than the rendered command, so
    one uid spans all sizes and the result can be modelled directly.
    """
    if "{workload}" not in command_template:
        raise ValueError("command template must contain {workload}")
    label = workload_label or f"{spec.generator}:{spec.seed}"
    parts = []
    for size, path in zip(spec.sizes, generate_scaled_workloads(spec, workload_dir)):
        command = command_template.replace("{workload}", shlex.quote(str(path)))
        p = time_wrapper_collect(command, repetitions, warmups, timeout, label, size)
        records = [replace(r, uid=command_template) for r in p.resources]
        parts.append(Profile(replace(p.header, command=command_template), records))
    return combine_workloads(parts, label)
