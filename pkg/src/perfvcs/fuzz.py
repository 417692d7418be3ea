"""Performance fuzzing of text workloads.

Each iteration picks a corpus member (weighted by fitness), applies one or
more mutation rules (weighted by each rule's success rate with Laplace
smoothing), and screens the result with one cheap run.  Candidates whose
fitness beats ``interest_threshold`` times their parent's fitness are
confirmed with a full measurement and join the corpus.

Fitness is either the runtime ratio against the root seed, or the ratio of a
visit count printed by an external coverage hook.  A run that hits the
per-run timeout is maximally interesting and is kept.

Every rule application draws a fresh 64-bit seed from the master RNG and
records it in the candidate's lineage, so :func:`replay` can regenerate any
corpus file from its root seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import shlex
import statistics
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from perfvcs.collect import CollectionError, run_timed

log = logging.getLogger(__name__)

# -- mutation rules -----------------------------------------------------------


def _pick_line(lines: list[str], rng: random.Random, want=None) -> Optional[int]:
    candidates = [i for i, line in enumerate(lines) if want is None or want(line)]
    return rng.choice(candidates) if candidates else None


def double_line(lines, rng):
    i = _pick_line(lines, rng)
    lines[i] = lines[i] + lines[i]


def repeat_word(lines, rng):
    i = _pick_line(lines, rng, lambda s: bool(s.split()))
    if i is None:
        return
    tok = rng.choice(list(re.finditer(r"\S+", lines[i])))
    times = rng.randint(2, 16)
    line = lines[i]
    lines[i] = line[: tok.start()] + " ".join([tok.group()] * times) + line[tok.end():]


def sort_line_tokens(lines, rng):
    i = _pick_line(lines, rng, lambda s: bool(s.split()))
    if i is None:
        return
    line = lines[i]
    tokens = line.split()
    try:
        tokens = [str(v) for v in sorted(int(t) for t in tokens)]
    except ValueError:
        tokens = sorted(tokens)
    indent = line[: len(line) - len(line.lstrip())]
    lines[i] = indent + " ".join(tokens)


def prepend_whitespace(lines, rng):
    i = _pick_line(lines, rng)
    lines[i] = " " * (2 ** rng.randint(1, 12)) + lines[i]


def duplicate_line(lines, rng):
    i = _pick_line(lines, rng)
    lines.insert(i + 1, lines[i])


def remove_line(lines, rng):
    i = _pick_line(lines, rng)
    del lines[i]


_PRINTABLE = [chr(c) for c in range(32, 127)]


def change_random_char(lines, rng):
    i = _pick_line(lines, rng, bool)
    if i is None:
        return
    line = lines[i]
    pos = rng.randrange(len(line))
    lines[i] = line[:pos] + rng.choice(_PRINTABLE) + line[pos + 1:]


RULES: dict[str, Callable] = {
    "double_line": double_line,
    "repeat_word": repeat_word,
    "sort_line_tokens": sort_line_tokens,
    "prepend_whitespace": prepend_whitespace,
    "duplicate_line": duplicate_line,
    "remove_line": remove_line,
    "change_random_char": change_random_char,
}


def apply_rule(rule: str, data: bytes, rng: random.Random) -> bytes:
    """Apply one mutation rule; deterministic for a given RNG state.  Empty input is returned unchanged."""
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    if not data:
        return data
    text = data.decode("utf-8")
    # a trailing newline terminates the last line rather than starting a new one
    trailing = text.endswith("\n")
    lines = (text[:-1] if trailing else text).split("\n")
    RULES[rule](lines, rng)
    out = "\n".join(lines)
    if trailing and lines:
        out += "\n"
    return out.encode("utf-8")


def replay(seed_data: bytes, lineage: Sequence[tuple[str, str, int]]) -> bytes:
    """Regenerate a candidate from its root seed and lineage ``(rule, parent, draw)``."""
    data = seed_data
    for rule, _parent, draw in lineage:
        data = apply_rule(rule, data, random.Random(draw))
    return data


# -- configuration and candidates ---------------------------------------------


@dataclass
class FuzzConfig:
    seed_workloads: Sequence[str]
    command_template: str
    max_iterations: int = 100
    max_seconds: Optional[float] = None
    fitness_mode: str = "runtime_ratio"  # or "coverage_hook"
    coverage_command: Optional[str] = None
    interest_threshold: float = 1.5
    timeout_per_run: float = 5.0
    rng_seed: int = 0
    repetitions: int = 3
    out_dir: str = "fuzz-out"
    corpus_cap: int = 64
    workers: int = 1
    max_rules_per_mutation: int = 1
    max_size_bytes: Optional[int] = None
    confirm: bool = True
    stop_after_timeouts: Optional[int] = None
    rules: Sequence[str] = tuple(RULES)

    def validate(self) -> None:
        if not self.seed_workloads:
            raise ValueError("at least one seed workload is required")
        if "{workload}" not in self.command_template:
            raise ValueError("command_template must contain {workload}")
        if self.max_iterations < 0 or (self.max_seconds is not None and self.max_seconds <= 0):
            raise ValueError("budget must be positive")
        if self.interest_threshold <= 1:
            raise ValueError("interest_threshold must be > 1")
        if self.fitness_mode not in ("runtime_ratio", "coverage_hook"):
            raise ValueError(f"unknown fitness mode {self.fitness_mode!r}")
        if self.fitness_mode == "coverage_hook" and not self.coverage_command:
            raise ValueError("coverage_hook mode needs coverage_command")
        if self.coverage_command and "{workload}" not in self.coverage_command:
            raise ValueError("coverage_command must contain {workload}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.timeout_per_run <= 0 or self.repetitions < 1 or self.corpus_cap < 1:
            raise ValueError("timeout, repetitions and corpus cap must be positive")
        unknown = set(self.rules) - set(RULES)
        if unknown:
            raise ValueError(f"unknown rules: {', '.join(sorted(unknown))}")


@dataclass
class FuzzCandidate:
    id: str
    content_path: str
    lineage: list[tuple[str, str, int]]
    size_bytes: int
    fitness: float
    root: str
    parent: Optional[str] = None
    runtime_us: Optional[float] = None
    slowdown: Optional[float] = None
    timed_out: bool = False
    iteration: int = 0

    @property
    def is_seed(self) -> bool:
        return self.parent is None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "content_path": self.content_path,
            "parent": self.parent,
            "root": self.root,
            "lineage": [list(step) for step in self.lineage],
            "size_bytes": self.size_bytes,
            "runtime_us": self.runtime_us,
            "slowdown": _json_float(self.slowdown),
            "fitness": _json_float(self.fitness),
            "timed_out": self.timed_out,
            "iteration": self.iteration,
        }


def _json_float(v: Optional[float]):
    if v is None or math.isfinite(v):
        return v
    return "inf"


@dataclass
class FuzzReport:
    seeds: list[FuzzCandidate]
    corpus: list[FuzzCandidate]
    rule_stats: dict[str, dict[str, int]]
    iterations: int
    executions: int
    discarded_crashes: int
    mode: str
    elapsed_s: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "mode": self.mode,
            "iterations": self.iterations,
            "executions": self.executions,
            "discarded_crashes": self.discarded_crashes,
            "seeds": [c.to_dict() for c in self.seeds],
            "corpus": [c.to_dict() for c in self.corpus],
            "rule_stats": self.rule_stats,
        }
        if include_timing:
            d["elapsed_s"] = round(self.elapsed_s, 3)
        return d

    def best(self) -> Optional[FuzzCandidate]:
        return self.corpus[0] if self.corpus else None

    def render_table(self) -> str:
        rows = [("input", "size [B]", "time [s]", "slowdown", "used rules")]
        for c in self.seeds:
            rows.append((c.id, str(c.size_bytes), _fmt_time(c), "-", "-"))
        for c in self.corpus:
            slowdown = "inf" if c.timed_out else "-" if c.slowdown is None else f"{c.slowdown:.1f}"
            rows.append((c.id, str(c.size_bytes), _fmt_time(c), slowdown, str(len(c.lineage))))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = []
        for n, r in enumerate(rows):
            cells = [r[0].ljust(widths[0])] + [r[i].rjust(widths[i]) for i in range(1, 5)]
            lines.append(" | ".join(cells))
            if n == 0:
                lines.append("-+-".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _fmt_time(c: FuzzCandidate) -> str:
    if c.timed_out:
        return "timeout"
    if c.runtime_us is None:
        return "-"
    return f"{c.runtime_us / 1e6:.3f}"


# -- running the subject --------------------------------------------------------


class CrashedRun(RuntimeError):
    pass


def render_command(template: str, workload: str | Path) -> str:
    return template.replace("{workload}", shlex.quote(str(workload)))


@dataclass
class ScreenResult:
    fitness: float
    runtime_us: Optional[float] = None
    timed_out: bool = False


def _coverage_count(config: FuzzConfig, path) -> Optional[int]:
    """Visit count printed by the hook, or None on timeout."""
    argv = shlex.split(render_command(config.coverage_command, path))
    try:
        proc = subprocess.run(argv, stdin=subprocess.DEVNULL, capture_output=True, text=True,
                              timeout=config.timeout_per_run)
    except subprocess.TimeoutExpired:
        return None
    except OSError as exc:
        raise CollectionError(f"cannot run coverage hook: {exc}") from None
    if proc.returncode != 0:
        raise CrashedRun(f"coverage hook exited with {proc.returncode}: {proc.stderr.strip()}")
    numbers = re.findall(r"-?\d+", proc.stdout)
    if len(numbers) != 1:
        raise CollectionError(f"coverage hook must print exactly one integer, got {proc.stdout.strip()!r}")
    return int(numbers[0])


def _timed_run(config: FuzzConfig, path) -> Optional[float]:
    """Wall-clock µs of one run, None on timeout."""
    try:
        status, elapsed, stderr = run_timed(render_command(config.command_template, path), config.timeout_per_run)
    except subprocess.TimeoutExpired:
        return None
    if status != 0:
        raise CrashedRun(f"exit status {status}: {stderr.strip()[:200]}")
    return elapsed


def screen(candidate_path, config: FuzzConfig, seed_value: float) -> ScreenResult:
    """Cheap fitness of one candidate relative to its root seed's value.

    ``seed_value`` is the seed runtime (µs) in runtime_ratio mode and the
    seed's visit count in coverage_hook mode.  Raises :class:`CrashedRun` for a
    nonzero exit status.
    """
    if config.fitness_mode == "coverage_hook":
        count = _coverage_count(config, candidate_path)
        if count is None:
            return ScreenResult(math.inf, timed_out=True)
        return ScreenResult(count / seed_value if seed_value else (math.inf if count else 1.0))
    elapsed = _timed_run(config, candidate_path)
    if elapsed is None:
        return ScreenResult(math.inf, timed_out=True)
    return ScreenResult(elapsed / seed_value, runtime_us=elapsed)


def measure(config: FuzzConfig, path) -> Optional[float]:
    """Median runtime over ``config.repetitions`` runs; None when any run times out."""
    times = []
    for _ in range(config.repetitions):
        t = _timed_run(config, path)
        if t is None:
            return None
        times.append(t)
    return statistics.median(times)


# -- the loop -------------------------------------------------------------------


class FuzzError(RuntimeError):
    pass


_SKIPPED = object()  # oversized or duplicate candidate, never run


class _Fuzzer:
    def __init__(self, config: FuzzConfig):
        config.validate()
        self.cfg = config
        self.rng = random.Random(config.rng_seed)
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds: list[FuzzCandidate] = []
        self.corpus: list[FuzzCandidate] = []
        self.content: dict[str, bytes] = {}
        self.seed_value: dict[str, float] = {}
        self.seen: set[str] = set()
        self.stats = {r: {"trials": 0, "successes": 0} for r in config.rules}
        self.executions = 0
        self.crashes = 0
        self.admitted = 0
        self.timeouts = 0

    def _write(self, cid: str, data: bytes) -> str:
        path = self.out / f"{cid}.txt"
        path.write_bytes(data)
        return str(path)

    def load_seeds(self) -> None:
        cfg = self.cfg
        failures = []
        for n, src in enumerate(cfg.seed_workloads):
            data = Path(src).read_bytes()
            cid = "seed" if n == 0 else f"seed{n}"
            path = self._write(cid, data)
            try:
                if cfg.fitness_mode == "coverage_hook":
                    value = _coverage_count(cfg, path)
                    if value is None:
                        raise CrashedRun("coverage hook timed out on the seed")
                    runtime = measure(cfg, path) if cfg.confirm else None
                else:
                    runtime = measure(cfg, path)
                    if runtime is None:
                        raise CrashedRun("seed run timed out")
                    value = runtime
            except (CrashedRun, CollectionError) as exc:
                failures.append(f"{src}: {exc}")
                continue
            seed = FuzzCandidate(cid, path, [], len(data), 1.0, cid, runtime_us=runtime)
            self.seeds.append(seed)
            self.content[cid] = data
            self.seed_value[cid] = value
            self.seen.add(hashlib.sha256(data).hexdigest())
        if not self.seeds:
            raise FuzzError("no seed workload could be run:\n" + "\n".join(failures))
        limit = cfg.max_size_bytes
        self.max_size = limit if limit is not None else 10 * max(s.size_bytes for s in self.seeds)

    def parents(self) -> list[FuzzCandidate]:
        return [c for c in self.seeds + self.corpus if not c.timed_out]

    def pick_rule(self) -> str:
        rules = list(self.cfg.rules)
        weights = [(self.stats[r]["successes"] + 1) / (self.stats[r]["trials"] + 2) for r in rules]
        return self.rng.choices(rules, weights)[0]

    def mutate(self):
        pool = self.parents()
        if not pool:
            return None
        parent = self.rng.choices(pool, [c.fitness for c in pool])[0]
        data = self.content[parent.id]
        steps = []
        for _ in range(self.rng.randint(1, self.cfg.max_rules_per_mutation)):
            rule = self.pick_rule()
            draw = self.rng.getrandbits(64)
            data = apply_rule(rule, data, random.Random(draw))
            steps.append((rule, parent.id, draw))
        return parent, steps, data

    def consider(self, iteration: int, parent: FuzzCandidate, steps, data: bytes, result) -> None:
        """Record rule statistics and admit the candidate when interesting."""
        for rule, _, _ in steps:
            self.stats[rule]["trials"] += 1
        if result is None or not result.fitness > self.cfg.interest_threshold * parent.fitness:
            return
        cfg = self.cfg
        self.admitted += 1
        cid = f"w{self.admitted}"
        path = self._write(cid, data)
        root = parent.root
        cand = FuzzCandidate(cid, path, parent.lineage + steps, len(data), result.fitness, root,
                             parent=parent.id, timed_out=result.timed_out, iteration=iteration)
        seed = next(s for s in self.seeds if s.id == root)
        if result.timed_out:
            cand.slowdown = math.inf
        elif cfg.confirm:
            runtime = measure(cfg, path)
            if runtime is None:
                cand.timed_out, cand.slowdown = True, math.inf
            else:
                cand.runtime_us = runtime
                cand.slowdown = runtime / seed.runtime_us if seed.runtime_us else None
        if cand.timed_out:
            self.timeouts += 1
        for rule, _, _ in steps:
            self.stats[rule]["successes"] += 1
        self.corpus.append(cand)
        self.content[cid] = data
        self._evict()
        log.info("admitted %s (fitness %.2f, %d B) after %d iterations", cid, result.fitness, len(data), iteration)

    def _evict(self) -> None:
        while len(self.corpus) > self.cfg.corpus_cap:
            victim = min(self.corpus, key=lambda c: (_rank(c), -self.corpus.index(c)))
            self.corpus.remove(victim)
            del self.content[victim.id]
            Path(victim.content_path).unlink(missing_ok=True)

    def _screen(self, data: bytes, parent: FuzzCandidate, scratch: str):
        path = self.out / f".{scratch}.txt"
        path.write_bytes(data)
        try:
            return screen(path, self.cfg, self.seed_value[parent.root])
        except CrashedRun as exc:
            log.info("discarded crashing candidate: %s", exc)
            return None
        finally:
            path.unlink(missing_ok=True)

    def _fresh(self, data: bytes) -> bool:
        if len(data) > self.max_size:
            return False
        digest = hashlib.sha256(data).hexdigest()
        if digest in self.seen:
            return False
        self.seen.add(digest)
        return True

    def run(self) -> FuzzReport:
        cfg = self.cfg
        start = time.monotonic()
        self.load_seeds()
        iteration = 0
        parallel = cfg.fitness_mode == "coverage_hook" and cfg.workers > 1
        pool = ThreadPoolExecutor(cfg.workers) if parallel else None
        try:
            while iteration < cfg.max_iterations:
                if cfg.max_seconds is not None and time.monotonic() - start > cfg.max_seconds:
                    break
                if cfg.stop_after_timeouts is not None and self.timeouts >= cfg.stop_after_timeouts:
                    break
                batch = []
                for _ in range(cfg.workers if parallel else 1):
                    if iteration >= cfg.max_iterations:
                        break
                    iteration += 1
                    mutation = self.mutate()
                    if mutation is None:
                        break
                    batch.append((iteration, *mutation))
                if not batch:
                    break
                jobs = []
                for it, parent, steps, data in batch:
                    if self._fresh(data):
                        self.executions += 1
                        if pool:
                            jobs.append(pool.submit(self._screen, data, parent, f"screen{it}"))
                        else:
                            jobs.append(self._screen(data, parent, f"screen{it}"))
                    else:
                        jobs.append(_SKIPPED)
                for (it, parent, steps, data), job in zip(batch, jobs):
                    if job is _SKIPPED:
                        result = None
                    else:
                        result = job.result() if pool else job
                        if result is None:
                            self.crashes += 1
                    self.consider(it, parent, steps, data, result)
        finally:
            if pool:
                pool.shutdown()
        corpus = sorted(self.corpus, key=lambda c: (-_rank(c), int(c.id[1:])))
        self._write_lineage(corpus)
        return FuzzReport(self.seeds, corpus, self.stats, iteration, self.executions, self.crashes,
                          cfg.fitness_mode, time.monotonic() - start)

    def _write_lineage(self, corpus: list[FuzzCandidate]) -> None:
        with open(self.out / "lineage.log", "w", encoding="utf-8") as fh:
            fh.write("# id root parent rule:parent:draw ...\n")
            for c in sorted(corpus, key=lambda c: int(c.id[1:])):
                steps = " ".join(f"{r}:{p}:{d}" for r, p, d in c.lineage)
                fh.write(f"{c.id} {c.root} {c.parent} {steps}\n")


def _rank(c: FuzzCandidate) -> float:
    if c.timed_out:
        return math.inf
    return c.slowdown if c.slowdown is not None else c.fitness


def fuzz_loop(config: FuzzConfig) -> FuzzReport:
    return _Fuzzer(config).run()


def write_report(report: FuzzReport, out_dir, include_timing: bool = True) -> None:
    out = Path(out_dir)
    (out / "report.json").write_text(json.dumps(report.to_dict(include_timing), indent=2) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.render_table(), encoding="utf-8")


def read_lineage(path) -> dict[str, list[tuple[str, str, int]]]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        cid, _root, _parent, *steps = line.split(" ")
        out[cid] = [(r, p, int(d)) for r, p, d in (s.split(":") for s in steps)]
    return out
