import json
import random
import shutil
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfvcs.fuzz import (
    RULES,
    FuzzConfig,
    FuzzError,
    apply_rule,
    fuzz_loop,
    read_lineage,
    render_command,
    replay,
    write_report,
)

STUB = Path(__file__).parent / "fixtures" / "stub.py"
SAMPLE = b"b a 10\n 3 2 1\nx\n"


def hook(mode, seed_path=""):
    return f"{sys.executable} {STUB} {mode} {{workload}} {seed_path}".strip()


@pytest.fixture
def seed(tmp_path):
    path = tmp_path / "seed.txt"
    path.write_bytes(b"alpha beta\ngamma\n12 7 3\n")
    return path


def coverage_config(seed, out, mode="count", **kw):
    kw.setdefault("max_iterations", 40)
    return FuzzConfig([str(seed)], "true {workload}", fitness_mode="coverage_hook",
                      coverage_command=hook(mode, seed), out_dir=str(out), confirm=False, **kw)


# -- rules --------------------------------------------------------------------


@pytest.mark.parametrize(
    "rule, expected",
    [
        ("repeat_word", b"b a 10\n 3 3 3 3 3 3 3 3 2 1\nx\n"),
        ("double_line", b"b a 10\n 3 2 1 3 2 1\nx\n"),
        ("sort_line_tokens", b"b a 10\n 1 2 3\nx\n"),
        ("prepend_whitespace", b"b a 10\n         3 2 1\nx\n"),
        ("duplicate_line", b"b a 10\n 3 2 1\n 3 2 1\nx\n"),
        ("remove_line", b"b a 10\nx\n"),
        ("change_random_char", b"b a 10\n R 2 1\nx\n"),
    ],
)
def test_rule_golden(rule, expected):
    assert apply_rule(rule, SAMPLE, random.Random(7)) == expected


def test_sort_is_numeric_only_for_integers():
    lines = ["10 9 100"]
    RULES["sort_line_tokens"](lines, random.Random(0))
    assert lines == ["9 10 100"]
    lines = ["b 10 a"]
    RULES["sort_line_tokens"](lines, random.Random(0))
    assert lines == ["10 a b"]


@pytest.mark.parametrize("rule", sorted(RULES))
def test_empty_input_identity(rule):
    assert apply_rule(rule, b"", random.Random(1)) == b""


def test_unknown_rule():
    with pytest.raises(ValueError):
        apply_rule("shuffle", SAMPLE, random.Random(0))


text_lines = st.lists(st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=20), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(text_lines, st.sampled_from(sorted(RULES)), st.integers(0, 2**64 - 1))
def test_rules_deterministic_and_printable(lines, rule, draw):
    data = ("\n".join(lines) + "\n").encode()
    a = apply_rule(rule, data, random.Random(draw))
    assert a == apply_rule(rule, data, random.Random(draw))
    assert all(32 <= c <= 126 or c == 10 for c in a)


@settings(max_examples=100, deadline=None)
@given(text_lines, st.integers(0, 2**64 - 1))
def test_repeat_word_repeats_one_token(lines, draw):
    data = ("\n".join(lines) + "\n").encode()
    out = apply_rule("repeat_word", data, random.Random(draw))
    if not any(line.split() for line in lines):
        assert out == data
        return
    before, after = data.decode().split("\n"), out.decode().split("\n")
    changed = [i for i, (x, y) in enumerate(zip(before, after)) if x != y]
    assert len(before) == len(after) and len(changed) <= 1
    if changed:
        extra = len(after[changed[0]].split()) - len(before[changed[0]].split())
        assert 1 <= extra <= 15


@settings(max_examples=100, deadline=None)
@given(text_lines, st.lists(st.tuples(st.sampled_from(sorted(RULES)), st.integers(0, 2**64 - 1)), max_size=6))
def test_replay_matches_sequential_application(lines, steps):
    data = ("\n".join(lines) + "\n").encode()
    expected = data
    for rule, draw in steps:
        expected = apply_rule(rule, expected, random.Random(draw))
    assert replay(data, [(r, "p", d) for r, d in steps]) == expected


def test_render_command_quotes():
    assert render_command("cat {workload}", "a b.txt") == "cat 'a b.txt'"


@pytest.mark.parametrize(
    "kw",
    [dict(seed_workloads=[]), dict(command_template="cat"), dict(interest_threshold=1.0),
     dict(fitness_mode="coverage_hook"), dict(rules=["nope"]), dict(rng_seed=-1)],
)
def test_config_validation(seed, kw):
    base = dict(seed_workloads=[str(seed)], command_template="cat {workload}")
    with pytest.raises(ValueError):
        FuzzConfig(**(base | kw)).validate()


# -- loop -----------------------------------------------------------------------


def test_zero_budget_keeps_seeds_only(seed, tmp_path):
    report = fuzz_loop(coverage_config(seed, tmp_path / "out", max_iterations=0))
    assert [s.id for s in report.seeds] == ["seed"] and report.corpus == [] and report.executions == 0


def test_fixed_hook_fitness_ratio(seed, tmp_path):
    report = fuzz_loop(coverage_config(seed, tmp_path / "out", mode="fixed", max_iterations=10))
    assert report.corpus, "the first mutation doubles the count"
    assert {c.fitness for c in report.corpus} == {2.0}
    # children of a 2.0 candidate only reach 2.0 again, so they never pass 1.5x
    assert {c.parent for c in report.corpus} == {"seed"}


def test_coverage_mode_deterministic(seed, tmp_path):
    out = tmp_path / "out"
    runs = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        report = fuzz_loop(coverage_config(seed, out, workers=3))
        write_report(report, out, include_timing=False)
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0] == runs[1]
    assert "lineage.log" in runs[0] and "report.json" in runs[0]


def test_corpus_is_replayable_and_monotone(seed, tmp_path):
    out = tmp_path / "out"
    report = fuzz_loop(coverage_config(seed, out, max_iterations=60, max_rules_per_mutation=3))
    assert report.corpus
    seed_bytes = seed.read_bytes()
    lineage = read_lineage(out / "lineage.log")
    fitness = {c.id: c.fitness for c in report.seeds + report.corpus}
    for c in report.corpus:
        assert replay(seed_bytes, c.lineage) == Path(c.content_path).read_bytes()
        assert lineage[c.id] == c.lineage
        assert c.fitness > 1.5 * fitness[c.parent]
        assert c.size_bytes <= 10 * len(seed_bytes)
    ranks = [c.fitness for c in report.corpus]
    assert ranks == sorted(ranks, reverse=True)


def test_corpus_cap(seed, tmp_path):
    report = fuzz_loop(coverage_config(seed, tmp_path / "out", max_iterations=80, corpus_cap=3))
    assert len(report.corpus) <= 3
    assert len(list((tmp_path / "out").glob("w*.txt"))) == len(report.corpus)


def test_crashing_candidates_discarded(seed, tmp_path):
    cfg = FuzzConfig([str(seed)], hook("crash", seed), max_iterations=5, repetitions=1, out_dir=str(tmp_path / "o"))
    report = fuzz_loop(cfg)
    assert report.corpus == [] and report.discarded_crashes == report.executions > 0


def test_timeout_is_kept(seed, tmp_path):
    cfg = FuzzConfig([str(seed)], hook("slow", seed), max_iterations=3, repetitions=1, timeout_per_run=0.5,
                     stop_after_timeouts=1, out_dir=str(tmp_path / "o"))
    report = fuzz_loop(cfg)
    best = report.best()
    assert best is not None and best.timed_out and best.slowdown == float("inf")
    assert "timeout" in report.render_table()
    doc = json.loads(json.dumps(report.to_dict()))
    assert doc["corpus"][0]["slowdown"] == "inf"


def test_unrunnable_seed(tmp_path, seed):
    cfg = FuzzConfig([str(seed)], hook("crash"), max_iterations=1, repetitions=1, out_dir=str(tmp_path / "o"))
    with pytest.raises(FuzzError):
        fuzz_loop(cfg)
