import io
import random
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfvcs.collect import (
    CollectionError,
    RawTraceEvent,
    ScaledWorkloadSpec,
    TraceError,
    generate_scaled_workloads,
    generate_workload,
    import_trace,
    parse_trace,
    scaled_collect,
    time_wrapper_collect,
    write_trace,
)
from perfvcs.profile import serialize_profile


def events(text):
    return list(parse_trace(text.strip().splitlines()))


def amounts(p):
    return {(r.uid, r.kind): (r.amount_us, r.call_count) for r in p.resources}


FOUR = """
E f 0 0
E g 0 10
X g 0 30
X f 0 50
"""


class TestImport:
    def test_nested_pair(self):
        p = import_trace(events(FOUR), "prog")
        assert amounts(p) == {
            ("f", "inclusive"): (50, 1), ("f", "exclusive"): (30, 1),
            ("g", "inclusive"): (20, 1), ("g", "exclusive"): (20, 1),
        }
        assert {r.uid: r.trace for r in p.resources} == {"f": (), "g": ("f",)}
        assert p.header.collector_id == "trace-import"

    def test_single_call(self):
        p = import_trace(events("E f 0 0\nX f 0 7"), "prog")
        assert amounts(p) == {("f", "inclusive"): (7, 1), ("f", "exclusive"): (7, 1)}

    def test_self_recursion(self):
        p = import_trace(events("E f 0 0\nE f 0 2\nX f 0 5\nX f 0 10"), "prog")
        assert amounts(p) == {("f", "inclusive"): (13, 2), ("f", "exclusive"): (10, 2)}

    def test_threads_are_summed(self):
        p = import_trace(events("E f 0 0\nE f 1 5\nX f 0 10\nX f 1 8"), "prog")
        assert amounts(p)[("f", "exclusive")] == (13, 2)

    def test_comments_and_blank_lines(self):
        assert len(events("# header\n\nE f 0 1\n# mid\nX f 0 2")) == 2

    def test_unmatched_exit_reports_line(self):
        with pytest.raises(TraceError) as err:
            import_trace(events("E f 0 0\nX g 0 1"), "prog")
        assert err.value.line == 2

    def test_dangling_entry(self):
        with pytest.raises(TraceError, match="f, g"):
            import_trace(events("E f 0 0\nE g 0 1"), "prog")

    def test_timestamp_regression(self):
        with pytest.raises(TraceError, match="regression") as err:
            import_trace(events("E f 0 5\nX f 0 4"), "prog")
        assert err.value.line == 2

    @pytest.mark.parametrize("line", ["E f 0", "Q f 0 1", "E f x 1", "E f 0 -1", "E  f 0 1"])
    def test_malformed_lines(self, line):
        with pytest.raises(TraceError) as err:
            list(parse_trace(["# ok", line]))
        assert err.value.line == 2

    def test_write_parse_round_trip(self):
        evs = events(FOUR)
        buf = io.StringIO()
        write_trace(evs, buf)
        assert [(e.kind, e.uid, e.thread_id, e.timestamp_us) for e in parse_trace(buf.getvalue().splitlines())] == [
            (e.kind, e.uid, e.thread_id, e.timestamp_us) for e in evs]


# -- brute-force oracle -------------------------------------------------------


def random_trace(rng, max_events=200, uids="abcdef", threads=2):
    """Balanced random trace; returns the events in file order."""
    per_thread = []
    for tid in range(threads):
        evs, stack, t = [], [], 0
        budget = rng.randrange(0, max_events // (2 * threads) + 1)
        opened = 0
        while opened < budget or stack:
            t += rng.randrange(0, 5)
            if opened < budget and (not stack or rng.random() < 0.55):
                uid = rng.choice(uids)
                stack.append(uid)
                evs.append(RawTraceEvent("entry", uid, tid, t))
                opened += 1
            else:
                evs.append(RawTraceEvent("exit", stack.pop(), tid, t))
        per_thread.append(evs)
    # interleave threads, keeping per-thread order
    out = []
    while any(per_thread):
        live = [q for q in per_thread if q]
        out.append(rng.choice(live).pop(0))
    return out


def oracle(evs):
    """Per-call interval bookkeeping, independent of the importer's frame stack."""
    calls = []  # (uid, tid, start, end, depth, parent index)
    open_calls = {}
    for e in evs:
        stack = open_calls.setdefault(e.thread_id, [])
        if e.kind == "entry":
            calls.append([e.uid, e.thread_id, e.timestamp_us, None, len(stack), stack[-1] if stack else None])
            stack.append(len(calls) - 1)
        else:
            calls[stack.pop()][3] = e.timestamp_us
    inc, exc, cnt = {}, {}, {}
    for i, (uid, tid, start, end, depth, parent) in enumerate(calls):
        children = sum(c[3] - c[2] for c in calls if c[5] == i)
        inc[uid] = inc.get(uid, 0) + end - start
        exc[uid] = exc.get(uid, 0) + end - start - children
        cnt[uid] = cnt.get(uid, 0) + 1
    top = sum(c[3] - c[2] for c in calls if c[4] == 0)
    return inc, exc, cnt, top


def check_against_oracle(evs):
    p = import_trace(evs, "prog")
    inc, exc, cnt, top = oracle(evs)
    assert p.totals("inclusive") == inc
    assert p.totals("exclusive") == exc
    assert {r.uid: r.call_count for r in p.resources} == cnt
    assert sum(exc.values()) == top
    serialize_profile(p)  # satisfies the profile invariants


def test_oracle_on_random_traces():
    rng = random.Random(1234)
    for _ in range(100):
        check_against_oracle(random_trace(rng))


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_oracle_property(rnd):
    check_against_oracle(random_trace(rnd, max_events=60))


# -- time wrapper -------------------------------------------------------------

PY = sys.executable


def test_time_wrapper_sleep():
    p = time_wrapper_collect("sleep 0.05", repetitions=3)
    (inc,) = [r for r in p.resources if r.kind == "inclusive"]
    assert 45000 <= inc.amount_us <= 80000
    assert p.header.repetitions == 3 and p.header.collector_id == "time-wrapper"
    assert p.totals("exclusive") == p.totals("inclusive")


def test_time_wrapper_single_run():
    p = time_wrapper_collect(f"{PY} -c pass", repetitions=1, warmups=0)
    assert p.header.repetitions == 1


def test_missing_command():
    with pytest.raises(CollectionError):
        time_wrapper_collect("/nonexistent/binary-xyz")


def test_nonzero_exit_keeps_stderr():
    with pytest.raises(CollectionError) as err:
        time_wrapper_collect(f"{PY} -c \"import sys; sys.stderr.write('boom'); sys.exit(3)\"")
    assert "boom" in err.value.stderr


def test_timeouts_fail_collection():
    with pytest.raises(CollectionError, match="timed out"):
        time_wrapper_collect(f'{PY} -c "import time; time.sleep(5)"', repetitions=1, timeout=0.2)


# -- workloads ----------------------------------------------------------------


def test_repeated_line_sizes(tmp_path):
    paths = generate_scaled_workloads(ScaledWorkloadSpec("repeated_line", [10, 20]), tmp_path)
    assert [p.stat().st_size for p in paths] == [10, 20]


@pytest.mark.parametrize("generator", ["repeated_line", "random_words", "integer_sequence"])
def test_deterministic(tmp_path, generator):
    spec = ScaledWorkloadSpec(generator, [50, 300], seed=9)
    a = [p.read_bytes() for p in generate_scaled_workloads(spec, tmp_path / "a")]
    b = [p.read_bytes() for p in generate_scaled_workloads(spec, tmp_path / "b")]
    assert a == b


def test_random_words_exact_size():
    assert len(generate_workload("random_words", 1000, 3)) == 1000


def test_integer_sequence_golden():
    assert generate_workload("integer_sequence", 5, 7) == b"558770\n19002\n994104\n666575\n236810\n"


@pytest.mark.parametrize("sizes", [[], [10, 10], [20, 10], [0]])
def test_spec_validation(sizes):
    with pytest.raises(ValueError):
        ScaledWorkloadSpec("repeated_line", sizes)


def test_scaled_collect_one_uid_across_sizes(tmp_path):
    spec = ScaledWorkloadSpec("repeated_line", [100, 200])
    p = scaled_collect(f"{PY} -c pass {{workload}}", spec, tmp_path)
    assert {r.uid for r in p.resources} == {f"{PY} -c pass {{workload}}"}
    assert sorted({r.workload_size for r in p.resources}) == [100, 200]
