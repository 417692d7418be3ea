import json
import re

from conftest import commit, gate_repo, run_cli, scaled_profile
from perfvcs.profile import save_profile


def test_help_and_usage_errors(repo):
    assert run_cli(repo, "--help").returncode == 0
    assert run_cli(repo, "frobnicate").returncode == 2
    assert run_cli(repo, "check").returncode == 2


def test_commands_need_a_store(repo):
    commit(repo, "c1")
    proc = run_cli(repo, "status", check=2)
    assert "init" in proc.stderr


def test_status_and_log(repo):
    c1, c3 = gate_repo(repo)
    status = run_cli(repo, "status", check=0).stdout.splitlines()
    assert status[0] == f"2 profiles registered at {c3}"
    assert "trace-import [hot]" in status[1] + status[2]
    log = run_cli(repo, "log", check=0).stdout.splitlines()
    assert log[0] == f"{c3} 2 profiles" and log[-1] == f"{c1} 2 profiles"
    assert len(run_cli(repo, "log", "-n", "1", check=0).stdout.splitlines()) == 1
    assert run_cli(repo, "fsck", check=0).stdout == "ok\n"


def test_check_exit_codes(repo):
    gate_repo(repo)
    sel = ["--baseline-selector", "nth_ancestor:2"]
    same = run_cli(repo, "check", "head", *sel, "--workload-label", "same", check=0)
    assert "SevereDegradation" not in same.stdout
    hot = run_cli(repo, "check", "head", *sel, "--workload-label", "hot", check=1)
    assert "f07" in hot.stdout and "SevereDegradation" in hot.stdout
    missing = run_cli(repo, "check", "head", "--workload-label", "hot", check=2)
    assert "no baseline profiles registered" in missing.stderr
    run_cli(repo, "check", "head", "--baseline-selector", "nth_ancestor:9", check=2)


def test_check_json_and_thresholds(repo):
    gate_repo(repo)
    args = ["check", "head", "--baseline-selector", "nth_ancestor:2", "--workload-label", "hot", "--format", "json"]
    doc = json.loads(run_cli(repo, *args, check=1).stdout)
    assert doc["method"] == "exclusive_time_outliers"
    flagged = [r["location"] for r in doc["records"] if r["result"] == "SevereDegradation"]
    assert flagged == ["f07"]
    # config file thresholds apply, flags override them
    config = repo / ".perfvcs" / "config"
    text = config.read_text()
    for name in ("z_limit", "iqr_multiplier", "stddev_limit"):
        text = re.sub(rf"^{name} = .*$", f"{name} = 1000", text, flags=re.M)
    config.write_text(text)
    run_cli(repo, *args, check=0)
    run_cli(repo, *args, "--z-limit", "3", "--iqr-multiplier", "1.5", check=1)
    config.write_text(text + "[thresholds]\n")
    assert "bad store config" in run_cli(repo, *args, check=2).stderr


def test_check_profiles_mode(repo, tmp_path):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    a, b = tmp_path / "a.perf.json", tmp_path / "b.perf.json"
    save_profile(scaled_profile(lambda n: 4 * n), a)
    save_profile(scaled_profile(lambda n: 0.02 * n * n), b)
    proc = run_cli(repo, "check", "profiles", str(a), str(b), "--method", "best_model_order", check=1)
    assert "| Degradation |" in proc.stdout
    proc = run_cli(repo, "check", "profiles", str(a), str(b), "--method", "integral_comparison", check=1)
    assert "work" in proc.stdout
    run_cli(repo, "check", "profiles", str(a), check=2)
    run_cli(repo, "check", "profiles", str(a), "deadbeef", check=2)


def test_model_and_show(repo, tmp_path):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    path = tmp_path / "p.perf.json"
    save_profile(scaled_profile(lambda n: 3 * n), path)
    proc = run_cli(repo, "model", "--digest", str(path), check=0)
    digest = proc.stdout.strip()
    assert len(digest) == 64 and "work: linear" in proc.stderr
    svg = tmp_path / "w.svg"
    run_cli(repo, "show", digest[:10], "--kind", "scatter", "--uid", "work", "-o", str(svg), check=0)
    assert 'class="model"' in svg.read_text()
    bars = run_cli(repo, "show", str(path), "--kind", "bars", "--group-by", "workload_size", check=0).stdout
    assert bars.splitlines()[:2] == ["group,uid,amount_us", "100,work,300"]
    flame = run_cli(repo, "show", str(path), "--kind", "flame", check=0).stdout
    assert flame == "work 16500\n"
    run_cli(repo, "show", "nope", "--kind", "flame", check=2)


def test_model_without_sizes_fails(repo, tmp_path):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    trace = tmp_path / "t.trace"
    trace.write_text("E main 0 0\nX main 0 10\n")
    digest = run_cli(repo, "import", "--trace", str(trace), "--cmd", "prog", check=0).stdout.strip()
    proc = run_cli(repo, "model", "--digest", digest, check=2)
    assert "no independent variable" in proc.stderr


def test_import_bad_trace(repo, tmp_path):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    trace = tmp_path / "t.trace"
    trace.write_text("E main 0 0\nX other 0 10\n")
    proc = run_cli(repo, "import", "--trace", str(trace), "--cmd", "prog", check=2)
    assert "line 2" in proc.stderr


def test_import_scaled_traces(repo, tmp_path):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    paths = []
    for n in (10, 20, 40):
        p = tmp_path / f"{n}.trace"
        p.write_text(f"E f 0 0\nX f 0 {n * 3}\n")
        paths += ["--trace", str(p), "--workload-size", str(n)]
    digest = run_cli(repo, "import", *paths, "--cmd", "prog", check=0).stdout.strip()
    run_cli(repo, "model", "--digest", digest, check=0)
    run_cli(repo, "import", *paths[:4], "--trace", paths[5], "--cmd", "prog", check=2)  # 2 traces, 1 size


def test_collect_time_wrapper(repo):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    proc = run_cli(repo, "collect", "--cmd", "true", "--reps", "2", check=0)
    assert len(proc.stdout.strip()) == 64
    assert run_cli(repo, "status", check=0).stdout.startswith("1 profiles registered")


def test_collect_failing_command(repo):
    commit(repo, "c1")
    run_cli(repo, "init", check=0)
    run_cli(repo, "collect", "--cmd", "false", check=2)


def test_subjects(repo, tmp_path):
    w = tmp_path / "w.txt"
    w.write_text("com.example.Name\nabc abc\n")
    assert run_cli(repo, "subject", "regex", str(w), check=0).stdout.startswith("1 of 2 lines match")
    out = run_cli(repo, "subject", "wordfreq", str(w), "--hash", "sampled", "--trace", check=0).stdout
    assert out.startswith("words 3 distinct 2")
    assert (tmp_path / "w.txt.trace").read_text().startswith("# wordfreq")
    run_cli(repo, "subject", "regex", str(tmp_path / "missing"), check=2)


def test_workloads(repo, tmp_path):
    proc = run_cli(repo, "workloads", "--generator", "integer_sequence", "--sizes", "5,10",
                   "--out-dir", str(tmp_path / "w"), check=0)
    paths = proc.stdout.split()
    assert len(paths) == 2
    run_cli(repo, "workloads", "--generator", "nope", "--sizes", "5", check=2)
