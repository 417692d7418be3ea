import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

from perfvcs.profile import CollectionHeader, Profile, ResourceRecord

FIXED_TIME = datetime(2024, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
PERFVCS = [sys.executable, "-m", "perfvcs"]


def header(**kw):
    kw.setdefault("collector_id", "trace-import")
    kw.setdefault("command", "prog")
    kw.setdefault("collected_at", FIXED_TIME)
    return CollectionHeader(**kw)


def exclusive_profile(amounts, command="prog", **kw):
    """One exclusive record per uid."""
    records = [ResourceRecord(uid, amount, "exclusive") for uid, amount in amounts.items()]
    return Profile(header(command=command, **kw), records)


def git(cwd, *args):
    env = dict(os.environ, GIT_AUTHOR_NAME="t", GIT_AUTHOR_EMAIL="t@example.com",
               GIT_COMMITTER_NAME="t", GIT_COMMITTER_EMAIL="t@example.com")
    return subprocess.run(["git", *args], cwd=cwd, env=env, check=True, capture_output=True, text=True).stdout.strip()


def commit(repo, message="c", filename="file.txt"):
    path = Path(repo) / filename
    with open(path, "a") as fh:
        fh.write(message + "\n")
    git(repo, "add", filename)
    git(repo, "commit", "-q", "-m", message)
    return git(repo, "rev-parse", "HEAD")


@pytest.fixture
def repo(tmp_path, monkeypatch):
    """Empty git repository with a .gitignore for the store."""
    monkeypatch.delenv("PERFVCS_DIR", raising=False)
    root = tmp_path / "repo"
    root.mkdir()
    git(root, "init", "-q", "-b", "main")
    (root / ".gitignore").write_text(".perfvcs/\n")
    git(root, "add", ".gitignore")
    return root


@pytest.fixture
def repo3(repo):
    """Repository with three linear commits; returns (root, [c1, c2, c3])."""
    return repo, [commit(repo, f"c{i}") for i in (1, 2, 3)]


def run_cli(repo, *args, check=None):
    proc = subprocess.run([*PERFVCS, "-C", str(repo), *args], capture_output=True, text=True)
    if check is not None:
        assert proc.returncode == check, (proc.returncode, proc.stdout, proc.stderr)
    return proc


def outlier_pair(seed=0, uids=20, inflated="f07", command="prog"):
    """Baseline/target with one uid's exclusive time inflated by 50 %, the rest moved by at most 1 %."""
    import numpy as np

    rng = np.random.default_rng(seed)
    names = [f"f{i:02d}" for i in range(uids)]
    base = {u: float(rng.integers(10_000, 20_000)) for u in names}
    targ = {u: round(v * (1 + rng.uniform(-0.01, 0.01)), 3) for u, v in base.items()}
    targ[inflated] = base[inflated] * 1.5
    return exclusive_profile(base, command), exclusive_profile(targ, command)


def scaled_profile(cost, sizes=range(100, 1001, 100), uid="work", noise=0.0, seed=0):
    """Profile whose ``uid`` costs ``cost(n)`` µs at each workload size n."""
    import numpy as np

    rng = np.random.default_rng(seed)
    records = []
    for n in sizes:
        amount = float(cost(n)) * (1 + noise * rng.standard_normal())
        records.append(ResourceRecord(uid, amount, "inclusive", workload_size=n))
        records.append(ResourceRecord(uid, amount, "exclusive", workload_size=n))
    return Profile(header(), records)


def flat_trace(profile, path):
    """Write a trace of back-to-back top-level calls reproducing the profile's exclusive times."""
    t = 0
    lines = []
    for uid, amount in profile.totals("exclusive").items():
        lines.append(f"E {uid} 0 {t}")
        t += round(amount)
        lines.append(f"X {uid} 0 {t}")
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def gate_repo(root, seed=0):
    """Register the outlier fixture in a three-commit repository through the CLI.

    Labels: ``same`` has identical baseline and target, ``hot`` carries the
    inflated uid.  Baselines sit at the first commit, targets at HEAD.
    """
    base, targ = outlier_pair(seed=seed)
    b = flat_trace(base, root.parent / "base.trace")
    t = flat_trace(targ, root.parent / "targ.trace")
    c1 = commit(root, "c1")
    run_cli(root, "init", check=0)
    run_cli(root, "import", "--trace", str(b), "--cmd", "prog", "--workload-label", "same", check=0)
    run_cli(root, "import", "--trace", str(b), "--cmd", "prog", "--workload-label", "hot", check=0)
    commit(root, "c2")
    c3 = commit(root, "c3")
    run_cli(root, "import", "--trace", str(b), "--cmd", "prog", "--workload-label", "same", check=0)
    run_cli(root, "import", "--trace", str(t), "--cmd", "prog", "--workload-label", "hot", check=0)
    return c1, c3


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
