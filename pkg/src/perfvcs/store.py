"""Content-addressed profile storage linked to commits.

Layout under the repository root::

    .perfvcs/
      config                 INI file; [perfvcs] format_version, [thresholds]
      objects/ab/cdef...     canonical profile bytes, named by SHA-256
      index/<commit>         one line per registration:
                             <digest> <collector_id> <workload_label> <registered_at>

Index lines are append-only.  Fields are percent-encoded so they never contain
spaces; an empty field is written as ``-``.
"""

from __future__ import annotations

import configparser
import fcntl
import hashlib
import os
import re
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional
from urllib.parse import quote, unquote

from perfvcs.profile import Profile, format_timestamp, parse_profile, parse_timestamp, serialize_profile, utc_now
from perfvcs.vcs import Git, UnknownRevisionError

FORMAT_VERSION = 1
STORE_DIRNAME = ".perfvcs"
ENV_STORE_DIR = "PERFVCS_DIR"

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")

DEFAULT_CONFIG = f"""\
[perfvcs]
format_version = {FORMAT_VERSION}

[thresholds]
z_limit = 3.0
iqr_multiplier = 1.5
stddev_limit = 2.0
integral_maybe = 0.10
integral_degradation = 0.25
cutoff_rel = 0.0
"""


class StoreError(RuntimeError):
    pass


class StoreNotInitializedError(StoreError):
    pass


class NoBaselineError(StoreError):
    pass


def digest_of(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def profile_digest(p: Profile) -> str:
    return digest_of(serialize_profile(p))


def _enc(field: str) -> str:
    # "-" stands for the empty field, so a literal "-" is escaped
    if field == "-":
        return "%2D"
    return quote(field, safe="") or "-"


def _dec(field: str) -> str:
    return "" if field == "-" else unquote(field)


@dataclass(frozen=True)
class Registration:
    digest: str
    collector_id: str
    workload_label: str
    registered_at: datetime

    def to_line(self) -> str:
        return f"{self.digest} {_enc(self.collector_id)} {_enc(self.workload_label)} {format_timestamp(self.registered_at)}\n"

    @classmethod
    def from_line(cls, line: str) -> "Registration":
        digest, collector, label, stamp = line.split()
        return cls(digest, _dec(collector), _dec(label), parse_timestamp(stamp))


@dataclass(frozen=True)
class VersionEntry:
    commit_id: str
    registrations: tuple[Registration, ...] = ()

    @property
    def digests(self) -> list[str]:
        return [r.digest for r in self.registrations]

    def newest(self, collector_id: Optional[str] = None, workload_label: Optional[str] = None) -> Optional[Registration]:
        """Most recently registered matching profile; later index lines win ties."""
        best = None
        for r in self.registrations:
            if collector_id is not None and r.collector_id != collector_id:
                continue
            if workload_label is not None and r.workload_label != workload_label:
                continue
            if best is None or r.registered_at >= best.registered_at:
                best = r
        return best


@dataclass(frozen=True)
class BaselineSelector:
    """Which commit to compare against: ``parent``, ``nth_ancestor:k`` or ``explicit:<rev>``."""

    kind: str = "parent"
    k: int = 1
    commit: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "BaselineSelector":
        name, _, arg = text.partition(":")
        if name == "parent" and not arg:
            return cls("parent")
        if name == "nth_ancestor":
            try:
                k = int(arg)
            except ValueError:
                raise ValueError(f"bad ancestor count in {text!r}") from None
            if k < 1:
                raise ValueError("nth_ancestor needs k >= 1")
            return cls("nth_ancestor", k)
        if name == "explicit" and arg:
            return cls("explicit", commit=arg)
        raise ValueError(f"unknown baseline selector {text!r} (parent, nth_ancestor:K, explicit:REV)")


class Store:
    """Handle on a ``.perfvcs`` directory inside a git work tree."""

    def __init__(self, path, vcs: Git):
        self.path = Path(path)
        self.vcs = vcs

    # -- construction --------------------------------------------------------

    @staticmethod
    def default_path(repo_root) -> Path:
        override = os.environ.get(ENV_STORE_DIR)
        return Path(override) if override else Path(repo_root) / STORE_DIRNAME

    @classmethod
    def init(cls, repo_root=".", path=None) -> "Store":
        """Create the store (idempotent).  Fails outside a repository."""
        vcs = Git.discover(repo_root)
        store = cls(path or cls.default_path(vcs.root), vcs)
        (store.path / "objects").mkdir(parents=True, exist_ok=True)
        (store.path / "index").mkdir(exist_ok=True)
        config = store.path / "config"
        if not config.exists():
            _atomic_write(config, DEFAULT_CONFIG.encode("utf-8"))
        return store

    @classmethod
    def open(cls, repo_root=".", path=None) -> "Store":
        vcs = Git.discover(repo_root)
        store = cls(path or cls.default_path(vcs.root), vcs)
        if not (store.path / "config").is_file():
            raise StoreNotInitializedError(f"no store at {store.path}; run init first")
        version = store.config().get("perfvcs", "format_version", fallback=None)
        if version != str(FORMAT_VERSION):
            raise StoreError(f"unsupported store format_version {version!r}")
        return store

    def config(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        try:
            cp.read(self.path / "config", encoding="utf-8")
        except configparser.Error as exc:
            raise StoreError(f"bad store config: {exc}") from None
        return cp

    # -- objects -------------------------------------------------------------

    def object_path(self, digest: str) -> Path:
        return self.path / "objects" / digest[:2] / digest[2:]

    def put_object(self, data: bytes) -> str:
        digest = digest_of(data)
        target = self.object_path(digest)
        if not target.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(target, data)
        return digest

    def load(self, digest: str) -> Profile:
        return parse_profile(self.read_object(self.resolve_digest(digest)))

    def read_object(self, digest: str) -> bytes:
        try:
            return self.object_path(digest).read_bytes()
        except FileNotFoundError:
            raise StoreError(f"no object {digest}") from None

    def resolve_digest(self, prefix: str) -> str:
        """Full digest from a unique prefix of at least 4 hex characters."""
        prefix = prefix.lower()
        if _DIGEST_RE.match(prefix):
            return prefix
        if len(prefix) < 4 or not re.fullmatch(r"[0-9a-f]+", prefix):
            raise StoreError(f"bad digest {prefix!r}")
        matches = [d for d in self.iter_objects() if d.startswith(prefix)]
        if len(matches) != 1:
            raise StoreError(f"digest prefix {prefix!r} matches {len(matches)} objects")
        return matches[0]

    def iter_objects(self) -> Iterator[str]:
        root = self.path / "objects"
        for sub in sorted(root.iterdir()):
            if sub.is_dir() and len(sub.name) == 2:
                for f in sorted(sub.iterdir()):
                    if not f.name.startswith("."):
                        yield sub.name + f.name

    # -- index ---------------------------------------------------------------

    @contextmanager
    def _lock(self):
        with open(self.path / "index.lock", "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def register_profile(self, p: Profile, commit_id: str, registered_at: Optional[datetime] = None) -> str:
        commit = self.vcs.resolve(commit_id)
        digest = self.put_object(serialize_profile(p))
        reg = Registration(digest, p.header.collector_id, p.header.workload_label, registered_at or utc_now())
        index = self.path / "index" / commit
        with self._lock():
            if any(r.digest == digest for r in self._read_index(index)):
                return digest
            with open(index, "a", encoding="utf-8") as fh:
                fh.write(reg.to_line())
                fh.flush()
                os.fsync(fh.fileno())
        return digest

    @staticmethod
    def _read_index(index: Path) -> list[Registration]:
        try:
            text = index.read_text(encoding="utf-8")
        except FileNotFoundError:
            return []
        return [Registration.from_line(line) for line in text.splitlines() if line.strip()]

    def lookup(self, commit_id: str) -> VersionEntry:
        commit = self.vcs.resolve(commit_id)
        return VersionEntry(commit, tuple(self._read_index(self.path / "index" / commit)))

    def indexed_commits(self) -> list[str]:
        return sorted(p.name for p in (self.path / "index").iterdir() if not p.name.startswith("."))

    def commits_with(self, digest: str) -> list[str]:
        return [c for c in self.indexed_commits() if digest in {r.digest for r in self._read_index(self.path / "index" / c)}]

    def find_baseline(self, target_commit: str, selector: BaselineSelector | str = "parent") -> str:
        if isinstance(selector, str):
            selector = BaselineSelector.parse(selector)
        target = self.vcs.resolve(target_commit)
        if selector.kind == "explicit":
            commit = self.vcs.resolve(selector.commit)
        else:
            k = 1 if selector.kind == "parent" else selector.k
            history = self.vcs.first_parents(target, limit=k + 1)
            if len(history) <= k:
                if selector.kind == "parent":
                    raise NoBaselineError(f"{target[:12]} is a root commit; it has no parent")
                raise NoBaselineError(f"ancestor {k} exceeds the history depth of {target[:12]} ({len(history) - 1})")
            commit = history[k]
        if not self.lookup(commit).registrations:
            raise NoBaselineError(f"no baseline profiles registered at {commit[:12]}")
        return commit

    def fsck(self) -> list[str]:
        """Problems found: dangling index entries, corrupt objects, bad index lines."""
        problems = []
        for d in self.iter_objects():
            data = self.object_path(d).read_bytes()
            if digest_of(data) != d:
                problems.append(f"object {d}: content digest mismatch")
        for commit in self.indexed_commits():
            index = self.path / "index" / commit
            for n, line in enumerate(index.read_text(encoding="utf-8").splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    reg = Registration.from_line(line)
                except ValueError:
                    problems.append(f"index/{commit}:{n}: malformed line")
                    continue
                if not _DIGEST_RE.match(reg.digest):
                    problems.append(f"index/{commit}:{n}: bad digest {reg.digest!r}")
                elif not self.object_path(reg.digest).is_file():
                    problems.append(f"index/{commit}:{n}: missing object {reg.digest}")
            try:
                self.vcs.resolve(commit)
            except UnknownRevisionError:
                problems.append(f"index/{commit}: commit not in repository")
        return problems


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
