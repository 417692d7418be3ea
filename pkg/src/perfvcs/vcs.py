"""Narrow version-control interface.

The store only needs to resolve revisions, walk first-parent history and find
the current head.  Git is the only backend; another VCS can be added by
implementing the same four methods.
"""

from __future__ import annotations

import subprocess
from pathlib import Path
from typing import Optional


class VcsError(RuntimeError):
    pass


class NotARepositoryError(VcsError):
    pass


class UnknownRevisionError(VcsError):
    pass


class Git:
    def __init__(self, root):
        self.root = Path(root)

    @classmethod
    def discover(cls, path=".") -> "Git":
        try:
            out = _git(Path(path), "rev-parse", "--show-toplevel")
        except VcsError:
            raise NotARepositoryError(
                f"{Path(path).resolve()} is not a repository (or any parent up to the root); "
                "run `git init` first"
            ) from None
        return cls(out.strip())

    def _run(self, *args: str) -> str:
        return _git(self.root, *args)

    def resolve(self, rev: str) -> str:
        """Full commit id for a revision (hash, abbreviated hash, ref, HEAD~2, ...)."""
        if not rev or rev.startswith("-"):
            raise UnknownRevisionError(f"bad revision {rev!r}")
        try:
            return self._run("rev-parse", "--verify", "--quiet", f"{rev}^{{commit}}").strip()
        except VcsError:
            raise UnknownRevisionError(f"cannot resolve commit {rev!r}") from None

    def head(self) -> str:
        try:
            return self.resolve("HEAD")
        except UnknownRevisionError:
            raise UnknownRevisionError("repository has no commits yet") from None

    def first_parents(self, commit: str, limit: Optional[int] = None) -> list[str]:
        """``commit`` followed by its first-parent ancestors, newest first."""
        args = ["rev-list", "--first-parent"]
        if limit is not None:
            args.append(f"--max-count={limit}")
        args.append(self.resolve(commit))
        return self._run(*args).split()

    def is_dirty(self) -> bool:
        return bool(self._run("status", "--porcelain", "--untracked-files=no").strip())


def _git(cwd: Path, *args: str) -> str:
    try:
        proc = subprocess.run(
            ["git", *args],
            cwd=cwd,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
    except FileNotFoundError:
        raise VcsError("git executable not found") from None
    if proc.returncode != 0:
        raise VcsError(proc.stderr.strip() or f"git {' '.join(args)} failed")
    return proc.stdout
