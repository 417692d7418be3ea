"""Naive backtracking regex matcher used as a ReDoS test subject.

Supports literals, ``.``, ``[a-z]``-style classes, groups, ``+ * ?``, ``|``
and the ``^``/``$`` anchors.  Matching is recursive descent with
continuations and unbounded backtracking: no memoization, no cut-offs.  On
patterns with nested quantifiers such as the Java class-name validator
``^(([a-z])+.)+[A-Z]([a-z])+$`` the work grows exponentially with the length
of a non-matching run of lowercase letters.
"""

from __future__ import annotations

import sys
import threading
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Callable

JAVA_CLASSNAME = "^(([a-z])+.)+[A-Z]([a-z])+$"
# 19 bytes, a package-qualified class name with the separators dropped; it
# matches after little backtracking, but one lowercased letter makes every
# split of the lowercase run a candidate
SEED = "comexamplelongName\n"

Cont = "Callable[[int], bool]"


class _Node:
    # plain class: dataclasses would add measurable import time to every run
    __slots__ = ("kind", "arg")

    def __init__(self, kind: str, arg: object = None):
        self.kind = kind
        self.arg = arg

    def __repr__(self) -> str:
        return f"_Node({self.kind!r}, {self.arg!r})"


class PatternError(ValueError):
    pass


class _Parser:
    def __init__(self, pattern: str):
        self.p = pattern
        self.i = 0

    def parse(self) -> _Node:
        node = self.alt()
        if self.i != len(self.p):
            raise PatternError(f"unexpected {self.p[self.i]!r} at {self.i}")
        return node

    def alt(self) -> _Node:
        options = [self.seq()]
        while self.peek() == "|":
            self.i += 1
            options.append(self.seq())
        return options[0] if len(options) == 1 else _Node("alt", options)

    def seq(self) -> _Node:
        items = []
        while self.peek() not in (None, "|", ")"):
            items.append(self.repeat())
        return _Node("seq", items)

    def repeat(self) -> _Node:
        atom = self.atom()
        while self.peek() in ("+", "*", "?"):
            op = self.p[self.i]
            self.i += 1
            atom = _Node({"+": "plus", "*": "star", "?": "opt"}[op], atom)
        return atom

    def atom(self) -> _Node:
        c = self.p[self.i]
        if c in "+*?":
            raise PatternError(f"nothing to repeat at {self.i}")
        self.i += 1
        if c == "(":
            inner = self.alt()
            if self.peek() != ")":
                raise PatternError("unbalanced parenthesis")
            self.i += 1
            return inner
        if c == "[":
            end = self.p.find("]", self.i)
            if end < 0:
                raise PatternError("unterminated class")
            body, self.i = self.p[self.i:end], end + 1
            return _Node("class", _class_predicate(body))
        if c == ".":
            return _Node("any")
        if c == "^":
            return _Node("bol")
        if c == "$":
            return _Node("eol")
        if c == "\\":
            if self.i == len(self.p):
                raise PatternError("trailing backslash")
            c = self.p[self.i]
            self.i += 1
        return _Node("char", c)

    def peek(self):
        return self.p[self.i] if self.i < len(self.p) else None


def _class_predicate(body: str) -> Callable[[str], bool]:
    negate = body.startswith("^")
    if negate:
        body = body[1:]
    ranges = []
    i = 0
    while i < len(body):
        if i + 2 < len(body) and body[i + 1] == "-":
            ranges.append((body[i], body[i + 2]))
            i += 3
        else:
            ranges.append((body[i], body[i]))
            i += 1
    return lambda ch: any(lo <= ch <= hi for lo, hi in ranges) != negate


class Matcher:
    """Compiled pattern.  ``steps`` counts node visits of the last call."""

    def __init__(self, pattern: str):
        self.pattern = pattern
        self.root = _Parser(pattern).parse()
        self.steps = 0

    def match(self, text: str) -> bool:
        """True when the pattern matches starting at position 0."""
        self.steps = 0
        return self._m(self.root, text, 0, lambda j: True)

    def search(self, text: str) -> bool:
        self.steps = 0
        return any(self._m(self.root, text, i, lambda j: True) for i in range(len(text) + 1))

    def _m(self, node: _Node, s: str, i: int, k: Cont) -> bool:
        self.steps += 1
        kind = node.kind
        if kind == "char":
            return i < len(s) and s[i] == node.arg and k(i + 1)
        if kind == "any":
            return i < len(s) and s[i] != "\n" and k(i + 1)
        if kind == "class":
            return i < len(s) and node.arg(s[i]) and k(i + 1)
        if kind == "seq":
            return self._seq(node.arg, 0, s, i, k)
        if kind == "alt":
            return any(self._m(opt, s, i, k) for opt in node.arg)
        if kind == "plus":
            return self._m(node.arg, s, i, lambda j: self._star(node.arg, s, j, k))
        if kind == "star":
            return self._star(node.arg, s, i, k)
        if kind == "opt":
            return self._m(node.arg, s, i, k) or k(i)
        if kind == "bol":
            return i == 0 and k(i)
        if kind == "eol":
            return i == len(s) and k(i)
        raise PatternError(f"unknown node {kind}")

    def _seq(self, items, n: int, s: str, i: int, k: Cont) -> bool:
        if n == len(items):
            return k(i)
        return self._m(items[n], s, i, lambda j: self._seq(items, n + 1, s, j, k))

    def _star(self, node: _Node, s: str, i: int, k: Cont) -> bool:
        # greedy: one more repetition first; an empty repetition ends the loop
        return self._m(node, s, i, lambda j: j > i and self._star(node, s, j, k)) or k(i)


def count_matches(lines, pattern: str = JAVA_CLASSNAME) -> tuple[int, int]:
    m = Matcher(pattern)
    total = hits = 0
    for line in lines:
        total += 1
        hits += m.match(line.rstrip("\n"))
    return hits, total


def _with_deep_stack(fn, *args):
    # continuation passing recurses once per consumed character and node
    result = []
    error = []

    def run():
        try:
            result.append(fn(*args))
        except BaseException as exc:  # re-raised in the caller's thread
            error.append(exc)

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 200_000))
    old_size = threading.stack_size(512 * 1024 * 1024)
    try:
        t = threading.Thread(target=run)
        t.start()
        t.join()
    finally:
        threading.stack_size(old_size)
        sys.setrecursionlimit(old_limit)
    if error:
        raise error[0]
    return result[0]


def main(path: str, pattern: str = JAVA_CLASSNAME, out=sys.stdout) -> int:
    with open(path, encoding="utf-8", errors="replace") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    hits, total = _with_deep_stack(count_matches, lines, pattern)
    out.write(f"{hits} of {total} lines match {pattern}\n")
    return 0
