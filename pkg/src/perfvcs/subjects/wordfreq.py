"""Word-frequency counter over an open-addressing hash table.

Two string hashes can be plugged in:

``sampled``  Java 1.1 style: at most 8 evenly spaced characters enter the hash,
             so long words differing only between the sampled positions collide.
``djb``      Bernstein's hash over every byte: h = h * 33 + byte, h0 = 5381.

With ``trace`` enabled the counter writes entry/exit events for its internal
functions in the raw ``.trace`` format (thread 0).
"""

from __future__ import annotations

import sys
import time

MASK = 0xFFFFFFFF
DEFAULT_BUCKETS = 4096
MAX_LOAD = 0.75
SAMPLED_CHARS = 8


def sampled_hash(word: bytes) -> int:
    skip = max(1, len(word) // SAMPLED_CHARS)
    h = 0
    for pos in range(0, len(word), skip)[:SAMPLED_CHARS]:
        h = (h * 37 + word[pos]) & MASK
    return h


def djb_hash(word: bytes) -> int:
    h = 5381
    for b in word:
        h = (h * 33 + b) & MASK
    return h


HASHES = {"sampled": sampled_hash, "djb": djb_hash}


class _Tracer:
    def __init__(self):
        self.lines: list[str] = []
        self.t0 = time.perf_counter_ns()
        self.last = 0

    def _now(self) -> int:
        # integer µs, kept nondecreasing
        now = (time.perf_counter_ns() - self.t0) // 1000
        self.last = max(self.last, now)
        return self.last

    def enter(self, uid: str) -> None:
        self.lines.append(f"E {uid} 0 {self._now()}")

    def exit(self, uid: str) -> None:
        self.lines.append(f"X {uid} 0 {self._now()}")


class _NoTracer:
    def enter(self, uid: str) -> None:
        pass

    def exit(self, uid: str) -> None:
        pass


class WordTable:
    """Linear-probing table; doubles when the load factor passes 3/4."""

    def __init__(self, hash_name: str = "djb", buckets: int = DEFAULT_BUCKETS, tracer=None):
        self.hash = HASHES[hash_name]
        self.keys: list[bytes | None] = [None] * buckets
        self.counts = [0] * buckets
        self.size = 0
        self.probes = 0
        self.resizes = 0
        self.tr = tracer or _NoTracer()

    def _slot(self, word: bytes, h: int) -> int:
        tr = self.tr
        tr.enter("probe")
        n = len(self.keys)
        i = h % n
        while self.keys[i] is not None and self.keys[i] != word:
            i = (i + 1) % n
            self.probes += 1
        tr.exit("probe")
        return i

    def add(self, word: bytes) -> None:
        tr = self.tr
        tr.enter("insert")
        tr.enter("hash")
        h = self.hash(word)
        tr.exit("hash")
        i = self._slot(word, h)
        if self.keys[i] is None:
            self.keys[i] = word
            self.size += 1
            if self.size > MAX_LOAD * len(self.keys):
                self._resize()
                i = None
        if i is None:
            i = self._slot(word, self.hash(word))
        self.counts[i] += 1
        tr.exit("insert")

    def _resize(self) -> None:
        self.tr.enter("resize")
        old = [(k, c) for k, c in zip(self.keys, self.counts) if k is not None]
        n = len(self.keys) * 2
        self.keys, self.counts = [None] * n, [0] * n
        self.resizes += 1
        for k, c in old:
            h = self.hash(k)
            i = h % n
            while self.keys[i] is not None:
                i = (i + 1) % n
                self.probes += 1
            self.keys[i] = k
            self.counts[i] = c
        self.tr.exit("resize")

    def items(self) -> list[tuple[bytes, int]]:
        return [(k, c) for k, c in zip(self.keys, self.counts) if k is not None]


def count_words(data: bytes, hash_name: str = "djb", buckets: int = DEFAULT_BUCKETS, tracer=None) -> WordTable:
    table = WordTable(hash_name, buckets, tracer)
    tr = table.tr
    tr.enter("count_words")
    for word in data.split():
        table.add(word)
    tr.exit("count_words")
    return table


def main(path: str, hash_name: str = "djb", trace_out: str | None = None, out=sys.stdout) -> int:
    with open(path, "rb") as fh:
        data = fh.read()
    tracer = _Tracer() if trace_out else None
    if tracer:
        tracer.enter("main")
    table = count_words(data, hash_name, tracer=tracer)
    if tracer:
        tracer.exit("main")
        with open(trace_out, "w", encoding="utf-8") as fh:
            fh.write("# wordfreq --hash %s %s\n" % (hash_name, path))
            fh.write("\n".join(tracer.lines) + "\n")
    total = sum(c for _, c in table.items())
    out.write(f"words {total} distinct {table.size} probes {table.probes} resizes {table.resizes}\n")
    return 0


# -- workloads ----------------------------------------------------------------

_LETTERS = b"abcdefghijklmnopqrstuvwxyz"


def collision_words(n: int, length: int = 16) -> list[bytes]:
    """``n`` distinct words that all share the characters ``sampled_hash`` reads.

    Sampled positions hold ``a``; the remaining positions spell the index in
    base 26, so every word has the same sampled hash.
    """
    skip = max(1, length // SAMPLED_CHARS)
    sampled = set(range(0, length, skip)[:SAMPLED_CHARS])
    free = [p for p in range(length) if p not in sampled]
    if 26 ** len(free) < n:
        raise ValueError(f"only {26 ** len(free)} colliding words of length {length}")
    words = []
    for i in range(n):
        w = bytearray(b"a" * length)
        v = i
        for p in reversed(free):
            w[p] = _LETTERS[v % 26]
            v //= 26
        words.append(bytes(w))
    return words


def collision_workload(n: int, repeats: int = 2, length: int = 16) -> bytes:
    words = collision_words(n, length)
    return b"\n".join(words * repeats) + b"\n"
