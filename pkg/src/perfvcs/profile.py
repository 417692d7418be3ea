"""Profile data model and its canonical ``.perf.json`` serialization.

A profile is a header describing how the data were collected plus an ordered
list of resource records (one amount of time per function and kind).  The
serialized form is canonical: keys are written in the fixed order below,
without whitespace, and numbers never use exponent notation below 1e15.  Equal
profiles therefore always produce equal bytes, which the store relies on for
content addressing.

Document layout::

    {"header": {"collector_id", "command", "workload_label", "workload_size",
                "units", "collected_at", "repetitions"[, "notes"]},
     "resources": [{"uid", "amount_us", "kind", "call_count",
                    "workload_size", "trace"}, ...]
     [, "models": [...]]}
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal
from typing import Any, Iterable, Optional, Sequence

UNITS = "us"
KINDS = ("exclusive", "inclusive")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

HEADER_KEYS = (
    "collector_id",
    "command",
    "workload_label",
    "workload_size",
    "units",
    "collected_at",
    "repetitions",
)
RECORD_KEYS = ("uid", "amount_us", "kind", "call_count", "workload_size", "trace")

# slack for float rounding when comparing exclusive and inclusive totals
_EPS = 1e-9


class ProfileError(ValueError):
    """A profile document or object violates the schema.

    ``path`` points at the offending element (``resources[3].amount_us``),
    ``reason`` says what is wrong with it.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class UnsupportedUnitsError(ProfileError):
    pass


class NegativeAmountError(ProfileError):
    pass


class MissingUidError(ProfileError):
    pass


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class CollectionHeader:
    collector_id: str
    command: str
    workload_label: str = ""
    workload_size: Optional[int] = None
    units: str = UNITS
    collected_at: datetime = field(default_factory=utc_now)
    repetitions: int = 1
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        ts = self.collected_at
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "collected_at", ts.astimezone(timezone.utc).replace(microsecond=0))
        object.__setattr__(self, "notes", tuple(self.notes))


@dataclass(frozen=True)
class ResourceRecord:
    uid: str
    amount_us: float
    kind: str = "exclusive"
    call_count: int = 1
    workload_size: Optional[int] = None
    trace: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.trace is not None:
            object.__setattr__(self, "trace", tuple(self.trace))


@dataclass(frozen=True)
class Profile:
    header: CollectionHeader
    resources: tuple[ResourceRecord, ...] = ()
    models: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "resources", tuple(self.resources))
        object.__setattr__(self, "models", tuple(self.models))

    def size_of(self, record: ResourceRecord) -> Optional[int]:
        """Workload size of ``record``, falling back to the header value."""
        if record.workload_size is not None:
            return record.workload_size
        return self.header.workload_size

    def uids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.resources:
            seen.setdefault(r.uid, None)
        return list(seen)

    def totals(self, kind: str) -> dict[str, float]:
        """Per-uid sum of amounts of the given kind."""
        out: dict[str, float] = {}
        for r in self.resources:
            if r.kind == kind:
                out[r.uid] = out.get(r.uid, 0) + r.amount_us
        return out


# -- validation -------------------------------------------------------------


def validate(p: Profile) -> None:
    """Raise :class:`ProfileError` naming the first violated invariant."""
    h = p.header
    if h.units != UNITS:
        raise UnsupportedUnitsError("header.units", f"unsupported units {h.units!r} (only {UNITS!r})")
    if not isinstance(h.repetitions, int) or isinstance(h.repetitions, bool) or h.repetitions < 1:
        raise ProfileError("header.repetitions", "must be a positive integer")
    _check_size("header.workload_size", h.workload_size)
    for i, r in enumerate(p.resources):
        where = f"resources[{i}]"
        if not isinstance(r.uid, str) or not r.uid:
            raise MissingUidError(f"{where}.uid", "uid must be a nonempty string")
        if not _is_number(r.amount_us) or not math.isfinite(r.amount_us):
            raise ProfileError(f"{where}.amount_us", "must be a finite number")
        if r.amount_us < 0:
            raise NegativeAmountError(f"{where}.amount_us", f"negative amount {r.amount_us!r}")
        if r.kind not in KINDS:
            raise ProfileError(f"{where}.kind", f"unknown kind {r.kind!r}")
        if not isinstance(r.call_count, int) or isinstance(r.call_count, bool) or r.call_count < 1:
            raise ProfileError(f"{where}.call_count", "must be a positive integer")
        _check_size(f"{where}.workload_size", r.workload_size)
        if r.trace is not None:
            if not all(isinstance(t, str) and t for t in r.trace):
                raise ProfileError(f"{where}.trace", "trace entries must be nonempty strings")
            if r.trace and r.trace[-1] == r.uid:
                raise ProfileError(f"{where}.trace", "trace must not end with the record's own uid")
    exclusive = p.totals("exclusive")
    inclusive = p.totals("inclusive")
    for uid, ex in exclusive.items():
        inc = inclusive.get(uid)
        if inc is not None and ex > inc + _EPS * max(1.0, abs(inc)):
            raise ProfileError(f"resources[uid={uid}]", f"exclusive time {ex} exceeds inclusive time {inc}")


def _check_size(path: str, value: Any) -> None:
    if value is None:
        return
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ProfileError(path, "workload_size must be a nonnegative integer or null")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


# -- canonical text ---------------------------------------------------------


def format_number(value: float | int) -> str:
    """Render a number for the canonical form.

    Integral values print as integers; everything else uses the shortest
    round-tripping decimal, expanded out of exponent notation.
    """
    if isinstance(value, bool) or not _is_number(value):
        raise TypeError(f"not a number: {value!r}")
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {value!r}")
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    text = repr(value)
    if "e" in text or "E" in text:
        if abs(value) >= 1e15:
            return text
        text = format(Decimal(text), "f")
    return text


def encode_canonical(obj: Any) -> str:
    """Compact JSON text with dict insertion order preserved."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if _is_number(obj):
        return format_number(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k, ensure_ascii=False)}:{encode_canonical(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(encode_canonical(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def header_to_dict(h: CollectionHeader) -> dict:
    d = {
        "collector_id": h.collector_id,
        "command": h.command,
        "workload_label": h.workload_label,
        "workload_size": h.workload_size,
        "units": h.units,
        "collected_at": format_timestamp(h.collected_at),
        "repetitions": h.repetitions,
    }
    if h.notes:
        d["notes"] = list(h.notes)
    return d


def record_to_dict(r: ResourceRecord) -> dict:
    return {
        "uid": r.uid,
        "amount_us": r.amount_us,
        "kind": r.kind,
        "call_count": r.call_count,
        "workload_size": r.workload_size,
        "trace": None if r.trace is None else list(r.trace),
    }


def to_dict(p: Profile) -> dict:
    doc: dict[str, Any] = {
        "header": header_to_dict(p.header),
        "resources": [record_to_dict(r) for r in p.resources],
    }
    if p.models:
        doc["models"] = [m.to_dict() for m in p.models]
    return doc


def serialize_profile(p: Profile) -> bytes:
    validate(p)
    return (encode_canonical(to_dict(p)) + "\n").encode("utf-8")


# -- parsing ----------------------------------------------------------------


def parse_profile(data: bytes | str) -> Profile:
    """Parse a ``.perf.json`` document.

    Raises :class:`ProfileError` (or one of its subclasses) naming the path of
    the first schema violation.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProfileError("", f"not UTF-8 text: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProfileError("", f"malformed document: {exc}") from None
    return from_dict(doc)


def from_dict(doc: Any) -> Profile:
    if not isinstance(doc, dict):
        raise ProfileError("", "document must be an object")
    extra = set(doc) - {"header", "resources", "models"}
    if extra:
        raise ProfileError(sorted(extra)[0], "unknown top-level key")
    if "header" not in doc:
        raise ProfileError("header", "missing")
    if "resources" not in doc:
        raise ProfileError("resources", "missing")
    header = _parse_header(doc["header"])
    raw = doc["resources"]
    if not isinstance(raw, list):
        raise ProfileError("resources", "must be a list")
    records = [_parse_record(f"resources[{i}]", r) for i, r in enumerate(raw)]
    models: list = []
    if "models" in doc:
        from perfvcs.models import PerformanceModel

        if not isinstance(doc["models"], list):
            raise ProfileError("models", "must be a list")
        for i, m in enumerate(doc["models"]):
            try:
                models.append(PerformanceModel.from_dict(m))
            except (KeyError, TypeError, ValueError) as exc:
                raise ProfileError(f"models[{i}]", f"invalid model: {exc}") from None
    p = Profile(header, records, models)
    validate(p)
    return p


def _require(obj: dict, path: str, key: str, types: tuple, nullable: bool = False) -> Any:
    if key not in obj:
        raise ProfileError(f"{path}.{key}", "missing")
    value = obj[key]
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, types):
        raise ProfileError(f"{path}.{key}", f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
    return value


def _parse_header(h: Any) -> CollectionHeader:
    if not isinstance(h, dict):
        raise ProfileError("header", "must be an object")
    units = _require(h, "header", "units", (str,))
    if units != UNITS:
        raise UnsupportedUnitsError("header.units", f"unsupported units {units!r} (only {UNITS!r})")
    stamp = _require(h, "header", "collected_at", (str,))
    try:
        collected_at = parse_timestamp(stamp)
    except ValueError:
        raise ProfileError("header.collected_at", f"bad timestamp {stamp!r}") from None
    notes = h.get("notes", [])
    if not isinstance(notes, list) or not all(isinstance(n, str) for n in notes):
        raise ProfileError("header.notes", "must be a list of strings")
    return CollectionHeader(
        collector_id=_require(h, "header", "collector_id", (str,)),
        command=_require(h, "header", "command", (str,)),
        workload_label=_require(h, "header", "workload_label", (str,)),
        workload_size=_require(h, "header", "workload_size", (int,), nullable=True),
        units=units,
        collected_at=collected_at,
        repetitions=_require(h, "header", "repetitions", (int,)),
        notes=tuple(notes),
    )


def _parse_record(path: str, r: Any) -> ResourceRecord:
    if not isinstance(r, dict):
        raise ProfileError(path, "must be an object")
    if "uid" not in r or r["uid"] in (None, ""):
        raise MissingUidError(f"{path}.uid", "uid must be a nonempty string")
    amount = _require(r, path, "amount_us", (int, float))
    if amount < 0:
        raise NegativeAmountError(f"{path}.amount_us", f"negative amount {amount!r}")
    trace = r.get("trace")
    if trace is not None:
        if not isinstance(trace, list) or not all(isinstance(t, str) for t in trace):
            raise ProfileError(f"{path}.trace", "must be a list of strings or null")
        trace = tuple(trace)
    return ResourceRecord(
        uid=_require(r, path, "uid", (str,)),
        amount_us=amount,
        kind=_require(r, path, "kind", (str,)),
        call_count=_require(r, path, "call_count", (int,)),
        workload_size=_require(r, path, "workload_size", (int,), nullable=True) if "workload_size" in r else None,
        trace=trace,
    )


def load_profile(path) -> Profile:
    with open(path, "rb") as fh:
        return parse_profile(fh.read())


def save_profile(p: Profile, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_profile(p))


# -- aggregation ------------------------------------------------------------


def _median_half_up(values: Sequence[float]) -> int:
    return int(math.floor(statistics.median(values) + 0.5))


def merge_repetitions(profiles: Iterable[Profile]) -> Profile:
    """Merge repeated measurements of the same command into one profile.

    Records are matched on (uid, kind, workload_size).  Amounts become the
    median over the inputs that contain the record and call counts the median
    rounded half-up.  Records missing from some inputs are merged over the
    present values and mentioned in ``header.notes``.
    """
    profiles = list(profiles)
    if not profiles:
        raise ValueError("nothing to merge")
    first = profiles[0].header
    for i, p in enumerate(profiles[1:], start=1):
        h = p.header
        for key in ("collector_id", "command", "workload_label", "units"):
            if getattr(h, key) != getattr(first, key):
                raise ProfileError(
                    f"profiles[{i}].header.{key}",
                    f"mismatched header: {getattr(h, key)!r} != {getattr(first, key)!r}",
                )

    n = len(profiles)
    groups: dict[tuple, list[ResourceRecord]] = {}
    for p in profiles:
        for r in p.resources:
            key = (r.uid, r.kind, p.size_of(r))
            groups.setdefault(key, []).append(r)

    sizes = {p.header.workload_size for p in profiles}
    header_size = sizes.pop() if len(sizes) == 1 else None

    merged = []
    notes = {note for p in profiles for note in p.header.notes}
    for key in sorted(groups, key=_group_sort_key):
        uid, kind, size = key
        recs = groups[key]
        traces = sorted({r.trace for r in recs if r.trace is not None})
        merged.append(
            ResourceRecord(
                uid=uid,
                amount_us=statistics.median([r.amount_us for r in recs]),
                kind=kind,
                call_count=max(1, _median_half_up([r.call_count for r in recs])),
                workload_size=size if size != header_size else None,
                trace=traces[0] if traces else None,
            )
        )
        if len(recs) < n:
            notes.add(f"{uid} ({kind}) present in {len(recs)} of {n} inputs; median over present values")

    header = replace(
        first,
        workload_size=header_size,
        collected_at=max(p.header.collected_at for p in profiles),
        repetitions=n,
        notes=tuple(sorted(notes)),
    )
    return Profile(header, merged)


def _group_sort_key(key: tuple) -> tuple:
    uid, kind, size = key
    return (uid, kind, -1 if size is None else size)


def combine_workloads(profiles: Iterable[Profile], label: Optional[str] = None) -> Profile:
    """Join single-workload profiles into one profile spanning several sizes.

    Every record carries its own ``workload_size`` afterwards so the result can
    feed model fitting.
    """
    profiles = list(profiles)
    if not profiles:
        raise ValueError("nothing to combine")
    records = []
    for p in profiles:
        for r in p.resources:
            records.append(replace(r, workload_size=p.size_of(r)))
    first = profiles[0].header
    header = replace(
        first,
        workload_label=first.workload_label if label is None else label,
        workload_size=None,
        collected_at=max(p.header.collected_at for p in profiles),
        repetitions=min(p.header.repetitions for p in profiles),
    )
    return Profile(header, records)
