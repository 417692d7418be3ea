"""Degradation detection between a baseline and a target profile.

Three methods are available:

``best_model_order``
    Compare the complexity class of the best-fitting (highest R²) model of
    each function.  A move up the ladder is a degradation.
``integral_comparison``
    Compare the area under the two best models over their shared x range.
    Small relative changes are reported as no change, which filters out
    higher-order fits that are practically identical on the measured range.
``exclusive_time_outliers``
    Take the change of exclusive time of every function and flag the
    functions whose change is an outlier among all changes, using modified
    z-score, Tukey fences and mean +- k sigma.  The number of statistics that
    flag a function sets the severity.

Functions named ``lib::func`` are grouped under ``lib`` for the total rows;
everything else belongs to the program group named after the target command.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from perfvcs.models import ModelError, PerformanceModel, fit_profile, group_models, model_integral
from perfvcs.profile import Profile

METHODS = ("best_model_order", "integral_comparison", "exclusive_time_outliers")

NO_CHANGE = "NoChange"
DEGRADATION_GRADES = ("MaybeDegradation", "Degradation", "SevereDegradation")
OPTIMIZATION_GRADES = ("MaybeOptimization", "Optimization", "SevereOptimization")
RESULTS = (
    NO_CHANGE,
    *OPTIMIZATION_GRADES,
    *DEGRADATION_GRADES,
    "NotInBaseline",
    "NotInTarget",
    "TotalDegradation",
    "TotalOptimization",
)
MIRROR = dict(zip(DEGRADATION_GRADES, OPTIMIZATION_GRADES)) | dict(zip(OPTIMIZATION_GRADES, DEGRADATION_GRADES))
MIRROR.update({"TotalDegradation": "TotalOptimization", "TotalOptimization": "TotalDegradation"})
# results that fail a CI gate
GATING = ("Degradation", "SevereDegradation")

ZSCORE_CONSTANT = 0.6745
# µs (or µs * workload unit) below which a zero-baseline change is ignored
ABSOLUTE_EPSILON = 1.0


class DetectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DetectionThresholds:
    z_limit: float = 3.0
    iqr_multiplier: float = 1.5
    stddev_limit: float = 2.0
    integral_maybe: float = 0.10
    integral_degradation: float = 0.25
    cutoff_rel: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "cutoff_rel":
                if value < 0:
                    raise ValueError("cutoff_rel must be >= 0")
            elif value <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.integral_maybe > self.integral_degradation:
            raise ValueError("integral_maybe must not exceed integral_degradation")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "DetectionThresholds":
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in values.items() if k in names})


@dataclass(frozen=True)
class DegradationRecord:
    location: str
    result: str
    delta_us: float
    delta_rel: float
    confidence_kind: str
    confidence_value: float
    method: str
    from_desc: str = ""
    to_desc: str = ""

    @property
    def is_total(self) -> bool:
        return self.result.startswith("Total") or self.confidence_kind == "total"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DegradationRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


def _signed_rel(delta: float, denominator: float) -> float:
    return 100.0 * delta / max(denominator, ABSOLUTE_EPSILON)


# -- model based ------------------------------------------------------------


def _heads(models: Mapping[str, Sequence[PerformanceModel]], side: str, method: str) -> dict[str, PerformanceModel]:
    out = {}
    for uid, ms in models.items():
        if not ms:
            warnings.warn(f"{uid}: no models in {side}; skipped by {method}", DetectionWarning, stacklevel=3)
            continue
        out[uid] = ms[0]
    return out


def _shared_interval(a: PerformanceModel, b: PerformanceModel) -> Optional[tuple[float, float]]:
    lo = max(a.x_interval[0], b.x_interval[0])
    hi = min(a.x_interval[1], b.x_interval[1])
    return (lo, hi) if lo < hi else None


def _integrals(base: PerformanceModel, targ: PerformanceModel, method: str):
    span = _shared_interval(base, targ)
    if span is None:
        warnings.warn(f"{base.uid}: models share no x range; skipped by {method}", DetectionWarning, stacklevel=3)
        return None
    try:
        return span, model_integral(base, *span), model_integral(targ, *span)
    except ModelError as exc:
        warnings.warn(f"{base.uid}: cannot integrate ({exc}); skipped by {method}", DetectionWarning, stacklevel=3)
        return None


def _missing_rows(base, targ, method: str) -> list[DegradationRecord]:
    rows = []
    for uid in sorted(set(targ) - set(base)):
        m = targ[uid]
        mean = _mean_cost(m)
        rows.append(
            DegradationRecord(uid, "NotInBaseline", mean, 100.0 if mean else 0.0,
                              "r_squared_min", m.r_squared, method, "absent", m.describe())
        )
    for uid in sorted(set(base) - set(targ)):
        m = base[uid]
        mean = _mean_cost(m)
        rows.append(
            DegradationRecord(uid, "NotInTarget", -mean, -100.0 if mean else 0.0,
                              "r_squared_min", m.r_squared, method, m.describe(), "absent")
        )
    return rows


def _mean_cost(m: PerformanceModel) -> float:
    lo, hi = m.x_interval
    try:
        return model_integral(m, lo, hi) / (hi - lo)
    except ModelError:
        return 0.0


def best_model_order(
    baseline_models: Mapping[str, Sequence[PerformanceModel]],
    target_models: Mapping[str, Sequence[PerformanceModel]],
) -> list[DegradationRecord]:
    method = "best_model_order"
    base = _heads(baseline_models, "baseline", method)
    targ = _heads(target_models, "target", method)
    rows = []
    for uid in sorted(set(base) & set(targ)):
        b, t = base[uid], targ[uid]
        if t.order > b.order:
            result = "Degradation"
        elif t.order < b.order:
            result = "Optimization"
        else:
            result = NO_CHANGE
        delta = rel = 0.0
        ints = _integrals(b, t, method)
        if ints is not None:
            (lo, hi), ib, it = ints
            delta = (it - ib) / (hi - lo)
            rel = _signed_rel(it - ib, ib)
        rows.append(
            DegradationRecord(uid, result, delta, rel, "r_squared_min", min(b.r_squared, t.r_squared),
                              method, b.describe(), t.describe())
        )
    return rows + _missing_rows(base, targ, method)


def integral_comparison(
    baseline_models: Mapping[str, Sequence[PerformanceModel]],
    target_models: Mapping[str, Sequence[PerformanceModel]],
    t: DetectionThresholds = DetectionThresholds(),
) -> list[DegradationRecord]:
    method = "integral_comparison"
    base = _heads(baseline_models, "baseline", method)
    targ = _heads(target_models, "target", method)
    rows = []
    for uid in sorted(set(base) & set(targ)):
        b, m = base[uid], targ[uid]
        ints = _integrals(b, m, method)
        if ints is None:
            continue
        (lo, hi), ib, it = ints
        diff = it - ib
        from_desc = b.describe()
        if ib == 0:
            from_desc += " (zero baseline integral)"
            if abs(diff) < ABSOLUTE_EPSILON:
                result = NO_CHANGE
            else:
                result = "Degradation" if diff > 0 else "Optimization"
        else:
            rel = diff / ib
            if abs(rel) < t.integral_maybe:
                result = NO_CHANGE
            elif abs(rel) < t.integral_degradation:
                result = "MaybeDegradation" if rel > 0 else "MaybeOptimization"
            else:
                result = "Degradation" if rel > 0 else "Optimization"
        rows.append(
            DegradationRecord(uid, result, diff / (hi - lo), _signed_rel(diff, ib), "r_squared_min",
                              min(b.r_squared, m.r_squared), method, from_desc, m.describe())
        )
    return rows + _missing_rows(base, targ, method)


# -- exclusive time outliers --------------------------------------------------


@dataclass(frozen=True)
class OutlierFlags:
    """Per-value verdict of each statistic: +1 high outlier, -1 low, 0 none, None skipped."""

    zscore: Optional[int]
    iqr: int
    stddev: int

    def votes(self) -> list[int]:
        return [v for v in (self.zscore, self.iqr, self.stddev) if v is not None]


def outlier_flags(values: Sequence[float], t: DetectionThresholds = DetectionThresholds()) -> list[OutlierFlags]:
    """Flag outliers with the three statistics.

    Quartiles use linear interpolation between order statistics; sigma is the
    population standard deviation.  When the median absolute deviation is 0
    the modified z-score is skipped.
    """
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return []
    median = float(np.median(v))
    mad = float(np.median(np.abs(v - median)))
    q1, q3 = (float(q) for q in np.percentile(v, [25, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - t.iqr_multiplier * iqr, q3 + t.iqr_multiplier * iqr
    mean, sigma = float(v.mean()), float(v.std())
    lo_sd, hi_sd = mean - t.stddev_limit * sigma, mean + t.stddev_limit * sigma

    out = []
    for x in v:
        if mad > 0:
            z = ZSCORE_CONSTANT * (x - median) / mad
            zf = 1 if z > t.z_limit else -1 if z < -t.z_limit else 0
        else:
            zf = None
        qf = 1 if x > hi_fence else -1 if x < lo_fence else 0
        sf = 1 if x > hi_sd else -1 if x < lo_sd else 0
        out.append(OutlierFlags(zf, qf, sf))
    return out


def grade(flags: OutlierFlags) -> str:
    votes = flags.votes()
    high, low = votes.count(1), votes.count(-1)
    if high > low:
        return DEGRADATION_GRADES[min(high, 3) - 1]
    if low > high:
        return OPTIMIZATION_GRADES[min(low, 3) - 1]
    return NO_CHANGE


def group_of(uid: str, program: str) -> str:
    lib, sep, _ = uid.partition("::")
    return lib if sep and lib else program


def _program_name(p: Profile) -> str:
    return p.header.command or "program"


def baseline_durations(baseline: Profile, program: str) -> dict[str, float]:
    """Total baseline duration per group.

    The program group uses the inclusive time of top-level frames when the
    profile has them; otherwise (and for libraries) exclusive times are summed.
    """
    totals: dict[str, float] = {}
    for uid, amount in baseline.totals("exclusive").items():
        g = group_of(uid, program)
        totals[g] = totals.get(g, 0.0) + amount
    top = [r.amount_us for r in baseline.resources if r.kind == "inclusive" and r.trace == ()
           and group_of(r.uid, program) == program]
    if top:
        totals[program] = float(sum(top))
    return totals


def exclusive_time_outliers(
    baseline: Profile, target: Profile, t: DetectionThresholds = DetectionThresholds()
) -> list[DegradationRecord]:
    method = "exclusive_time_outliers"
    base = baseline.totals("exclusive")
    targ = target.totals("exclusive")
    if not base and not targ:
        warnings.warn("profiles carry no exclusive-time records", DetectionWarning, stacklevel=2)
    program = _program_name(target)
    durations = baseline_durations(baseline, program)

    def rel(uid: str, delta: float) -> float:
        return _signed_rel(delta, durations.get(group_of(uid, program), 0.0))

    common = [u for u in base if u in targ]
    deltas = [targ[u] - base[u] for u in common]
    flags = outlier_flags(deltas, t)
    mad_skipped = bool(flags) and flags[0].zscore is None
    kind = "outlier_statistics" + (" (mad=0, z-score skipped)" if mad_skipped else "")

    rows: list[DegradationRecord] = []
    for uid, delta, fl in zip(common, deltas, flags):
        votes = fl.votes()
        result = grade(fl)
        agreeing = votes.count(1 if result in DEGRADATION_GRADES else -1) if result != NO_CHANGE else 0
        rows.append(
            DegradationRecord(uid, result, delta, rel(uid, delta), kind, agreeing / len(votes), method,
                              _fmt_us(base[uid]), _fmt_us(targ[uid]))
        )
    for uid in targ:
        if uid not in base and targ[uid] > 0:
            rows.append(DegradationRecord(uid, "NotInBaseline", targ[uid], rel(uid, targ[uid]), kind, 1.0, method,
                                          "absent", _fmt_us(targ[uid])))
    for uid in base:
        if uid not in targ and base[uid] > 0:
            rows.append(DegradationRecord(uid, "NotInTarget", -base[uid], rel(uid, -base[uid]), kind, 1.0, method,
                                          _fmt_us(base[uid]), "absent"))

    groups: dict[str, float] = {}
    for r in rows:
        g = group_of(r.location, program)
        groups[g] = groups.get(g, 0.0) + r.delta_us
    if not groups:
        groups[program] = 0.0
    totals = []
    for g in sorted(groups):
        delta = groups[g]
        result = "TotalDegradation" if delta > 0 else "TotalOptimization" if delta < 0 else NO_CHANGE
        totals.append(
            DegradationRecord(g, result, delta, _signed_rel(delta, durations.get(g, 0.0)), "total", 1.0, method,
                              _fmt_us(durations.get(g, 0.0)), "")
        )

    kept = [r for r in rows if abs(r.delta_rel) >= t.cutoff_rel]
    return kept + totals


def _fmt_us(v: float) -> str:
    return f"{v:.0f}us"


# -- reports ----------------------------------------------------------------


@dataclass
class Report:
    method: str
    baseline_id: str
    target_id: str
    thresholds: DetectionThresholds
    records: list[DegradationRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def has_degradation(self) -> bool:
        t = self.thresholds
        return any(r.result in GATING and abs(r.delta_rel) >= t.cutoff_rel for r in self.records)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "baseline": self.baseline_id,
            "target": self.target_id,
            "thresholds": asdict(self.thresholds),
            "records": [r.to_dict() for r in self.records],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Report":
        return cls(
            d["method"],
            d["baseline"],
            d["target"],
            DetectionThresholds(**d["thresholds"]),
            [DegradationRecord.from_dict(r) for r in d["records"]],
            list(d.get("warnings", [])),
        )


def sort_records(records: Sequence[DegradationRecord]) -> list[DegradationRecord]:
    """Largest absolute change first; total rows last."""
    return sorted(records, key=lambda r: (r.is_total, -abs(r.delta_us), r.location))


def models_for(profile: Profile) -> dict[str, list[PerformanceModel]]:
    """Parametric models embedded in the profile, else freshly fitted ones."""
    embedded = group_models(profile.models)
    if embedded:
        return embedded
    return fit_profile(profile, "parametric")


def check_profiles(
    baseline: Profile,
    target: Profile,
    method: str = "exclusive_time_outliers",
    t: DetectionThresholds = DetectionThresholds(),
    baseline_id: str = "baseline",
    target_id: str = "target",
) -> Report:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DetectionWarning)
        if method == "exclusive_time_outliers":
            if not set(baseline.totals("exclusive")) & set(target.totals("exclusive")):
                warnings.warn("baseline and target share no functions", DetectionWarning)
            records = exclusive_time_outliers(baseline, target, t)
        else:
            bm, tm = models_for(baseline), models_for(target)
            if not set(bm) & set(tm):
                warnings.warn("baseline and target share no modelled functions", DetectionWarning)
            if method == "best_model_order":
                records = best_model_order(bm, tm)
            else:
                records = integral_comparison(bm, tm, t)
            records = [r for r in records if abs(r.delta_rel) >= t.cutoff_rel]
    notes = [str(w.message) for w in caught if issubclass(w.category, DetectionWarning)]
    return Report(method, baseline_id, target_id, t, sort_records(records), notes)


COLUMNS = ("Location", "Result", "Δ [ms]", "Δ [%]")


def _fixed(value: float) -> str:
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def row_cells(r: DegradationRecord) -> tuple[str, str, str, str]:
    return (r.location, r.result, _fixed(r.delta_us / 1000.0), _fixed(r.delta_rel))


def format_row(r: DegradationRecord) -> str:
    return " | ".join(row_cells(r))


def render_table(records: Sequence[DegradationRecord], align: bool = True) -> str:
    """Plain-text table ``Location | Result | Δ [ms] | Δ [%]``.

    With ``align`` the text columns are left-justified and the numeric ones
    right-justified to a common width; without it each row is the bare
    ``" | "``-joined cells.
    """
    rows = [COLUMNS] + [row_cells(r) for r in records]
    if not align:
        return "".join(" | ".join(cells) + "\n" for cells in rows)
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for n, cells in enumerate(rows):
        parts = [cells[0].ljust(widths[0]), cells[1].ljust(widths[1]),
                 cells[2].rjust(widths[2]), cells[3].rjust(widths[3])]
        lines.append(" | ".join(parts).rstrip())
        if n == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_report(report: Report, align: bool = True) -> str:
    t = report.thresholds
    head = (
        f"method: {report.method}\n"
        f"baseline: {report.baseline_id}\n"
        f"target: {report.target_id}\n"
        f"thresholds: z>{t.z_limit:g} iqr>{t.iqr_multiplier:g} sd>{t.stddev_limit:g} "
        f"integral {t.integral_maybe:g}/{t.integral_degradation:g} cutoff {t.cutoff_rel:g}%\n\n"
    )
    body = render_table(report.records, align)
    tail = "".join(f"warning: {w}\n" for w in report.warnings)
    return head + body + tail
