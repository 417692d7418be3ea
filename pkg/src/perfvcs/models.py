"""Performance models: cost as a function of workload size.

Parametric families are fitted by ordinary least squares after linearizing
(log of x for logarithmic/linearithmic terms, log of y for power and
exponential), and always scored by R² on the original scale:

=============  ====================  ==========================
family         prediction            fitted as
=============  ====================  ==========================
constant       b0                    mean of y
logarithmic    b0 + b1 ln x          y  on ln x
linear         b0 + b1 x             y  on x
linearithmic   b0 + b1 x ln x        y  on x ln x
quadratic      b0 + b1 x²            y  on x²
power          b0 x^b1               ln y on ln x
exponential    b0 b1^x               ln y on x
=============  ====================  ==========================

The list above is also the complexity ladder used for tie-breaks and by the
model-order detector.  Placing ``power`` between quadratic and exponential is
a convention; its real order depends on the fitted exponent.

Nonparametric estimators (regressogram, centred moving average, Gaussian
Nadaraya-Watson kernel) keep the points they need to evaluate themselves in
``knots`` so a stored model is self-contained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from statistics import NormalDist
from typing import Iterable, Optional, Sequence

import numpy as np

from perfvcs.profile import Profile

PARAMETRIC = ("constant", "logarithmic", "linear", "linearithmic", "quadratic", "power", "exponential")
NONPARAMETRIC = ("regressogram", "moving_average", "kernel")
FAMILIES = PARAMETRIC + NONPARAMETRIC
ORDER = {name: i for i, name in enumerate(PARAMETRIC)}

QUADRATURE_SAMPLES = 1000
# level of the test that lets a sloped family displace the constant one
SIGNIFICANCE = 0.01


class ModelError(ValueError):
    pass


class DomainError(ModelError):
    pass


@dataclass(frozen=True)
class DataSeries:
    uid: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))

    @property
    def x(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)

    def check(self, minimum: int = 3) -> None:
        if len(self.points) < minimum:
            raise ModelError(f"{self.uid}: {len(self.points)} points, need at least {minimum}")
        if len({p[0] for p in self.points}) < 2:
            raise ModelError(f"{self.uid}: need at least 2 distinct x values")
        if any(x < 0 or y < 0 for x, y in self.points):
            raise ModelError(f"{self.uid}: points must be nonnegative")


def series_from_profile(profile: Profile, kind: str = "inclusive") -> dict[str, DataSeries]:
    """One series per uid from records that carry a workload size.

    Records of the requested kind are used; a uid without any falls back to the
    other kind.  Amounts at the same size stay separate points.
    """
    by_kind: dict[str, dict[str, list]] = {"inclusive": {}, "exclusive": {}}
    for r in profile.resources:
        size = profile.size_of(r)
        if size is None:
            continue
        by_kind[r.kind].setdefault(r.uid, []).append((size, r.amount_us))
    other = "exclusive" if kind == "inclusive" else "inclusive"
    out = {}
    for uid in profile.uids():
        pts = by_kind[kind].get(uid) or by_kind[other].get(uid)
        if pts:
            out[uid] = DataSeries(uid, sorted(pts))
    return out


@dataclass(frozen=True)
class PerformanceModel:
    uid: str
    family: str
    r_squared: float
    x_interval: tuple[float, float]
    b0: Optional[float] = None
    b1: Optional[float] = None
    bins: Optional[tuple[tuple[float, float, float], ...]] = None
    window: Optional[int] = None
    bandwidth: Optional[float] = None
    knots: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        object.__setattr__(self, "x_interval", tuple(self.x_interval))
        if self.bins is not None:
            object.__setattr__(self, "bins", tuple(tuple(b) for b in self.bins))
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(tuple(k) for k in self.knots))

    @property
    def order(self) -> int:
        return ORDER.get(self.family, len(ORDER))

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        f = self.family
        b0, b1 = self.b0, self.b1
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if f == "constant":
                return np.full_like(x, b0)
            if f == "logarithmic":
                return b0 + b1 * np.log(x)
            if f == "linear":
                return b0 + b1 * x
            if f == "linearithmic":
                return b0 + b1 * _xlogx(x)
            if f == "quadratic":
                return b0 + b1 * x**2
            if f == "power":
                return b0 * np.power(x, b1)
            if f == "exponential":
                return b0 * np.power(b1, x)
        if f == "regressogram":
            return _step(self.bins, x)
        if f == "moving_average":
            kx, ky = np.array(self.knots).T
            return np.interp(x, kx, ky)
        return _nadaraya_watson(np.array(self.knots), self.bandwidth, x)

    def describe(self) -> str:
        if self.family in PARAMETRIC:
            return self.family
        if self.family == "regressogram":
            return f"regressogram({len(self.bins)} bins)"
        if self.family == "moving_average":
            return f"moving_average(w={self.window})"
        return f"kernel(h={self.bandwidth:.4g})"

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "family": self.family,
            "b0": self.b0,
            "b1": self.b1,
            "bins": None if self.bins is None else [list(b) for b in self.bins],
            "window": self.window,
            "bandwidth": self.bandwidth,
            "r_squared": self.r_squared,
            "x_interval": list(self.x_interval),
            "knots": None if self.knots is None else [list(k) for k in self.knots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerformanceModel":
        return cls(
            uid=d["uid"],
            family=d["family"],
            r_squared=d["r_squared"],
            x_interval=tuple(d["x_interval"]),
            b0=d.get("b0"),
            b1=d.get("b1"),
            bins=d.get("bins"),
            window=d.get("window"),
            bandwidth=d.get("bandwidth"),
            knots=d.get("knots"),
        )


def _xlogx(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def r_squared(y, fitted) -> float:
    """1 - SSE/SST clamped to [0, 1].  With SST = 0 the score is 1 iff SSE = 0."""
    y = np.asarray(y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if not np.all(np.isfinite(fitted)):
        return 0.0
    sse = float(np.sum((y - fitted) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    scale = max(1.0, float(np.max(np.abs(y)))) ** 2 * len(y)
    if sst <= 1e-24 * scale:
        return 1.0 if sse <= 1e-18 * scale else 0.0
    return min(1.0, max(0.0, 1.0 - sse / sst))


# -- parametric ---------------------------------------------------------------


def _linearize(family: str, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if family in ("logarithmic", "linearithmic", "power") and np.any(x <= 0):
        raise DomainError(f"{family} needs x > 0")
    if family in ("power", "exponential") and np.any(y <= 0):
        raise DomainError(f"{family} needs y > 0")
    if family == "logarithmic":
        return np.log(x), y
    if family == "linear":
        return x, y
    if family == "linearithmic":
        return x * np.log(x), y
    if family == "quadratic":
        return x**2, y
    if family == "power":
        return np.log(x), np.log(y)
    if family == "exponential":
        return x, np.log(y)
    raise ModelError(f"not a parametric family: {family!r}")


def _ols(u: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    um, vm = u.mean(), v.mean()
    du = u - um
    sxx = float(np.dot(du, du))
    if sxx == 0:
        raise ModelError("regressor has zero variance")
    slope = float(np.dot(du, v - vm)) / sxx
    return float(vm - slope * um), slope


def fit_parametric(series: DataSeries, family: str) -> PerformanceModel:
    series.check(3)
    x, y = series.x, series.y
    if family == "constant":
        b0, b1 = float(y.mean()), 0.0
    else:
        u, v = _linearize(family, x, y)
        a, slope = _ols(u, v)
        if family == "power":
            b0, b1 = math.exp(a), slope
        elif family == "exponential":
            b0, b1 = math.exp(a), math.exp(slope)
        else:
            b0, b1 = a, slope
    model = PerformanceModel(series.uid, family, 0.0, (float(x.min()), float(x.max())), b0=b0, b1=b1)
    return _scored(model, x, y)


def _scored(model: PerformanceModel, x: np.ndarray, y: np.ndarray) -> PerformanceModel:
    return replace(model, r_squared=r_squared(y, model.predict(x)))


def _t_quantile(p: float, df: int) -> float:
    """Student t quantile: exact for 1 and 2 degrees of freedom, Cornish-Fisher above."""
    if df == 1:
        return math.tan(math.pi * (p - 0.5))
    if df == 2:
        return (2 * p - 1) / math.sqrt(2 * p * (1 - p))
    z = NormalDist().inv_cdf(p)
    return (z + (z**3 + z) / (4 * df) + (5 * z**5 + 16 * z**3 + 3 * z) / (96 * df**2)
            + (3 * z**7 + 19 * z**5 + 17 * z**3 - 15 * z) / (384 * df**3))


def significant_r_squared(n: int, alpha: float = SIGNIFICANCE) -> float:
    """Smallest R² of a one-regressor fit on ``n`` points that beats the mean at level ``alpha``."""
    df = n - 2
    if df < 1:
        return 1.0
    f = _t_quantile(1 - alpha / 2, df) ** 2
    return f / (f + df)


def fit_all(series: DataSeries, families: Sequence[str] = PARAMETRIC, alpha: float = SIGNIFICANCE) -> list[PerformanceModel]:
    """Every applicable parametric fit, best R² first; ties go to the lower order.

    Every family nests the constant one, so a noisy flat series would always
    be explained "better" by some sloped family.  When no family reaches the
    R² a one-regressor F-test needs at level ``alpha``, the constant fit is
    moved to the head of the list.
    """
    try:
        series.check(3)
    except ModelError:
        return []
    fits = []
    for family in families:
        try:
            fits.append(fit_parametric(series, family))
        except ModelError:
            continue
    # R² equal up to rounding noise counts as a tie
    fits.sort(key=lambda m: (-round(m.r_squared, 12), m.order))
    if alpha and fits and fits[0].family != "constant":
        constant = [m for m in fits if m.family == "constant"]
        if constant and fits[0].r_squared < significant_r_squared(len(series.points), alpha):
            fits.remove(constant[0])
            fits.insert(0, constant[0])
    return fits


# -- nonparametric ----------------------------------------------------------


def _step(bins, x: np.ndarray) -> np.ndarray:
    edges = np.array([b[0] for b in bins[1:]], dtype=float)
    means = np.array([b[2] for b in bins], dtype=float)
    idx = np.searchsorted(edges, x, side="right")
    return means[idx]


def fit_regressogram(series: DataSeries, bin_count: int) -> PerformanceModel:
    """Equal-width bins over the observed x range; empty bins repeat the bin to their left."""
    if bin_count < 1:
        raise ModelError("bin_count must be >= 1")
    series.check(2)
    x, y = series.x, series.y
    lo, hi = float(x.min()), float(x.max())
    width = (hi - lo) / bin_count
    starts = [lo + i * width for i in range(bin_count)]
    idx = np.searchsorted(np.array(starts[1:]), x, side="right")
    bins = []
    prev = None
    for i, start in enumerate(starts):
        end = hi if i == bin_count - 1 else starts[i + 1]
        mask = idx == i
        mean = float(y[mask].mean()) if mask.any() else prev
        bins.append((start, end, mean))
        prev = mean
    model = PerformanceModel(series.uid, "regressogram", 0.0, (lo, hi), bins=tuple(bins))
    return _scored(model, x, y)


def moving_average(y: Sequence[float], window: int) -> np.ndarray:
    """Centred simple moving average; windows shrink at both ends."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    left, right = (window - 1) // 2, window // 2
    csum = np.concatenate([[0.0], np.cumsum(y)])
    lo = np.maximum(np.arange(n) - left, 0)
    hi = np.minimum(np.arange(n) + right, n - 1) + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def fit_moving_average(series: DataSeries, window: int) -> PerformanceModel:
    if window < 1:
        raise ModelError("window must be >= 1")
    if window > len(series.points):
        raise ModelError(f"window {window} exceeds the {len(series.points)} points")
    series.check(2)
    order = np.argsort(series.x, kind="stable")
    x, y = series.x[order], series.y[order]
    smooth = moving_average(y, window)
    # repeated x values collapse to their mean smoothed value for interpolation
    ux = np.unique(x)
    uy = np.array([smooth[x == v].mean() for v in ux])
    knots = tuple(zip(ux.tolist(), uy.tolist()))
    model = PerformanceModel(
        series.uid, "moving_average", r_squared(y, smooth), (float(x[0]), float(x[-1])), window=window, knots=knots
    )
    return model


def silverman_bandwidth(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    sigma = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sigma, (q75 - q25) / 1.34) if q75 > q25 else sigma
    return 0.9 * spread * len(x) ** (-0.2)


def _nadaraya_watson(points: np.ndarray, bandwidth: float, at: np.ndarray) -> np.ndarray:
    at = np.asarray(at, dtype=float)
    flat = np.atleast_1d(at).ravel()
    px, py = points[:, 0], points[:, 1]
    z = (flat[:, None] - px[None, :]) / bandwidth
    w = np.exp(-0.5 * z * z)
    total = w.sum(axis=1)
    zero = np.nonzero(total == 0)[0]
    if len(zero):
        raise ModelError(f"all kernel weights vanish at x={float(flat[zero[0]]):g} (bandwidth {bandwidth!r} too small)")
    return (w @ py / total).reshape(at.shape)


def fit_kernel(series: DataSeries, bandwidth: float = 0.0) -> PerformanceModel:
    """Gaussian Nadaraya-Watson smoother.  ``bandwidth=0`` picks Silverman's rule."""
    if bandwidth < 0:
        raise ModelError("bandwidth must be positive (or 0 for automatic)")
    series.check(2)
    x, y = series.x, series.y
    if bandwidth == 0:
        bandwidth = silverman_bandwidth(x)
        if bandwidth <= 0:
            raise ModelError("cannot derive a bandwidth from a single x value")
    pts = np.column_stack([x, y])
    fitted = _nadaraya_watson(pts, bandwidth, x)
    knots = tuple(zip(x.tolist(), y.tolist()))
    return PerformanceModel(
        series.uid,
        "kernel",
        r_squared(y, fitted),
        (float(x.min()), float(x.max())),
        bandwidth=float(bandwidth),
        knots=knots,
    )


# -- integrals ----------------------------------------------------------------


def _antiderivative(model: PerformanceModel, t: float) -> float:
    f, b0, b1 = model.family, model.b0, model.b1
    if f == "constant":
        return b0 * t
    if f == "logarithmic":
        return b0 * t + b1 * (t * math.log(t) - t)
    if f == "linear":
        return b0 * t + b1 * t * t / 2
    if f == "linearithmic":
        return b0 * t + b1 * ((t * t / 2) * math.log(t) - t * t / 4 if t > 0 else 0.0)
    if f == "quadratic":
        return b0 * t + b1 * t**3 / 3
    if f == "power":
        if b1 == -1:
            return b0 * math.log(t)
        return b0 * t ** (b1 + 1) / (b1 + 1) if t > 0 else 0.0
    if f == "exponential":
        if b1 == 1:
            return b0 * t
        return b0 * b1**t / math.log(b1)
    raise ModelError(f"no closed form for {f}")


def _check_domain(model: PerformanceModel, a: float) -> None:
    f = model.family
    if f == "logarithmic" and a <= 0:
        raise DomainError("logarithmic model integrated over a <= 0")
    if f in ("linearithmic",) and a < 0:
        raise DomainError("linearithmic model integrated over a < 0")
    if f == "power" and (a < 0 or (a == 0 and model.b1 <= -1)):
        raise DomainError("power model integral diverges or is undefined on this interval")
    if f == "exponential" and model.b1 <= 0:
        raise DomainError("exponential base must be positive")


def _step_integral(bins, a: float, b: float) -> float:
    # first and last bins extend to -inf / +inf
    edges = [-math.inf] + [bn[0] for bn in bins[1:]] + [math.inf]
    total = 0.0
    for i, bn in enumerate(bins):
        lo, hi = max(a, edges[i]), min(b, edges[i + 1])
        if hi > lo:
            total += bn[2] * (hi - lo)
    return total


def model_integral(model: PerformanceModel, a: float, b: float, samples: int = QUADRATURE_SAMPLES) -> float:
    """Area under ``model`` on [a, b].

    Closed form for parametric families, exact for the regressogram step
    function, composite trapezoid on ``samples`` uniform intervals otherwise.
    """
    if not a < b:
        raise ModelError(f"need a < b, got [{a}, {b}]")
    if model.family in PARAMETRIC:
        _check_domain(model, a)
        return _antiderivative(model, b) - _antiderivative(model, a)
    if model.family == "regressogram":
        return _step_integral(model.bins, a, b)
    xs = np.linspace(a, b, max(samples, 1) + 1)
    ys = model.predict(xs)
    return float(np.sum((ys[1:] + ys[:-1]) * np.diff(xs)) / 2)


def fit_profile(
    profile: Profile,
    method: str = "parametric",
    kind: str = "inclusive",
    bins: int = 10,
    window: int = 3,
    bandwidth: float = 0.0,
) -> dict[str, list[PerformanceModel]]:
    """Fit models for every uid that has a data series."""
    if method not in ("parametric",) + NONPARAMETRIC:
        raise ModelError(f"unknown method {method!r}")
    out: dict[str, list[PerformanceModel]] = {}
    for uid, series in series_from_profile(profile, kind).items():
        try:
            if method == "parametric":
                models = fit_all(series)
            elif method == "regressogram":
                models = [fit_regressogram(series, bins)]
            elif method == "moving_average":
                models = [fit_moving_average(series, min(window, len(series.points)))]
            else:
                models = [fit_kernel(series, bandwidth)]
        except ModelError:
            continue
        if models:
            out[uid] = models
    return out


def group_models(models: Iterable[PerformanceModel], parametric_only: bool = True) -> dict[str, list[PerformanceModel]]:
    """Models by uid in stored order, which :func:`fit_profile` leaves best first."""
    out: dict[str, list[PerformanceModel]] = {}
    for m in models:
        if parametric_only and m.family not in PARAMETRIC:
            continue
        out.setdefault(m.uid, []).append(m)
    return out
