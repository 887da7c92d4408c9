"""Open-set rejection by thresholding the rank-1 retrieval distance.

A retrieval is accepted when its rank-1 L2 distance is at most the
threshold (the boundary is inclusive). :func:`calibrate` picks the threshold
that maximizes balanced accuracy on labeled samples; :func:`density_report`
tabulates Gaussian-kernel density estimates of both distributions for
plotting.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import CalibrationError, ValidationError

IN_SCOPE = "in-scope"
OUT_OF_SCOPE = "out-of-scope"
LABELS = (IN_SCOPE, OUT_OF_SCOPE)
ACCEPT, REJECT = "accept", "reject"

MODEL_FORMAT = "signrag-scope-filter"


@dataclass(frozen=True)
class DistanceSample:
    label: str
    rank1_distance: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        d = float(self.rank1_distance)
        if not math.isfinite(d) or d < 0:
            raise ValidationError(f"distance must be finite and non-negative, got {self.rank1_distance!r}")
        object.__setattr__(self, "rank1_distance", d)


@dataclass(frozen=True)
class LabelStats:
    mean: float
    sd: float
    count: int

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64)
        sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return cls(float(values.mean()), sd, int(values.size))


@dataclass(frozen=True)
class FilterModel:
    threshold: float
    in_scope: LabelStats
    out_of_scope: LabelStats
    balanced_accuracy: float
    separation: float
    separable: bool
    degenerate: bool = False

    def accepts_distance(self, distance: float) -> bool:
        return distance <= self.threshold

    def accepts(self, retrieval) -> bool:
        if not retrieval.hits:
            raise ValidationError("cannot filter an empty retrieval")
        return self.accepts_distance(retrieval.rank1_distance)

    def to_dict(self) -> dict:
        return dict(format=MODEL_FORMAT, version=1, **asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "FilterModel":
        if data.get("format") != MODEL_FORMAT:
            raise ValidationError("not a scope filter model file")
        fields = {k: v for k, v in data.items() if k not in ("format", "version")}
        fields["in_scope"] = LabelStats(**fields["in_scope"])
        fields["out_of_scope"] = LabelStats(**fields["out_of_scope"])
        return cls(**fields)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FilterModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _split(samples: Iterable[DistanceSample]):
    inside, outside = [], []
    for s in samples:
        (inside if s.label == IN_SCOPE else outside).append(s.rank1_distance)
    if len(inside) < 2 or len(outside) < 2:
        raise CalibrationError(
            f"need at least 2 samples per label, got {len(inside)} in-scope and {len(outside)} out-of-scope"
        )
    return np.sort(np.asarray(inside)), np.sort(np.asarray(outside))


def balanced_accuracy(threshold: float, in_scope, out_of_scope) -> float:
    """Mean of the in-scope acceptance rate and out-of-scope rejection rate."""
    in_scope, out_of_scope = np.asarray(in_scope), np.asarray(out_of_scope)
    tpr = np.mean(in_scope <= threshold)
    tnr = np.mean(out_of_scope > threshold)
    return float((tpr + tnr) / 2)


def calibrate(samples: Sequence[DistanceSample]) -> FilterModel:
    """Choose the threshold maximizing balanced accuracy.

    Balanced accuracy is constant on each interval between consecutive
    distinct distances, so every interval is scored exactly (in integer
    arithmetic). Among maximizing intervals the widest contiguous run wins,
    the lowest on ties, and the threshold is its midpoint. When no interval
    does better than accepting everything, the threshold accepts everything
    and the model is flagged degenerate.
    """
    inside, outside = _split(samples)
    n_in, n_out = inside.size, outside.size
    stats = LabelStats.of(inside), LabelStats.of(outside)
    values = np.unique(np.concatenate([inside, outside]))
    if values.size == 1:
        return FilterModel(float(values[0]), *stats, 0.5, 0.0, False, degenerate=True)

    lows = values[:-1]
    accepted_in = np.searchsorted(inside, lows, side="right")
    rejected_out = n_out - np.searchsorted(outside, lows, side="right")
    score = accepted_in.astype(np.int64) * n_out + rejected_out.astype(np.int64) * n_in
    best = score.max()
    trivial = n_in * n_out  # accept everything (or reject everything): BA 0.5
    if best < trivial:
        return FilterModel(float(values[-1]), *stats, 0.5, 0.0, False, degenerate=True)
    hits = np.flatnonzero(score == best)

    runs = []
    start = prev = hits[0]
    for i in hits[1:]:
        if i != prev + 1:
            runs.append((start, prev))
            start = i
        prev = i
    runs.append((start, prev))
    a, b = max(runs, key=lambda r: (values[r[1] + 1] - values[r[0]], -r[0]))
    threshold = float((values[a] + values[b + 1]) / 2)

    ba = best / (2 * n_in * n_out)
    separable = bool(inside.max() < outside.min())
    return FilterModel(
        threshold=threshold,
        in_scope=stats[0],
        out_of_scope=stats[1],
        balanced_accuracy=float(ba),
        separation=float(max(0.0, 2 * ba - 1)),
        separable=separable,
        degenerate=bool(ba <= 0.5),
    )


def apply(model: FilterModel, retrieval) -> str:
    return ACCEPT if model.accepts(retrieval) else REJECT


# ---------------------------------------------------------------------------
# density estimation

def silverman_bandwidth(values) -> float:
    """Silverman's rule of thumb, ``0.9 * min(sd, IQR / 1.34) * n ** -0.2``."""
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    h = 0.9 * spread * n ** -0.2
    if h <= 0:
        # a point mass still needs a finite kernel to be plottable
        h = 1e-3 * max(1.0, float(np.abs(x).max()))
    return float(h)


def gaussian_kde(values, points, bandwidth=None) -> np.ndarray:
    """Gaussian kernel density of ``values`` evaluated at ``points``."""
    x = np.asarray(values, dtype=np.float64)
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    out = np.empty(pts.shape)
    for start in range(0, pts.size, 4096):
        z = (pts[start:start + 4096, None] - x[None, :]) / h
        out[start:start + 4096] = np.exp(-0.5 * z * z).sum(axis=1)
    return out / (x.size * h * math.sqrt(2 * math.pi))


@dataclass
class DensityReport:
    grid: np.ndarray
    densities: Dict[str, np.ndarray]
    bandwidths: Dict[str, float]

    def integral(self, label: str) -> float:
        return float(np.trapezoid(self.densities[label], self.grid))

    def overlap(self) -> float:
        """Area under the pointwise minimum of the two densities."""
        lo = np.minimum(self.densities[IN_SCOPE], self.densities[OUT_OF_SCOPE])
        return float(np.trapezoid(lo, self.grid))

    def to_table(self, delimiter: str = "\t") -> str:
        lines = [delimiter.join(("distance",) + LABELS)]
        for i, g in enumerate(self.grid):
            lines.append(delimiter.join(
                [f"{g:.6g}"] + [f"{self.densities[lab][i]:.6g}" for lab in LABELS]
            ))
        return "\n".join(lines) + "\n"


def density_report(samples: Sequence[DistanceSample], grid_size: int = 256,
                   max_grid: int = 200_000) -> DensityReport:
    """Per-label KDE on a shared uniform grid.

    The grid covers every sample plus five bandwidths on each side. It has at
    least ``grid_size`` points, and more when needed to keep the step below a
    quarter of the narrowest bandwidth so each curve integrates to one.
    """
    inside, outside = _split(samples)
    data = {IN_SCOPE: inside, OUT_OF_SCOPE: outside}
    bw = {lab: silverman_bandwidth(v) for lab, v in data.items()}
    lo = min(v.min() - 5 * bw[lab] for lab, v in data.items())
    hi = max(v.max() + 5 * bw[lab] for lab, v in data.items())
    needed = int(math.ceil((hi - lo) / (min(bw.values()) / 4))) + 1
    n = min(max(grid_size, needed), max_grid)
    grid = np.linspace(lo, hi, n)
    dens = {lab: gaussian_kde(v, grid, bw[lab]) for lab, v in data.items()}
    return DensityReport(grid, dens, bw)


# ---------------------------------------------------------------------------
# files

def write_samples(path, samples: Iterable[DistanceSample]) -> None:
    lines = ["label\tdistance"] + [f"{s.label}\t{s.rank1_distance!r}" for s in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_samples(path) -> List[DistanceSample]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        raw = raw.strip()
        if not raw or raw.startswith("#") or (lineno == 1 and raw.startswith("label")):
            continue
        parts = raw.replace(",", "\t").split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'label<TAB>distance'")
        try:
            out.append(DistanceSample(parts[0], float(parts[1])))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


class ThresholdScopeFilter(ClassifierMixin, BaseEstimator):
    """Scikit-learn view of the scope filter.

    ``X`` holds rank-1 distances (shape ``(n,)`` or ``(n, 1)``); ``y`` is 1 for
    in-scope and 0 for out-of-scope. ``predict`` returns 1 for accepted
    queries.
    """

    def fit(self, X, y):
        d = _as_distances(X)
        y = np.asarray(y).astype(int)
        if y.shape != d.shape:
            raise ValidationError("X and y must have the same length")
        samples = [DistanceSample(IN_SCOPE if lab == 1 else OUT_OF_SCOPE, v) for v, lab in zip(d, y)]
        self.model_ = calibrate(samples)
        self.threshold_ = self.model_.threshold
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return self.threshold_ - _as_distances(X)

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)


def _as_distances(X):
    d = np.asarray(X, dtype=np.float64)
    if d.ndim == 2 and d.shape[1] == 1:
        d = d[:, 0]
    if d.ndim != 1:
        raise ValidationError("expected a 1-D array of rank-1 distances")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distances must be finite and non-negative")
    return d
