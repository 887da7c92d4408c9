"""Repeated-run accuracy evaluation and per-stage latency benchmarking.

Three accuracies are reported per run: Top-1 (rank-1 retrieval hit is the
true code), Top-k (true code anywhere in the retrieved candidates) and Gen
(final generated code is the true code).
"""
from __future__ import annotations

import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Sequence

from .catalog import MANIFEST_VERSION, _read_jsonl, validate_code
from .errors import ManifestParseError, ValidationError
from .generation import SOURCE_ERROR, recognize
from .retrieval import DEFAULT_K
from .timing import STAGES

DATASET_FORMAT = "signrag-dataset"
CONDITIONS = ("ideal", "real-world")


@dataclass(frozen=True)
class LabeledExample:
    image: object
    true_code: str
    condition: str = "ideal"


def load_dataset(path, check_images=True) -> List[LabeledExample]:
    """Read a dataset manifest of ``{"image", "code", "condition"}`` records."""
    path = Path(path)
    out = []
    for lineno, record in _read_jsonl(path, DATASET_FORMAT):
        if not isinstance(record.get("image"), str) or not isinstance(record.get("code"), str):
            raise ManifestParseError(path, lineno, "records need string fields 'image' and 'code'")
        try:
            validate_code(record["code"])
        except ValidationError as exc:
            raise ManifestParseError(path, lineno, str(exc)) from None
        condition = record.get("condition", "ideal")
        if condition not in CONDITIONS:
            raise ManifestParseError(path, lineno, f"condition must be one of {CONDITIONS}")
        image = path.parent / record["image"]
        if check_images and not image.is_file():
            raise FileNotFoundError(f"dataset image not found: {image}")
        out.append(LabeledExample(image, record["code"], condition))
    return out


def write_dataset(path, examples: Sequence[LabeledExample]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps({"format": DATASET_FORMAT, "version": MANIFEST_VERSION})]
    for ex in examples:
        image = Path(ex.image).resolve().relative_to(base).as_posix()
        lines.append(json.dumps({"image": image, "code": ex.true_code, "condition": ex.condition}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RunMetrics:
    """Accuracies of one run, in percent."""

    top1_acc: float
    top5_acc: float
    gen_acc: float
    n: int
    run_index: int = 1
    by_source: Dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("top1_acc", "top5_acc", "gen_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValidationError(f"{name}={v} outside [0, 100]")
        if self.top1_acc > self.top5_acc:
            raise ValidationError(f"top1_acc={self.top1_acc} exceeds top5_acc={self.top5_acc}")

    @classmethod
    def from_counts(cls, top1, top5, gen, n, run_index=1, by_source=None):
        if n <= 0:
            raise ValidationError("a run needs at least one example")
        return cls(100.0 * top1 / n, 100.0 * top5 / n, 100.0 * gen / n, n, run_index, dict(by_source or {}))


def round_half_up(value, places: int = 2) -> Decimal:
    """Round the shortest decimal form of ``value`` half-up."""
    return Decimal(repr(value) if isinstance(value, float) else str(value)).quantize(
        Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP
    )


_COLUMNS = ("top1_acc", "top5_acc", "gen_acc")


def mean_row(metrics: Sequence[RunMetrics]) -> Dict[str, Decimal]:
    """Exact decimal mean of each accuracy column across runs."""
    if not metrics:
        raise ValidationError("no runs to average")
    n = Decimal(len(metrics))
    return {c: sum(Decimal(repr(float(getattr(m, c)))) for m in metrics) / n for c in _COLUMNS}


def report(metrics: Sequence[RunMetrics], format: str = "plain-table") -> str:
    """Render runs plus a labeled mean row.

    ``plain-table`` shows percentages rounded half-up to two decimals;
    ``delimited`` is tab-separated with unrounded values.
    """
    if not metrics:
        raise ValidationError("no runs to report")
    means = mean_row(metrics)
    if format == "plain-table":
        header = ("#Run", "Top-1 Acc [%]", "Top-5 Acc [%]", "Gen Acc [%]")
        rows = [(str(m.run_index),) + tuple(str(round_half_up(getattr(m, c))) for c in _COLUMNS)
                for m in metrics]
        rows.append(("Mean",) + tuple(str(round_half_up(means[c])) for c in _COLUMNS))
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(4)]

        def line(cells):
            return "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"

        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([line(header), rule] + [line(r) for r in rows[:-1]] + [rule, line(rows[-1])]) + "\n"
    if format == "delimited":
        lines = ["run\ttop1_acc\ttop5_acc\tgen_acc\tn"]
        for m in metrics:
            lines.append("\t".join([str(m.run_index)] + [repr(float(getattr(m, c))) for c in _COLUMNS] + [str(m.n)]))
        lines.append("\t".join(["mean"] + [str(means[c]) for c in _COLUMNS] + [str(metrics[0].n)]))
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown report format {format!r}")


def parse_delimited(text: str) -> List[RunMetrics]:
    """Inverse of ``report(..., "delimited")`` for the per-run rows."""
    out = []
    for raw in text.strip().splitlines()[1:]:
        parts = raw.split("\t")
        if parts[0] == "mean":
            continue
        out.append(RunMetrics(float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]), int(parts[0])))
    return out


@dataclass
class EvaluationResult:
    runs: List[RunMetrics]
    outcomes: List[List[dict]]

    @property
    def mean(self) -> Dict[str, Decimal]:
        return mean_row(self.runs)

    def report(self, format="plain-table") -> str:
        return report(self.runs, format)


def _check_dataset(dataset, store):
    if not dataset:
        raise ValidationError("dataset is empty")
    missing = sorted({ex.true_code for ex in dataset if ex.true_code not in store})
    if missing:
        raise ValidationError(f"true codes not in store: {', '.join(missing)}")


def _score(example, outcomes):
    """Return ``(top1, topk, gen, outcome)`` for one example; the first sign counts."""
    if not outcomes:
        return False, False, False, None
    o = outcomes[0]
    codes = o.retrieval.codes if o.retrieval is not None else []
    truth = example.true_code
    return bool(codes) and codes[0] == truth, truth in codes, o.final_code == truth, o


def evaluate(dataset: Sequence[LabeledExample], store, backends, runs: int = 5, k: int = DEFAULT_K,
             scope_filter=None, audit_path=None, max_workers: int = 1) -> EvaluationResult:
    """Run the full pipeline over ``dataset`` ``runs`` times.

    Stochastic mock generators are reseeded per run through
    ``backends.for_run``. Every outcome is kept (and appended to
    ``audit_path`` as JSON lines if given).
    """
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    _check_dataset(dataset, store)
    results, audit = [], []
    for run in range(1, runs + 1):
        run_backends = backends.for_run(run)
        top1 = top5 = gen = 0
        sources = Counter()
        records = []
        for i, ex in enumerate(dataset):
            outcomes = recognize(ex.image, store, run_backends, k, scope_filter=scope_filter,
                                 truth=ex.true_code, max_workers=max_workers)
            t1, t5, g, o = _score(ex, outcomes)
            top1 += t1
            top5 += t5
            gen += g
            sources[o.source if o is not None else "no-sign"] += 1
            record = {"run": run, "example": i, "image": str(ex.image), "true_code": ex.true_code,
                      "condition": ex.condition, "top1": t1, "topk": t5, "gen": g}
            record["outcome"] = o.to_dict() if o is not None else None
            records.append(record)
        results.append(RunMetrics.from_counts(top1, top5, gen, len(dataset), run, sources))
        audit.append(records)
    if audit_path is not None:
        with open(audit_path, "w", encoding="utf-8") as fh:
            for records in audit:
                for r in records:
                    fh.write(json.dumps(r, sort_keys=True) + "\n")
    return EvaluationResult(results, audit)


# ---------------------------------------------------------------------------
# latency

@dataclass(frozen=True)
class DurationStats:
    mean: float
    min: float
    max: float
    sd: float
    count: int

    @classmethod
    def of(cls, values_ms):
        v = list(values_ms)
        if not v:
            return cls(math.nan, math.nan, math.nan, math.nan, 0)
        sd = statistics.stdev(v) if len(v) > 1 else 0.0
        return cls(statistics.fmean(v), min(v), max(v), sd, len(v))


_STAGE_LABELS = {
    "descriptor_ms": "VLM descriptor",
    "embed_ms": "embedding",
    "store_query_ms": "database query",
    "generation_ms": "LLM classifier",
}


def _secs(ms):
    return f"{ms / 1e3:.2f}s" if ms >= 100 else f"{ms:.2f}ms"


@dataclass
class LatencyReport:
    total: DurationStats
    stages: Dict[str, DurationStats]
    trials: int
    failed: int
    failures: List[str] = field(default_factory=list)

    def summary(self) -> str:
        """One paragraph in seconds: mean, range, sd, then stages by mean."""
        t = self.total
        if not t.count:
            return f"All {self.trials} trials failed."
        parts = [
            f"Over {self.trials} trials ({self.failed} failed), the total average latency was "
            f"{_secs(t.mean)}, ranging from {_secs(t.min)} to {_secs(t.max)} "
            f"with a standard deviation of {_secs(t.sd)}."
        ]
        ranked = sorted(self.stages.items(), key=lambda kv: -kv[1].mean if kv[1].count else 0)
        breakdown = ", ".join(f"{_STAGE_LABELS[s]} {_secs(st.mean)}" for s, st in ranked if st.count)
        if breakdown:
            parts.append(f"Stage means: {breakdown}.")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "failed": self.failed,
            "total_ms": vars(self.total),
            "stages_ms": {s: vars(st) for s, st in self.stages.items()},
            "failures": self.failures,
        }

    def to_table(self, delimiter="\t") -> str:
        lines = [delimiter.join(("stage", "mean_ms", "min_ms", "max_ms", "sd_ms", "count"))]
        for name, st in list(self.stages.items()) + [("total_ms", self.total)]:
            lines.append(delimiter.join([name] + [f"{x:.4f}" for x in (st.mean, st.min, st.max, st.sd)] + [str(st.count)]))
        return "\n".join(lines) + "\n"


def bench_latency(dataset: Sequence[LabeledExample], store, backends, trials: int = 100,
                  k: int = DEFAULT_K, scope_filter=None) -> LatencyReport:
    """Time ``trials`` sequential recognitions, cycling through ``dataset``.

    Failed trials are counted and listed but excluded from the statistics.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not dataset:
        raise ValidationError("dataset is empty")
    totals, per_stage = [], {s: [] for s in STAGES}
    failures = []
    for t in range(trials):
        ex = dataset[t % len(dataset)]
        outcomes = recognize(ex.image, store, backends, k, scope_filter=scope_filter, truth=ex.true_code)
        if not outcomes or outcomes[0].source == SOURCE_ERROR:
            reason = outcomes[0].error if outcomes else "no sign described"
            failures.append(f"trial {t}: {reason}")
            continue
        timings = outcomes[0].timings
        totals.append(timings.total_ms)
        for s in STAGES:
            v = getattr(timings, s)
            if v is not None:
                per_stage[s].append(v)
    return LatencyReport(
        total=DurationStats.of(totals),
        stages={s: DurationStats.of(v) for s, v in per_stage.items()},
        trials=trials,
        failed=len(failures),
        failures=failures,
    )
