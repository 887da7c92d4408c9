"""Per-stage wall-clock timings for one recognition."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from typing import Optional

STAGES = ("descriptor_ms", "embed_ms", "store_query_ms", "generation_ms")


@dataclass(frozen=True)
class StageTimings:
    """Durations in milliseconds; ``None`` marks a stage that did not run."""

    descriptor_ms: Optional[float] = None
    embed_ms: Optional[float] = None
    store_query_ms: Optional[float] = None
    generation_ms: Optional[float] = None
    total_ms: Optional[float] = None

    def with_stage(self, stage: str, ms: float) -> "StageTimings":
        return replace(self, **{stage: ms})

    @property
    def stage_sum_ms(self) -> float:
        return sum(v for v in (getattr(self, s) for s in STAGES) if v is not None)

    def to_dict(self):
        return asdict(self)


class Stopwatch:
    """Accumulates ``stage -> ms`` while a pipeline runs."""

    def __init__(self):
        self.ms = {}
        self._start = time.perf_counter()

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + (time.perf_counter() - t0) * 1e3

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self._start) * 1e3
