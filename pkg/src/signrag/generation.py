"""Final classification over the augmented prompt, plus the end-to-end pipeline.

The generator must answer with one candidate code or ``NONE``. Output is
normalized (trim, strip surrounding punctuation, case-fold) before matching;
anything that still matches no candidate falls back to the rank-1 candidate
and is flagged with ``source="top1-fallback"``.
"""
from __future__ import annotations

import base64
import hashlib
import string
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import prompts
from ._remote import APIClient
from .augmentation import AugmentedPrompt, build_prompt
from .descriptor import read_image
from .errors import BackendError, SignRAGError, StageError, ValidationError
from .retrieval import DEFAULT_K, Backends, RetrievalSet, _check_args, describe_stage, retrieve_one
from .timing import StageTimings

REJECTED = "REJECTED"
NONE_TOKEN = "NONE"

SOURCE_GENERATION = "generation"
SOURCE_FALLBACK = "top1-fallback"
SOURCE_SCOPE = "scope-filter"
SOURCE_ERROR = "error"
SOURCE_DIRECT = "direct"

_STRIP = string.whitespace + string.punctuation + "“”‘’"


def normalize_output(raw: str) -> str:
    return raw.strip().strip(_STRIP).casefold()


class GeneratorBackend(ABC):
    kind = "abstract"

    @abstractmethod
    def generate(self, prompt: str, candidates: Sequence[str], *, truth: Optional[str] = None,
                 query: Optional[str] = None, image: Optional[bytes] = None) -> str:
        """Return the raw model reply to ``prompt``.

        ``truth`` and ``query`` are hints that only mock backends read.
        """


class OracleGenerator(GeneratorBackend):
    """Answers the true code whenever it is among the candidates, else ``NONE``.

    The truth comes from the ``truth`` hint, or from ``answers`` keyed by the
    query appearance text.
    """

    kind = "oracle-mock"

    def __init__(self, answers: Optional[Mapping[str, str]] = None, delay=0.0):
        self.answers = dict(answers or {})
        self.delay = delay

    def _truth(self, truth, query):
        if truth is not None:
            return truth
        if query is not None:
            return self.answers.get(query)
        return None

    def oracle_answer(self, candidates, truth, query):
        t = self._truth(truth, query)
        return t if t is not None and t in candidates else NONE_TOKEN

    def generate(self, prompt, candidates, *, truth=None, query=None, image=None):
        if self.delay:
            time.sleep(self.delay)
        return self.oracle_answer(candidates, truth, query)


def _call_rng(seed, run_index, prompt):
    digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([int(seed), int(run_index), int.from_bytes(digest, "little")])


class NoisyGenerator(OracleGenerator):
    """Oracle whose correct answers are flipped to another candidate with probability ``p``.

    Each call draws from a generator seeded by ``(seed, run_index, prompt)``,
    so results do not depend on call order or concurrency.
    """

    kind = "noisy-mock"

    def __init__(self, p=0.1, seed=0, answers=None, run_index=0, delay=0.0):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"flip probability must be in [0, 1], got {p}")
        super().__init__(answers, delay)
        self.p = p
        self.seed = seed
        self.run_index = run_index

    def for_run(self, run_index):
        return NoisyGenerator(self.p, self.seed, self.answers, run_index, self.delay)

    def generate(self, prompt, candidates, *, truth=None, query=None, image=None):
        if self.delay:
            time.sleep(self.delay)
        answer = self.oracle_answer(candidates, truth, query)
        others = [c for c in candidates if c != answer]
        if answer == NONE_TOKEN or not others:
            return answer
        rng = _call_rng(self.seed, self.run_index, prompt)
        if rng.random() < self.p:
            return others[int(rng.integers(len(others)))]
        return answer


class GuessingGenerator(GeneratorBackend):
    """Picks a candidate uniformly at random; emulates unguided guessing."""

    kind = "guess-mock"

    def __init__(self, seed=0, run_index=0):
        self.seed = seed
        self.run_index = run_index

    def for_run(self, run_index):
        return GuessingGenerator(self.seed, run_index)

    def generate(self, prompt, candidates, *, truth=None, query=None, image=None):
        extra = hashlib.sha256(image).hexdigest() if image else ""
        rng = _call_rng(self.seed, self.run_index, prompt + extra)
        return candidates[int(rng.integers(len(candidates)))]


class RemoteGenerator(GeneratorBackend):
    """LLM behind an OpenAI-compatible chat-completion API."""

    kind = "remote-api"

    def __init__(self, client: APIClient, model: str, temperature=0.0, max_tokens=16):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens

    def generate(self, prompt, candidates, *, truth=None, query=None, image=None):
        if image is None:
            content = prompt
        else:
            url = "data:image/png;base64," + base64.b64encode(image).decode("ascii")
            content = [{"type": "text", "text": prompt}, {"type": "image_url", "image_url": {"url": url}}]
        messages = [{"role": "user", "content": content}]
        return self.client.chat(self.model, messages, temperature=self.temperature, max_tokens=self.max_tokens)


def match_answer(raw: str, candidates: Sequence[str]) -> Optional[str]:
    """Map a raw reply to a candidate code, ``REJECTED`` for NONE, or ``None``."""
    norm = normalize_output(raw)
    if norm == NONE_TOKEN.casefold():
        return REJECTED
    for code in candidates:
        if code.casefold() == norm:
            return code
    return None


def classify(prompt: AugmentedPrompt, backend: GeneratorBackend, *, truth=None, query=None) -> Tuple[str, str, str]:
    """Ask the generator to choose; returns ``(code or REJECTED, raw_output, source)``."""
    try:
        raw = backend.generate(prompt.text, list(prompt.candidate_codes), truth=truth, query=query)
    except (BackendError, OSError) as exc:
        raise StageError("generation", exc) from exc
    code = match_answer(raw, prompt.candidate_codes)
    if code is None:
        return prompt.candidate_codes[0], raw, SOURCE_FALLBACK
    return code, raw, SOURCE_GENERATION


@dataclass
class RecognitionOutcome:
    final_code: str
    source: str
    retrieval: Optional[RetrievalSet] = None
    prompt: Optional[AugmentedPrompt] = None
    raw_model_output: str = ""
    timings: StageTimings = field(default_factory=StageTimings)
    error: Optional[str] = None
    error_stage: Optional[str] = None

    @property
    def rejected(self) -> bool:
        return self.final_code == REJECTED

    def to_dict(self) -> dict:
        r = self.retrieval
        return {
            "final_code": self.final_code,
            "source": self.source,
            "appearance": r.query_description.appearance if r else None,
            "location": r.query_description.location if r else None,
            "hits": [{"rank": h.rank, "code": h.code, "distance": h.distance} for h in r.hits] if r else [],
            "template_version": self.prompt.template_version if self.prompt else None,
            "raw_model_output": self.raw_model_output,
            "timings": self.timings.to_dict(),
            "error": self.error,
            "error_stage": self.error_stage,
        }


def _error_outcome(exc: StageError, timings: StageTimings, retrieval=None, prompt=None):
    return RecognitionOutcome(REJECTED, SOURCE_ERROR, retrieval, prompt, "", timings,
                              error=str(exc.cause), error_stage=exc.stage)


def _recognize_sign(description, store, backends, k, scope_filter, truth, descriptor_ms, template_version):
    t0 = time.perf_counter()
    timings = StageTimings(descriptor_ms=descriptor_ms)

    def done(t):
        return t.with_stage("total_ms", descriptor_ms + (time.perf_counter() - t0) * 1e3)

    try:
        retrieval, embed_ms, query_ms = retrieve_one(description, store, backends.embedder, k)
    except StageError as exc:
        return _error_outcome(exc, done(timings))
    timings = timings.with_stage("embed_ms", embed_ms).with_stage("store_query_ms", query_ms)

    if scope_filter is not None and not scope_filter.accepts(retrieval):
        return RecognitionOutcome(REJECTED, SOURCE_SCOPE, retrieval, None, "", done(timings))

    try:
        prompt = build_prompt(description, retrieval, store, template_version)
    except SignRAGError as exc:
        return _error_outcome(StageError("augmentation", exc), done(timings), retrieval)

    g0 = time.perf_counter()
    try:
        code, raw, source = classify(prompt, backends.generator, truth=truth, query=description.appearance)
    except StageError as exc:
        timings = timings.with_stage("generation_ms", (time.perf_counter() - g0) * 1e3)
        return _error_outcome(exc, done(timings), retrieval, prompt)
    timings = timings.with_stage("generation_ms", (time.perf_counter() - g0) * 1e3)
    return RecognitionOutcome(code, source, retrieval, prompt, raw, done(timings))


def recognize(image, store, backends: Backends, k: int = DEFAULT_K, *, scope_filter=None,
              truth: Optional[str] = None, max_workers: int = 1,
              template_version: str = prompts.DEFAULT_VERSION) -> List[RecognitionOutcome]:
    """Run describe, retrieve, filter, augment and classify for every sign in ``image``.

    A failing stage is recorded on that sign's outcome; it never aborts the
    other signs. A descriptor failure yields a single error outcome.
    """
    _check_args(store, k)
    if backends.generator is None:
        raise ValidationError("recognize needs a generator backend")
    t0 = time.perf_counter()
    try:
        descs, descriptor_ms = describe_stage(image, backends.descriptor)
    except StageError as exc:
        ms = (time.perf_counter() - t0) * 1e3
        return [_error_outcome(exc, StageTimings(descriptor_ms=ms, total_ms=ms))]

    def run(desc):
        return _recognize_sign(desc, store, backends, k, scope_filter, truth, descriptor_ms, template_version)

    if max_workers > 1 and len(descs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(run, descs))
    return [run(d) for d in descs]


def _scope_lines(scope) -> List[Tuple[str, str]]:
    pairs = []
    for item in scope:
        if hasattr(item, "code"):
            pairs.append((item.code, getattr(item, "name", item.code)))
        elif isinstance(item, str):
            pairs.append((item, item))
        else:
            code, name = item
            pairs.append((code, name))
    if not pairs:
        raise ValidationError("direct classification needs a non-empty scope")
    return pairs


def classify_direct(image, scope, backend: GeneratorBackend, *, truth=None,
                    template_version: str = prompts.DEFAULT_VERSION) -> Tuple[str, str]:
    """End-to-end baseline: recognize ``image`` against the whole scope, no retrieval.

    ``scope`` is a catalog, or a sequence of codes or ``(code, name)`` pairs.
    Unmatched replies count as ``REJECTED``: there is no ranked fallback.
    """
    pairs = _scope_lines(scope)
    codes = [c for c, _ in pairs]
    text = prompts.render("direct", template_version, scope="\n".join(f"{c}: {n}" for c, n in pairs))
    data = read_image(image)
    try:
        raw = backend.generate(text, codes, truth=truth, image=data)
    except (BackendError, OSError) as exc:
        raise StageError("generation", exc) from exc
    code = match_answer(raw, codes)
    return (code if code is not None else REJECTED), raw
