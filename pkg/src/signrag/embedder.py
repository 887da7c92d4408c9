"""Description text to fixed-dimension vectors.

The mock backend is a seeded random projection of the token-count bag: each
token maps to a fixed Gaussian direction and a text embeds to the
count-weighted sum. Distances therefore track how many tokens two texts
share, which is what makes small-scale retrieval experiments meaningful.
"""
from __future__ import annotations

import hashlib
import re
import time
from abc import ABC, abstractmethod
from collections import Counter
from functools import lru_cache
from typing import List, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._remote import APIClient
from .catalog import DEFAULT_DIMENSION
from .errors import DegradedOutputError, ValidationError

TOKEN_RE = re.compile(r"<[^<>\n]+>|[a-z0-9]+")


def tokenize(text: str) -> List[str]:
    """Lower-case word tokens; placeholders like ``<two-digit number>`` stay whole."""
    return TOKEN_RE.findall(text.lower())


def _check_texts(texts):
    for i, t in enumerate(texts):
        if not isinstance(t, str) or not t.strip():
            raise ValidationError(f"text at position {i} is empty")


class EmbedderBackend(ABC):
    kind = "abstract"
    dimension: int

    @abstractmethod
    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        """Embed one backend call's worth of texts; returns shape ``(len(texts), dimension)``."""

    @property
    def batch_size(self) -> int:
        return 64


@lru_cache(maxsize=65536)
def _token_direction(token: str, seed: int, dimension: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dimension) / np.sqrt(dimension)
    vec.setflags(write=False)
    return vec


class MockEmbedder(EmbedderBackend):
    """Deterministic locality-sensitive embedder.

    Args:
        dimension: Output vector length.
        seed: Seed of the projection; different seeds give unrelated spaces.
        batch_size: Maximum number of texts per simulated backend call.
        delay: Seconds to sleep per backend call, for latency experiments.
    """

    kind = "deterministic-mock"

    def __init__(self, dimension=64, seed=0, batch_size=64, delay=0.0):
        if dimension < 1:
            raise ValidationError("dimension must be positive")
        self.dimension = int(dimension)
        self.seed = int(seed)
        self._batch_size = int(batch_size)
        self.delay = delay
        self.calls = 0
        self.max_call_size = 0

    @property
    def batch_size(self):
        return self._batch_size

    def embed_many(self, texts):
        self.calls += 1
        self.max_call_size = max(self.max_call_size, len(texts))
        if self.delay:
            time.sleep(self.delay)
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for token, count in sorted(Counter(tokenize(text)).items()):
                out[row] += count * _token_direction(token, self.seed, self.dimension)
        return out


class RemoteEmbedder(EmbedderBackend):
    """Embedding model behind an OpenAI-compatible ``/embeddings`` endpoint."""

    kind = "remote-api"

    def __init__(self, client: APIClient, model="text-embedding-3-large",
                 dimension=DEFAULT_DIMENSION, batch_size=64, send_dimensions=False):
        self.client = client
        self.model = model
        self.dimension = int(dimension)
        self._batch_size = int(batch_size)
        self.send_dimensions = send_dimensions

    @property
    def batch_size(self):
        return self._batch_size

    def embed_many(self, texts):
        vectors = self.client.embeddings(
            self.model, texts, dimensions=self.dimension if self.send_dimensions else None
        )
        if len(vectors) != len(texts):
            raise DegradedOutputError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        return np.asarray(vectors, dtype=np.float64)


def _check_output(vectors, backend):
    if vectors.ndim != 2 or vectors.shape[1] != backend.dimension:
        raise DegradedOutputError(
            f"embedder returned shape {vectors.shape}, expected (*, {backend.dimension})"
        )
    if not np.all(np.isfinite(vectors)):
        raise DegradedOutputError("embedder returned non-finite values")
    return vectors


def embed(text: str, backend: EmbedderBackend) -> np.ndarray:
    _check_texts([text])
    return _check_output(np.asarray(backend.embed_many([text])), backend)[0]


def embed_batch(texts: Sequence[str], backend: EmbedderBackend) -> List[np.ndarray]:
    """Embed ``texts`` in order, in calls of at most ``backend.batch_size``."""
    texts = list(texts)
    _check_texts(texts)
    out = []
    step = max(1, backend.batch_size)
    for start in range(0, len(texts), step):
        chunk = _check_output(np.asarray(backend.embed_many(texts[start:start + step])), backend)
        out.extend(chunk)
    return out


class TextEmbedder(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer wrapping an embedder backend.

    ``transform`` maps a sequence of strings to an ``(n, dimension)`` array.
    """

    def __init__(self, backend=None):
        self.backend = backend

    def fit(self, X=None, y=None):
        self.backend_ = self.backend if self.backend is not None else MockEmbedder()
        self.n_features_out_ = self.backend_.dimension
        return self

    def transform(self, X):
        if not hasattr(self, "backend_"):
            self.fit()
        vectors = embed_batch(list(X), self.backend_)
        if not vectors:
            return np.empty((0, self.backend_.dimension))
        return np.vstack(vectors)
