"""Online query path: describe the input scene, embed each sign, fetch top-k."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .descriptor import DescriptorBackend, SignDescription, describe_scene
from .embedder import EmbedderBackend, embed
from .errors import EmptyStoreError, SignRAGError, StageError, ValidationError
from .vector_store import QueryHit, VectorStore

DEFAULT_K = 5


@dataclass
class Backends:
    descriptor: DescriptorBackend
    embedder: EmbedderBackend
    generator: Optional[object] = None

    def for_run(self, run_index: int) -> "Backends":
        """Backends for repeated evaluation run ``run_index``; reseeds stochastic mocks."""
        generator = self.generator
        if generator is not None and hasattr(generator, "for_run"):
            generator = generator.for_run(run_index)
        return Backends(self.descriptor, self.embedder, generator)


@dataclass(frozen=True)
class RetrievalSet:
    query_description: SignDescription
    hits: Tuple[QueryHit, ...]
    k: int = DEFAULT_K

    def __post_init__(self):
        object.__setattr__(self, "hits", tuple(self.hits))
        if len(self.hits) > self.k:
            raise ValidationError(f"{len(self.hits)} hits exceed k={self.k}")

    @property
    def codes(self) -> List[str]:
        return [h.code for h in self.hits]

    @property
    def rank1_distance(self) -> float:
        return self.hits[0].distance


def _check_args(store, k):
    if int(k) < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(store) == 0:
        raise EmptyStoreError("cannot retrieve from an empty store")


def _tagged(stage, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except (SignRAGError, OSError) as exc:
        raise StageError(stage, exc) from exc


def describe_stage(image, backend: DescriptorBackend):
    """Run the descriptor; returns ``(descriptions, elapsed_ms)``."""
    t0 = time.perf_counter()
    descs = _tagged("descriptor", describe_scene, image, backend)
    return descs, (time.perf_counter() - t0) * 1e3


def retrieve_one(description: SignDescription, store: VectorStore, embedder: EmbedderBackend, k=DEFAULT_K):
    """Retrieve candidates for one described sign.

    Only the appearance text is embedded; the location describes the scene,
    not the class. Returns ``(RetrievalSet, embed_ms, store_query_ms)``.
    """
    t0 = time.perf_counter()
    vector = _tagged("embedder", embed, description.appearance, embedder)
    t1 = time.perf_counter()
    hits = _tagged("store", store.query, vector, k)
    t2 = time.perf_counter()
    return RetrievalSet(description, tuple(hits), int(k)), (t1 - t0) * 1e3, (t2 - t1) * 1e3


def retrieve(image, store: VectorStore, backends: Backends, k: int = DEFAULT_K) -> List[RetrievalSet]:
    """One :class:`RetrievalSet` per sign described in ``image``."""
    _check_args(store, k)
    descs, _ = describe_stage(image, backends.descriptor)
    return [retrieve_one(d, store, backends.embedder, k)[0] for d in descs]
