"""Zero-shot road sign recognition by retrieval-augmented generation.

Reference sign designs are described by a vision-language model, embedded
and stored in an exact L2 vector store. A query sign is described the same
way, its nearest reference designs are retrieved, and a language model picks
the matching official sign code from those candidates.
"""
from .augmentation import AugmentedPrompt, build_prompt
from .catalog import Catalog, SignClass, add_class, load_catalog, remove_class
from .descriptor import (
    MockDescriptor,
    RemoteDescriptor,
    SignDescription,
    describe_reference,
    describe_scene,
    validate_abstraction,
)
from .embedder import MockEmbedder, RemoteEmbedder, TextEmbedder, embed, embed_batch
from .estimators import SignRecognizer
from .evaluation import LabeledExample, RunMetrics, bench_latency, evaluate, report
from .generation import (
    REJECTED,
    GuessingGenerator,
    NoisyGenerator,
    OracleGenerator,
    RecognitionOutcome,
    RemoteGenerator,
    classify,
    classify_direct,
    recognize,
)
from .indexing import index_catalog
from .retrieval import Backends, RetrievalSet, retrieve
from .scope_filter import DistanceSample, FilterModel, ThresholdScopeFilter, calibrate, density_report
from .timing import StageTimings
from .vector_store import QueryHit, StoreEntry, VectorStore

__all__ = [
    "add_class",
    "AugmentedPrompt",
    "Backends",
    "bench_latency",
    "build_prompt",
    "calibrate",
    "Catalog",
    "classify",
    "classify_direct",
    "density_report",
    "describe_reference",
    "describe_scene",
    "DistanceSample",
    "embed",
    "embed_batch",
    "evaluate",
    "FilterModel",
    "GuessingGenerator",
    "index_catalog",
    "LabeledExample",
    "load_catalog",
    "MockDescriptor",
    "MockEmbedder",
    "NoisyGenerator",
    "OracleGenerator",
    "QueryHit",
    "RecognitionOutcome",
    "recognize",
    "REJECTED",
    "RemoteDescriptor",
    "RemoteEmbedder",
    "RemoteGenerator",
    "remove_class",
    "report",
    "RetrievalSet",
    "retrieve",
    "RunMetrics",
    "SignClass",
    "SignDescription",
    "SignRecognizer",
    "StageTimings",
    "StoreEntry",
    "TextEmbedder",
    "ThresholdScopeFilter",
    "validate_abstraction",
    "VectorStore",
]

__version__ = "0.1.0"
