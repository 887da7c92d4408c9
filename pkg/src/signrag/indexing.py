"""Offline indexing: describe every reference image, embed, and build the store."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

from .catalog import Catalog
from .descriptor import DEFAULT_RULES, describe_reference, validate_abstraction
from .embedder import embed_batch
from .errors import SignRAGError, StageError, ValidationError
from .vector_store import StoreEntry, VectorStore


@dataclass
class IndexResult:
    catalog: Catalog
    store: VectorStore
    violations: Dict[str, list] = field(default_factory=dict)

    @property
    def n_violations(self) -> int:
        return sum(len(v) for v in self.violations.values())


def index_catalog(catalog: Catalog, descriptor, embedder, strict: bool = False,
                  rules=DEFAULT_RULES) -> IndexResult:
    """Describe and embed every class in ``catalog``.

    Abstraction violations are collected per code; with ``strict`` any
    violation raises :class:`~signrag.errors.ValidationError` before
    embedding.
    """
    if embedder.dimension != catalog.dimension:
        raise ValidationError(
            f"embedder dimension {embedder.dimension} differs from catalog dimension {catalog.dimension}"
        )
    descriptions = []
    violations = {}
    for sign in catalog:
        try:
            desc = describe_reference(sign.reference_image, descriptor)
        except (OSError, SignRAGError) as exc:
            raise StageError("descriptor", f"{sign.code}: {exc}") from exc
        found = validate_abstraction(desc, rules)
        if found:
            violations[sign.code] = found
        descriptions.append(desc)
    if strict and violations:
        detail = "; ".join(f"{c}: {', '.join(v.text for v in vs)}" for c, vs in violations.items())
        raise ValidationError(f"abstraction violations: {detail}")
    try:
        vectors = embed_batch([d.appearance for d in descriptions], embedder)
    except SignRAGError as exc:
        raise StageError("embedder", exc) from exc
    indexed = catalog
    entries: List[StoreEntry] = []
    for sign, desc, vec in zip(catalog, descriptions, vectors):
        indexed = indexed.with_index(sign.code, desc, vec)
        entries.append(StoreEntry(sign.code, vec, desc))
    return IndexResult(indexed, VectorStore(catalog.dimension, entries), violations)
