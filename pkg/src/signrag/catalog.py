"""Knowledge base of reference sign classes.

A catalog is loaded from a line-delimited JSON manifest::

    {"format": "signrag-catalog", "version": 1}
    {"code": "R1-1", "name": "Stop", "image": "images/R1-1.png", "category": "regulatory"}
    {"code": "R2-1", "name": "Speed Limit 50", "image": "images/R2-1.png"}

Image paths are resolved relative to the manifest's directory. Catalogs are
immutable values: :func:`add_class`, :func:`remove_class` and
:meth:`Catalog.with_index` return new catalogs with a bumped ``version``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Union

import numpy as np

from .errors import ManifestParseError, NotFoundError, ValidationError

if TYPE_CHECKING:
    from .descriptor import SignDescription

MANIFEST_FORMAT = "signrag-catalog"
MANIFEST_VERSION = 1
DEFAULT_DIMENSION = 3072

SIGN_CODE_RE = re.compile(r"[A-Z]+[0-9]*(-[0-9]+[a-zA-Z]*)*")
# reserved by the generation answer contract
RESERVED_CODES = frozenset({"NONE", "REJECTED"})

ImageHandle = Union[str, Path, bytes]


def validate_code(code: str) -> str:
    """Return ``code`` unchanged if it is a well-formed sign code."""
    if not isinstance(code, str) or not code:
        raise ValidationError(f"sign code must be a non-empty string, got {code!r}")
    if not SIGN_CODE_RE.fullmatch(code):
        raise ValidationError(f"malformed sign code {code!r}")
    if code in RESERVED_CODES:
        raise ValidationError(f"sign code {code!r} is reserved")
    return code


@dataclass(frozen=True, eq=False)
class SignClass:
    code: str
    name: str
    reference_image: ImageHandle
    category: Optional[str] = None
    description: Optional["SignDescription"] = None
    embedding: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        validate_code(self.code)

    @property
    def is_indexed(self) -> bool:
        return self.description is not None and self.embedding is not None

    def __eq__(self, other):
        if not isinstance(other, SignClass):
            return NotImplemented
        if (self.code, self.name, self.reference_image, self.category, self.description) != (
            other.code, other.name, other.reference_image, other.category, other.description
        ):
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is None and other.embedding is None
        return np.array_equal(self.embedding, other.embedding)

    def __hash__(self):
        return hash(self.code)


@dataclass(frozen=True)
class Catalog:
    classes: tuple = ()
    version: int = 1
    dimension: int = DEFAULT_DIMENSION
    stale: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if int(self.dimension) < 1:
            raise ValidationError(f"dimension must be positive, got {self.dimension}")
        seen = set()
        for cls in self.classes:
            if cls.code in seen:
                raise ValidationError(f"duplicate sign code {cls.code!r}")
            seen.add(cls.code)
            if cls.embedding is not None and len(cls.embedding) != self.dimension:
                raise ValidationError(
                    f"embedding for {cls.code!r} has length {len(cls.embedding)}, "
                    f"expected {self.dimension}"
                )

    def __len__(self):
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __contains__(self, code):
        return any(c.code == code for c in self.classes)

    @property
    def codes(self) -> list:
        return [c.code for c in self.classes]

    def get(self, code: str) -> SignClass:
        for cls in self.classes:
            if cls.code == code:
                return cls
        raise NotFoundError(f"sign code {code!r} not in catalog")

    @property
    def is_indexed(self) -> bool:
        return all(c.is_indexed for c in self.classes) and not self.stale

    def with_index(self, code: str, description, embedding) -> "Catalog":
        """Return a new catalog with ``code``'s description and embedding filled."""
        cls = self.get(code)
        embedding = np.asarray(embedding)
        if embedding.shape != (self.dimension,):
            raise ValidationError(
                f"embedding for {code!r} has shape {embedding.shape}, expected ({self.dimension},)"
            )
        updated = replace(cls, description=description, embedding=embedding)
        classes = tuple(updated if c.code == code else c for c in self.classes)
        return replace(self, classes=classes, version=self.version + 1, stale=self.stale - {code})

    def same_classes(self, other: "Catalog") -> bool:
        """Compare everything except ``version``."""
        return (
            self.classes == other.classes
            and self.dimension == other.dimension
            and self.stale == other.stale
        )


def add_class(catalog: Catalog, entry: SignClass) -> Catalog:
    if entry.code in catalog:
        raise ValidationError(f"duplicate sign code {entry.code!r}")
    stale = catalog.stale if entry.is_indexed else catalog.stale | {entry.code}
    return replace(
        catalog, classes=catalog.classes + (entry,), version=catalog.version + 1, stale=stale
    )


def remove_class(catalog: Catalog, code: str) -> Catalog:
    if code not in catalog:
        raise NotFoundError(f"sign code {code!r} not in catalog")
    classes = tuple(c for c in catalog.classes if c.code != code)
    return replace(catalog, classes=classes, version=catalog.version + 1, stale=catalog.stale - {code})


def _read_jsonl(path: Path, expected_format: str):
    """Yield ``(line_number, record)`` pairs after checking the header line."""
    with open(path, encoding="utf-8") as fh:
        lines = list(enumerate(fh, start=1))
    header_seen = False
    for lineno, raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(record, dict):
            raise ManifestParseError(path, lineno, "record must be a JSON object")
        if not header_seen:
            if record.get("format") != expected_format:
                raise ManifestParseError(
                    path, lineno, f"expected header with format {expected_format!r}"
                )
            if record.get("version") != MANIFEST_VERSION:
                raise ManifestParseError(
                    path, lineno, f"unsupported manifest version {record.get('version')!r}"
                )
            header_seen = True
            continue
        yield lineno, record
    if not header_seen:
        raise ManifestParseError(path, 1, "missing header line")


def load_catalog(source, dimension: int = DEFAULT_DIMENSION, check_images: bool = True) -> Catalog:
    """Load a pre-index catalog from a manifest file."""
    path = Path(source)
    base = path.parent
    classes = []
    seen = {}
    for lineno, record in _read_jsonl(path, MANIFEST_FORMAT):
        for key in ("code", "image"):
            if not isinstance(record.get(key), str) or not record[key]:
                raise ManifestParseError(path, lineno, f"missing or invalid field {key!r}")
        code = record["code"]
        try:
            validate_code(code)
        except ValidationError as exc:
            raise ManifestParseError(path, lineno, str(exc)) from None
        if code in seen:
            raise ValidationError(
                f"duplicate sign code {code!r} (lines {seen[code]} and {lineno} of {path})"
            )
        seen[code] = lineno
        image = base / record["image"]
        if check_images and not image.is_file():
            raise FileNotFoundError(f"reference image not found: {image}")
        classes.append(
            SignClass(
                code=code,
                name=str(record.get("name") or code),
                reference_image=image,
                category=record.get("category"),
            )
        )
    return Catalog(
        classes=tuple(classes),
        version=1,
        dimension=dimension,
        stale=frozenset(c.code for c in classes),
    )


def write_manifest(path, classes: Iterable[SignClass]) -> None:
    """Write a catalog manifest; image paths are made relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION})]
    for cls in classes:
        image = Path(cls.reference_image)
        try:
            image = image.resolve().relative_to(base)
        except ValueError:
            pass
        record = {"code": cls.code, "name": cls.name, "image": image.as_posix()}
        if cls.category is not None:
            record["category"] = cls.category
        lines.append(json.dumps(record))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
