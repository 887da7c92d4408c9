"""Abstracted textual descriptions of signs, produced by a vision-language backend.

Reference descriptions must describe the sign *class*: variable content such
as the number on a speed limit sign is replaced by a registered placeholder
(``"<two-digit number>"``). :func:`validate_abstraction` checks that rule.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from PIL import Image, UnidentifiedImageError

from . import prompts
from ._remote import APIClient, parse_json_reply
from .catalog import MANIFEST_VERSION, _read_jsonl, validate_code
from .errors import DegradedOutputError, ValidationError

_DIGIT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five"}


def number_placeholder(digits: int) -> str:
    return f"<{_DIGIT_WORDS.get(digits, str(digits))}-digit number>"


DEFAULT_PLACEHOLDERS = frozenset(
    [number_placeholder(n) for n in range(1, 6)]
    + ["<street name>", "<time range>", "<arrow direction>"]
)

PLACEHOLDER_RE = re.compile(r"<[^<>\n]+>")


@dataclass(frozen=True)
class SignDescription:
    """What the descriptor saw: appearance text plus optional scene location."""

    appearance: str
    location: Optional[str] = None
    placeholders_used: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not isinstance(self.appearance, str) or not self.appearance.strip():
            raise ValidationError("description appearance must be non-empty")
        tokens = tuple(PLACEHOLDER_RE.findall(self.appearance))
        object.__setattr__(self, "placeholders_used", tokens)

    def check_vocabulary(self, registry=DEFAULT_PLACEHOLDERS) -> "SignDescription":
        unknown = [t for t in self.placeholders_used if t not in registry]
        if unknown:
            raise ValidationError(f"unregistered placeholder(s) {unknown} in description")
        return self

    def to_dict(self) -> dict:
        out = {"appearance": self.appearance}
        if self.location is not None:
            out["location"] = self.location
        return out


@dataclass(frozen=True)
class AbstractionRule:
    name: str
    pattern: re.Pattern
    placeholder: Optional[str] = None

    @classmethod
    def compile(cls, name, regex, placeholder=None, flags=0):
        return cls(name, re.compile(regex, flags), placeholder)


@dataclass(frozen=True)
class Violation:
    rule: str
    text: str
    start: int
    end: int


# Order matters for abstract_text: time ranges before bare numbers.
DEFAULT_RULES = (
    AbstractionRule.compile(
        "time-range",
        r"\b\d{1,2}(?::\d{2})?\s*(?:AM|PM|A\.M\.|P\.M\.)?\s*(?:-|–|TO)\s*\d{1,2}(?::\d{2})?\s*(?:AM|PM|A\.M\.|P\.M\.)",
        "<time range>",
        re.IGNORECASE,
    ),
    AbstractionRule.compile(
        "street-name",
        r"\b[A-Z][A-Za-z]+\s+(?:St|Street|Ave|Avenue|Rd|Road|Blvd|Boulevard|Dr|Drive|Ln|Lane|Pkwy|Parkway)\b\.?",
        "<street name>",
    ),
    AbstractionRule.compile("number", r"(?<![\w<:-])(?<!\d\.)\d{2,3}(?![\w>:-]|\.\d)"),
)


def _mask_placeholders(text):
    # keep offsets stable while hiding placeholder interiors from the rules
    return PLACEHOLDER_RE.sub(lambda m: " " * len(m.group()), text)


def validate_abstraction(description, rules: Sequence[AbstractionRule] = DEFAULT_RULES) -> List[Violation]:
    """Find concrete variable content that should have been a placeholder.

    Accepts a :class:`SignDescription` or plain appearance text. Returns an
    empty list when the text is compliant.
    """
    text = description.appearance if isinstance(description, SignDescription) else str(description)
    masked = _mask_placeholders(text)
    found = []
    taken = []
    for rule in rules:
        for m in rule.pattern.finditer(masked):
            if any(m.start() < e and s < m.end() for s, e in taken):
                continue
            taken.append((m.start(), m.end()))
            found.append(Violation(rule.name, text[m.start():m.end()], m.start(), m.end()))
    found.sort(key=lambda v: v.start)
    return found


def abstract_text(text: str, rules: Sequence[AbstractionRule] = DEFAULT_RULES) -> str:
    """Replace every rule match in ``text`` with its placeholder."""
    violations = validate_abstraction(text, rules)
    by_name = {r.name: r for r in rules}
    out = []
    pos = 0
    for v in violations:
        placeholder = by_name[v.rule].placeholder or number_placeholder(len(v.text))
        out.append(text[pos:v.start])
        out.append(placeholder)
        pos = v.end
    out.append(text[pos:])
    return "".join(out)


# ---------------------------------------------------------------------------
# image handling

def read_image(image) -> bytes:
    """Return the raw bytes behind an image handle (path or bytes)."""
    if isinstance(image, (bytes, bytearray, memoryview)):
        return bytes(image)
    return Path(image).read_bytes()


def check_decodable(data: bytes) -> None:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.verify()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ValidationError(f"image is not decodable: {exc}") from None


def image_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# backends

class DescriptorBackend(ABC):
    kind = "abstract"

    @abstractmethod
    def describe_reference(self, data: bytes) -> SignDescription:
        """Describe the single sign in a reference image."""

    @abstractmethod
    def describe_scene(self, data: bytes) -> List[SignDescription]:
        """Describe every sign in a scene image, with locations."""


@dataclass(frozen=True)
class ScriptedSign:
    description: SignDescription
    code: Optional[str] = None


_REFERENCE_TEMPLATES = (
    "A {category} road sign bearing the legend {legend}.",
    "{Category} road sign; legend reads {legend}.",
)


class MockDescriptor(DescriptorBackend):
    """Deterministic descriptor keyed by the SHA-256 of the image bytes.

    Reference images registered from a catalog are described from the class
    name and category through fixed templates, with variable content
    abstracted. Scene images are answered from a script. The output is a pure
    function of ``(image bytes, seed)``.

    Args:
        seed: Selects the reference template variant.
        delay: Seconds to sleep per call, for latency experiments.
    """

    kind = "deterministic-mock"

    def __init__(self, seed=0, delay=0.0):
        self.seed = seed
        self.delay = delay
        self._references: Dict[str, tuple] = {}
        self._script: Dict[str, List[ScriptedSign]] = {}

    @classmethod
    def from_catalog(cls, catalog, **kwargs):
        mock = cls(**kwargs)
        for sign in catalog:
            mock.register_reference(read_image(sign.reference_image), sign.name, sign.category, sign.code)
        return mock

    def register_reference(self, data: bytes, name: str, category=None, code=None):
        self._references[image_digest(data)] = (name, category or "regulatory", code)

    def add_scene(self, data: bytes, signs: Sequence[ScriptedSign]):
        self._script[image_digest(data)] = list(signs)

    def load_script(self, path):
        """Merge scripted scenes from a ``signrag-mock-script`` file."""
        self._script.update(load_mock_script(path))
        return self

    def reference_text(self, name: str, category: str) -> str:
        template = _REFERENCE_TEMPLATES[self.seed % len(_REFERENCE_TEMPLATES)]
        return template.format(
            category=category, Category=category.capitalize(), legend=abstract_text(name.upper())
        )

    def answers(self) -> Dict[str, str]:
        """Map scripted and reference appearance text to its true code."""
        out = {}
        for name, category, code in self._references.values():
            if code:
                out[self.reference_text(name, category)] = code
        for signs in self._script.values():
            for s in signs:
                if s.code:
                    out[s.description.appearance] = s.code
        return out

    def _pause(self):
        if self.delay:
            time.sleep(self.delay)

    def describe_reference(self, data):
        self._pause()
        digest = image_digest(data)
        if digest in self._references:
            name, category, _ = self._references[digest]
            return SignDescription(self.reference_text(name, category))
        scripted = self._script.get(digest)
        if scripted and len(scripted) == 1:
            return SignDescription(scripted[0].description.appearance)
        raise DegradedOutputError(f"mock descriptor has no entry for image {digest[:12]}")

    def describe_scene(self, data):
        self._pause()
        digest = image_digest(data)
        if digest in self._script:
            return [s.description for s in self._script[digest]]
        if digest in self._references:
            name, category, _ = self._references[digest]
            return [SignDescription(self.reference_text(name, category), "in the center of the image")]
        raise DegradedOutputError(f"mock descriptor has no entry for image {digest[:12]}")


SCRIPT_FORMAT = "signrag-mock-script"


def load_mock_script(path) -> Dict[str, List[ScriptedSign]]:
    """Read a mock script: one record per scene image.

    Records carry ``sha256`` (or an ``image`` path relative to the script) and
    a ``signs`` list of ``{"appearance", "location", "code"}`` objects.
    """
    path = Path(path)
    script = {}
    for _, record in _read_jsonl(path, SCRIPT_FORMAT):
        digest = record.get("sha256") or image_digest((path.parent / record["image"]).read_bytes())
        signs = []
        for item in record.get("signs", []):
            code = item.get("code")
            if code is not None:
                validate_code(code)
            signs.append(ScriptedSign(SignDescription(item["appearance"], item.get("location")), code))
        script[digest] = signs
    return script


def write_mock_script(path, scenes) -> None:
    """Write ``scenes`` (iterable of ``(image_path, [ScriptedSign])``)."""
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps({"format": SCRIPT_FORMAT, "version": MANIFEST_VERSION})]
    for image, signs in scenes:
        image = Path(image)
        record = {
            "sha256": image_digest(image.read_bytes()),
            "image": image.resolve().relative_to(base).as_posix(),
            "signs": [dict(s.description.to_dict(), **({"code": s.code} if s.code else {})) for s in signs],
        }
        lines.append(json.dumps(record))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class RemoteDescriptor(DescriptorBackend):
    """Vision-language model behind an OpenAI-compatible chat-completion API."""

    kind = "remote-api"

    def __init__(self, client: APIClient, model: str, temperature=0.0,
                 template_version=prompts.DEFAULT_VERSION, placeholders=DEFAULT_PLACEHOLDERS):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.template_version = template_version
        self.placeholders = placeholders

    def _ask(self, template, data):
        instructions = prompts.render(
            template, self.template_version, placeholders=", ".join(sorted(self.placeholders))
        )
        url = "data:image/png;base64," + base64.b64encode(data).decode("ascii")
        messages = [{
            "role": "user",
            "content": [
                {"type": "text", "text": instructions},
                {"type": "image_url", "image_url": {"url": url}},
            ],
        }]
        reply = self.client.chat(self.model, messages, temperature=self.temperature)
        if not reply.strip():
            raise DegradedOutputError("descriptor returned empty text")
        return parse_json_reply(reply)

    def describe_reference(self, data):
        payload = self._ask("describe_reference", data)
        appearance = payload.get("appearance")
        if not isinstance(appearance, str) or not appearance.strip():
            raise DegradedOutputError("descriptor reply has no appearance text")
        return SignDescription(appearance.strip())

    def describe_scene(self, data):
        payload = self._ask("describe_scene", data)
        signs = payload.get("signs")
        if not isinstance(signs, list):
            raise DegradedOutputError("descriptor reply has no signs list")
        out = []
        for item in signs:
            appearance = (item or {}).get("appearance")
            if not isinstance(appearance, str) or not appearance.strip():
                raise DegradedOutputError("scene sign without appearance text")
            location = item.get("location")
            out.append(SignDescription(appearance.strip(), location.strip() if isinstance(location, str) else None))
        return out


# ---------------------------------------------------------------------------
# operations

def describe_reference(image, backend: DescriptorBackend) -> SignDescription:
    """Describe a reference image; the result never carries a location."""
    data = read_image(image)
    check_decodable(data)
    desc = backend.describe_reference(data)
    if desc.location is not None:
        desc = SignDescription(desc.appearance)
    return desc


def describe_scene(image, backend: DescriptorBackend) -> List[SignDescription]:
    """Describe every sign in a scene; each result has a non-empty location."""
    data = read_image(image)
    check_decodable(data)
    descs = backend.describe_scene(data)
    for d in descs:
        if not d.location or not d.location.strip():
            raise DegradedOutputError("scene description is missing its location")
    return descs
