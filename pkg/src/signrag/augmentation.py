"""Build the generator prompt from the query description and ranked candidates."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Tuple

from . import prompts
from .errors import ConsistencyError, NotFoundError, ValidationError

QUERY_OPEN, QUERY_CLOSE = "[[QUERY]]", "[[END QUERY]]"
CANDIDATE_CLOSE = "[[END CANDIDATE]]"
_CANDIDATE_RE = re.compile(r"^\[\[CANDIDATE (\d+): (\S+)\]\]$", re.MULTILINE)


def escape(text: str) -> str:
    """Backslash-escape ``\\`` and ``[`` so free text can never contain ``[[``."""
    return text.replace("\\", "\\\\").replace("[", "\\[")


def unescape(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text, flags=re.DOTALL)


@dataclass(frozen=True)
class AugmentedPrompt:
    text: str
    candidate_codes: Tuple[str, ...]
    template_version: str = prompts.DEFAULT_VERSION


def _candidate_block(rank, code, description):
    return f"[[CANDIDATE {rank}: {code}]]\n{escape(description)}\n{CANDIDATE_CLOSE}"


def build_prompt(query, hits, store, template_version: str = prompts.DEFAULT_VERSION) -> AugmentedPrompt:
    """Render the augmentation template.

    Args:
        query: The query :class:`~signrag.descriptor.SignDescription`.
        hits: A :class:`~signrag.retrieval.RetrievalSet` or a sequence of
            :class:`~signrag.vector_store.QueryHit`, in rank order.
        store: Store holding the candidates' stored descriptions.
    """
    hits = list(getattr(hits, "hits", hits))
    if not hits:
        raise ValidationError("cannot build a prompt without candidates")
    blocks = []
    for rank, hit in enumerate(hits, start=1):
        try:
            stored = store.description(hit.code)
        except NotFoundError:
            raise ConsistencyError(f"retrieved code {hit.code!r} is not in the store") from None
        blocks.append(_candidate_block(rank, hit.code, stored.appearance))
    codes = tuple(h.code for h in hits)
    text = prompts.render(
        "augment",
        template_version,
        query=escape(query.appearance),
        candidates="\n\n".join(blocks),
        codes=", ".join(codes),
    )
    return AugmentedPrompt(text, codes, template_version)


def parse_prompt(text: str) -> dict:
    """Recover the query and ``(rank, code, description)`` candidates from a prompt."""
    q_start = text.index(QUERY_OPEN) + len(QUERY_OPEN) + 1
    q_end = text.index("\n" + QUERY_CLOSE, q_start - 1)
    candidates: List[tuple] = []
    for m in _CANDIDATE_RE.finditer(text):
        body_start = m.end() + 1
        body_end = text.index("\n" + CANDIDATE_CLOSE, m.end())
        candidates.append((int(m.group(1)), m.group(2), unescape(text[body_start:body_end])))
    return {"query": unescape(text[q_start:q_end]), "candidates": candidates}
