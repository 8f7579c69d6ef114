"""Context serialization, encoder input assembly and LLM prompt templates."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import PlaceholderError, SerializationError
from .filtering import ContextBundle, Query
from .kg import Triple

DEFAULT_SEP = "<SEP>"

SEGMENT_ORDER = ("image_ref", "question", "entities", "context")


def _joiner(sep_token: str) -> str:
    return f" {sep_token} "


def serialize_triples(triples: Iterable[Triple], sep_token: str = DEFAULT_SEP) -> str:
    parts = []
    for triple in triples:
        for value in (triple.head, triple.relation, triple.tail):
            if sep_token in value:
                raise SerializationError(
                    f"triple field {value!r} contains the separator {sep_token!r}"
                )
        parts.append(triple.serialize())
    return _joiner(sep_token).join(parts)


def serialize_context(bundle: ContextBundle, sep_token: str = DEFAULT_SEP) -> str:
    """``"(h, r, t) <SEP> (h, r, t) ..."`` in bundle order; ``""`` when empty."""
    return serialize_triples(bundle.triples, sep_token)


def parse_context(text: str, sep_token: str = DEFAULT_SEP) -> list[Triple]:
    if not text:
        return []
    return [Triple.parse(part) for part in text.split(_joiner(sep_token))]


def format_entities(entities: Sequence[str]) -> str:
    return "[" + ", ".join(entities) + "]"


@dataclass(frozen=True)
class AssembledInput:
    segments: tuple[tuple[str, str], ...]
    sep_token: str = DEFAULT_SEP

    @property
    def rendered(self) -> str:
        return _joiner(self.sep_token).join(text for _, text in self.segments)

    def to_dict(self, query_id: str = "") -> dict:
        return {
            "id": query_id,
            "rendered": self.rendered,
            "segments": [{"kind": kind, "text": text} for kind, text in self.segments],
        }


def assemble_input(
    image_ref: str, query: Query, context: str, sep_token: str = DEFAULT_SEP
) -> AssembledInput:
    """Encoder input ``image <SEP> question <SEP> [entities] <SEP> context``.

    The separator may appear inside ``context`` (between triples) but not in
    the other three segments, so the first three separators always mark the
    segment boundaries.
    """
    segments = (
        ("image_ref", image_ref),
        ("question", query.question),
        ("entities", format_entities(query.entities)),
        ("context", context),
    )
    for kind, text in segments[:3]:
        if sep_token in text:
            raise SerializationError(f"{kind} segment contains the separator {sep_token!r}")
    return AssembledInput(segments, sep_token)


# -- prompt templates ----------------------------------------------------------

QUESTION = "<question>"
ENTITIES = "<named entities>"
TRIPLES = "<triples string>"
PLACEHOLDERS = (QUESTION, ENTITIES, TRIPLES)
_PLACEHOLDER_RE = re.compile("|".join(re.escape(p) for p in PLACEHOLDERS))

_PLAIN = (
    "Please answer concisely in one or two words:\n"
    "Question: <question>\n"
    "Named Entities: <named entities>\n"
)
_KNOWLEDGE = (
    "Please answer the question concisely in one or two words. We also provide Named "
    "Entities and knowledge triples separated by <sep> token for your assistance:\n"
    "Question: <question>\n"
    "Named Entities: <named entities>\n"
    "Triples: <triples string>\n"
)
_SPATIAL = _PLAIN + (
    "Don’t give named entities in the answer instead provide the answer in form "
    "Person in Center, Person in Left, Person in Right.\n"
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER_RE.findall(self.body)))


TEMPLATES = {
    "zero-shot-plain": PromptTemplate("zero-shot-plain", _PLAIN),
    "zero-shot-knowledge": PromptTemplate("zero-shot-knowledge", _KNOWLEDGE),
    "spatial-normalized": PromptTemplate("spatial-normalized", _SPATIAL),
}


def get_template(name: str) -> PromptTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise ValueError(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None


def render_prompt(template: PromptTemplate | str, query: Query, context: str | None = None) -> str:
    """Fill the template's placeholders in a single pass.

    Substituted values are never rescanned, so a question that happens to
    contain ``<question>`` is left as is.
    """
    if isinstance(template, str):
        template = get_template(template)
    values = {QUESTION: query.question, ENTITIES: format_entities(query.entities)}
    if context is not None:
        values[TRIPLES] = context
    for name in template.placeholders:
        if name not in values:
            raise PlaceholderError(name)
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(0)], template.body)
