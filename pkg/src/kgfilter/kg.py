"""Triple store: ingestion, entity index and multi-hop candidate expansion.

The graph is built once from a TSV or JSONL triple file and never mutated
afterwards. Every entity label (head and tail) is normalized before it is
indexed, so lookups tolerate casing, surrounding whitespace and the
``"R. Madhavan"`` / ``"R.Madhavan"`` spelling difference.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import IO, Iterable, Iterator, Mapping, Union

from .errors import IngestError, SerializationError

logger = logging.getLogger(__name__)

_PERIOD_SPACE = re.compile(r"\. ")

Source = Union[str, "os.PathLike[str]", IO[bytes], IO[str], bytes]


def normalize_with_offsets(text: str) -> tuple[str, list[int]]:
    """Normalize ``text`` and return, for every output char, its source index.

    Case-folds, drops leading/trailing whitespace, collapses whitespace runs
    to one space and removes whitespace that follows a period.
    """
    out: list[str] = []
    offsets: list[int] = []
    pending_space = -1
    for i, ch in enumerate(text):
        if ch.isspace():
            if out and out[-1] != "." and pending_space < 0:
                pending_space = i
            continue
        if pending_space >= 0:
            out.append(" ")
            offsets.append(pending_space)
            pending_space = -1
        for low in ch.casefold():
            out.append(low)
            offsets.append(i)
    return "".join(out), offsets


def normalize_label(text: str) -> str:
    """Fast path equivalent to ``normalize_with_offsets(text)[0]``."""
    return _PERIOD_SPACE.sub(".", " ".join(text.split())).casefold()


@dataclass(frozen=True, order=True)
class Triple:
    """One ``(head, relation, tail)`` fact."""

    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"triple {name} must be a non-empty string")

    def serialize(self) -> str:
        return f"({self.head}, {self.relation}, {self.tail})"

    __str__ = serialize

    @classmethod
    def parse(cls, text: str) -> "Triple":
        """Inverse of :meth:`serialize`.

        Fields containing the ``", "`` delimiter make the text ambiguous and
        are rejected.
        """
        if len(text) < 2 or text[0] != "(" or text[-1] != ")":
            raise SerializationError(f"not a serialized triple: {text!r}")
        parts = text[1:-1].split(", ")
        if len(parts) != 3:
            raise SerializationError(
                f"expected 3 comma-separated fields, got {len(parts)}: {text!r}"
            )
        try:
            return cls(*parts)
        except ValueError as exc:
            raise SerializationError(f"{exc}: {text!r}") from None

    def key(self) -> tuple[str, str, str]:
        """Normalized identity used for deduplication."""
        return (
            normalize_label(self.head),
            normalize_label(self.relation),
            normalize_label(self.tail),
        )


@dataclass(frozen=True)
class KnowledgeGraph:
    triples: tuple[Triple, ...]
    entity_index: Mapping[str, frozenset[int]]
    source_digest: str
    duplicate_count: int = 0
    _ordinal: Mapping[Triple, int] = field(default_factory=dict, repr=False, compare=False)
    # normalized (head, tail) per ordinal
    _endpoints: tuple[tuple[str, str], ...] = field(default=(), repr=False, compare=False)

    @classmethod
    def from_triples(
        cls, triples: Iterable[Triple], source_digest: str = ""
    ) -> "KnowledgeGraph":
        kept: list[Triple] = []
        endpoints: list[tuple[str, str]] = []
        seen: set[tuple[str, str, str]] = set()
        index: dict[str, set[int]] = {}
        duplicates = 0
        for triple in triples:
            key = triple.key()
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            ordinal = len(kept)
            kept.append(triple)
            endpoints.append((key[0], key[2]))
            index.setdefault(key[0], set()).add(ordinal)
            index.setdefault(key[2], set()).add(ordinal)
        if duplicates:
            logger.warning("dropped %d duplicate triple(s)", duplicates)
        if not source_digest:
            h = hashlib.sha256()
            for t in kept:
                h.update("\t".join((t.head, t.relation, t.tail)).encode("utf-8") + b"\n")
            source_digest = h.hexdigest()
        return cls(
            triples=tuple(kept),
            entity_index=MappingProxyType({k: frozenset(v) for k, v in index.items()}),
            source_digest=source_digest,
            duplicate_count=duplicates,
            _ordinal=MappingProxyType({t: i for i, t in enumerate(kept)}),
            _endpoints=tuple(endpoints),
        )

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def entity_count(self) -> int:
        return len(self.entity_index)

    def lookup(self, label: str) -> frozenset[int]:
        """Ordinals of triples with ``label`` as head or tail."""
        return self.entity_index.get(normalize_label(label), frozenset())

    def ordinal(self, triple: Triple) -> int:
        return self._ordinal[triple]

    def endpoints(self, ordinal: int) -> tuple[str, str]:
        """Normalized head and tail labels of the triple at ``ordinal``."""
        return self._endpoints[ordinal]


# -- ingestion ---------------------------------------------------------------


def _iter_lines(source: Source) -> Iterator[tuple[int, bytes]]:
    if isinstance(source, bytes):
        stream: IO[bytes] = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from enumerate(fh, start=1)
        return
    else:
        stream = source  # type: ignore[assignment]
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, str):
            raw = raw.encode("utf-8")
        yield lineno, raw


def _parse_tsv(text: str, lineno: int) -> Triple | None:
    if not text.strip() or text.startswith("#"):
        return None
    fields = text.split("\t")
    if len(fields) != 3:
        raise IngestError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
    return _make_triple(fields, lineno)


def _parse_jsonl(text: str, lineno: int) -> Triple | None:
    if not text.strip():
        return None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict) or not {"head", "relation", "tail"} <= obj.keys():
        raise IngestError("expected an object with keys head/relation/tail", lineno)
    fields = [obj["head"], obj["relation"], obj["tail"]]
    if not all(isinstance(f, str) for f in fields):
        raise IngestError("head/relation/tail must be strings", lineno)
    return _make_triple(fields, lineno)


def _make_triple(fields: list[str], lineno: int) -> Triple:
    stripped = [f.strip() for f in fields]
    for name, value in zip(("head", "relation", "tail"), stripped):
        if not value:
            raise IngestError(f"empty {name} field", lineno)
    return Triple(*stripped)


def ingest(source: Source, format: str = "tsv") -> KnowledgeGraph:
    """Read a triple file into an indexed :class:`KnowledgeGraph`.

    ``source`` may be a path, raw bytes or an open (binary or text) stream.
    Duplicates are dropped keeping the first occurrence; ordinals follow
    first-occurrence order.
    """
    parsers = {"tsv": _parse_tsv, "jsonl": _parse_jsonl}
    if format not in parsers:
        raise ValueError(f"unsupported triple format {format!r}")
    parse = parsers[format]
    digest = hashlib.sha256()

    def records() -> Iterator[Triple]:
        for lineno, raw in _iter_lines(source):
            digest.update(raw)
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise IngestError("invalid UTF-8", lineno) from None
            text = text.rstrip("\r\n")
            if lineno == 1:
                text = text.lstrip("﻿")
            triple = parse(text, lineno)
            if triple is not None:
                yield triple

    triples = list(records())
    if not triples:
        raise IngestError("empty knowledge base")
    return KnowledgeGraph.from_triples(triples, source_digest=digest.hexdigest())


# -- queries -----------------------------------------------------------------


def _normalized_set(entities: Iterable[str]) -> set[str]:
    return {n for n in (normalize_label(e) for e in entities) if n}


def _ordinals_for(kg: KnowledgeGraph, labels: Iterable[str]) -> set[int]:
    found: set[int] = set()
    index = kg.entity_index
    for label in labels:
        hits = index.get(label)
        if hits:
            found |= hits
    return found


def entity_triples(kg: KnowledgeGraph, entities: Iterable[str]) -> set[Triple]:
    """Triples whose head or tail matches one of ``entities``."""
    return {kg.triples[i] for i in _ordinals_for(kg, _normalized_set(entities))}


def expand_hops_with_depth(
    kg: KnowledgeGraph, entities: Iterable[str], k: int
) -> dict[int, int]:
    """Frontier expansion returning ``{ordinal: hop}`` for every reached triple.

    Hop 1 holds the triples touching ``entities``; hop i+1 adds the triples
    touching any head or tail label found in hops 1..i.
    """
    if k < 1:
        raise ValueError("hop count must be >= 1")
    seen_labels = _normalized_set(entities)
    frontier = set(seen_labels)
    depth: dict[int, int] = {}
    for hop in range(1, k + 1):
        new = _ordinals_for(kg, frontier) - depth.keys()
        if not new:
            break
        next_frontier: set[str] = set()
        for ordinal in new:
            depth[ordinal] = hop
            next_frontier.update(kg.endpoints(ordinal))
        frontier = next_frontier - seen_labels
        seen_labels |= frontier
    return depth


def expand_hops(kg: KnowledgeGraph, entities: Iterable[str], k: int) -> set[Triple]:
    return {kg.triples[i] for i in expand_hops_with_depth(kg, entities, k)}
