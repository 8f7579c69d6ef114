"""Question-side triple filtering.

Pipeline for one query::

    expand_hops -> mask_entities -> score_candidates -> select_context

Dynamic mode keeps every candidate whose cosine to the masked question is
at least ``lambda``; fixed mode keeps the ``top_k`` best. Both order the
result by descending score, ties broken by the triple's serialized text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .embedding import EmbeddingProvider, cosine_many, stack
from .errors import EmbeddingError, ScoringError, SimilarityError
from .kg import KnowledgeGraph, Triple, expand_hops_with_depth, normalize_with_offsets

DYNAMIC = "dynamic"
FIXED = "fixed"
DEFAULT_MASK = "<MASK>"


@dataclass(frozen=True)
class Query:
    id: str
    question: str
    entities: tuple[str, ...] = ()
    gold_answer: str | None = None
    question_class: str | None = None
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.question.strip():
            raise ValueError(f"query {self.id!r}: question must be non-empty")
        object.__setattr__(self, "entities", tuple(self.entities))

    @classmethod
    def from_dict(cls, obj: dict) -> "Query":
        return cls(
            id=str(obj["id"]),
            question=obj["question"],
            entities=tuple(obj.get("entities") or ()),
            gold_answer=obj.get("answer"),
            question_class=obj.get("class"),
            image_ref=obj.get("image"),
        )

    def to_dict(self) -> dict:
        out = {"id": self.id, "question": self.question, "entities": list(self.entities)}
        if self.gold_answer is not None:
            out["answer"] = self.gold_answer
        if self.question_class is not None:
            out["class"] = self.question_class
        if self.image_ref is not None:
            out["image"] = self.image_ref
        return out


def load_queries(path) -> list[Query]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                queries.append(Query.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad query record ({exc})") from None
    return queries


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for one retrieval run.

    ``lam`` is the similarity threshold (serialized as ``"lambda"``). It is
    only read in dynamic mode; ``top_k`` only in fixed mode.
    """

    lam: float = 0.8
    hops: int = 2
    mode: str = DYNAMIC
    top_k: int = 5
    mask_token: str = DEFAULT_MASK

    def __post_init__(self) -> None:
        if self.mode not in (DYNAMIC, FIXED):
            raise ValueError(f"mode must be 'dynamic' or 'fixed', got {self.mode!r}")
        if not -1.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [-1, 1], got {self.lam}")
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not self.mask_token:
            raise ValueError("mask_token must be non-empty")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "top_k": self.top_k,
            "hops": self.hops,
            "mask_token": self.mask_token,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RetrievalConfig":
        kwargs = {}
        aliases = {"lambda": "lam", "lam": "lam", "hops": "hops", "mode": "mode",
                   "top_k": "top_k", "top-k": "top_k", "mask_token": "mask_token"}
        for key, value in obj.items():
            if key not in aliases:
                raise ValueError(f"unknown retrieval config key {key!r}")
            kwargs[aliases[key]] = value
        return cls(**kwargs)

    def label(self) -> str:
        if self.mode == DYNAMIC:
            return f"dynamic(lambda={self.lam:g},hops={self.hops})"
        return f"fixed(top_k={self.top_k},hops={self.hops})"


class Candidate(NamedTuple):
    triple: Triple
    hop: int = 1


@dataclass(frozen=True)
class ScoredTriple:
    triple: Triple
    score: float
    hop: int = 1

    def sort_key(self) -> tuple[float, str]:
        return (-self.score, self.triple.serialize())

    def to_dict(self) -> dict:
        t = self.triple
        return {"head": t.head, "relation": t.relation, "tail": t.tail,
                "score": self.score, "hop": self.hop}


@dataclass(frozen=True)
class ContextBundle:
    selected: tuple[ScoredTriple, ...]
    config_used: RetrievalConfig
    candidate_count: int
    query_id: str = ""
    masked_question: str = ""

    @property
    def triples(self) -> list[Triple]:
        return [s.triple for s in self.selected]

    def to_dict(self) -> dict:
        return {
            "id": self.query_id,
            "masked_question": self.masked_question,
            "config": self.config_used.to_dict(),
            "candidate_count": self.candidate_count,
            "selected": [s.to_dict() for s in self.selected],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ContextBundle":
        selected = tuple(
            ScoredTriple(Triple(s["head"], s["relation"], s["tail"]), float(s["score"]), int(s["hop"]))
            for s in obj["selected"]
        )
        return cls(
            selected=selected,
            config_used=RetrievalConfig.from_dict(obj["config"]),
            candidate_count=int(obj["candidate_count"]),
            query_id=str(obj.get("id", "")),
            masked_question=obj.get("masked_question", ""),
        )


# -- masking -------------------------------------------------------------------


def _occurrences(haystack: str, needle: str) -> Iterable[int]:
    start = haystack.find(needle)
    while start >= 0:
        yield start
        start = haystack.find(needle, start + 1)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def mask_entities(question: str, entities: Sequence[str], mask_token: str = DEFAULT_MASK) -> str:
    """Replace every mention of each entity in ``question`` with ``mask_token``.

    Mentions are found on the normalized text (see
    :func:`kgfilter.kg.normalize_label`), so ``"R. Madhavan"`` masks
    ``"R.Madhavan"``. Longer entities win over shorter overlapping ones, a
    match must not start or end inside a word, and existing occurrences of
    ``mask_token`` are never touched.
    """
    if not entities or not question:
        return question
    norm, offsets = normalize_with_offsets(question)
    taken = [False] * len(question)
    for start in _occurrences(question, mask_token):
        for i in range(start, start + len(mask_token)):
            taken[i] = True

    needles = {normalize_with_offsets(e)[0] for e in entities}
    spans: list[tuple[int, int]] = []
    for needle in sorted((n for n in needles if n), key=lambda n: (-len(n), n)):
        for pos in _occurrences(norm, needle):
            end = pos + len(needle)
            if _is_word_char(needle[0]) and pos > 0 and _is_word_char(norm[pos - 1]):
                continue
            if _is_word_char(needle[-1]) and end < len(norm) and _is_word_char(norm[end]):
                continue
            raw_start, raw_end = offsets[pos], offsets[end - 1] + 1
            if any(taken[raw_start:raw_end]):
                continue
            for i in range(raw_start, raw_end):
                taken[i] = True
            spans.append((raw_start, raw_end))

    if not spans:
        return question
    pieces = []
    cursor = 0
    for raw_start, raw_end in sorted(spans):
        pieces.append(question[cursor:raw_start])
        pieces.append(mask_token)
        cursor = raw_end
    pieces.append(question[cursor:])
    return "".join(pieces)


# -- scoring and selection -----------------------------------------------------


def _embed_triples(provider: EmbeddingProvider, triples: Sequence[Triple]):
    texts = [t.serialize() for t in triples]
    try:
        return provider.embed_batch(texts)
    except EmbeddingError:
        pass
    # locate the offending triple for the error message
    for triple, text in zip(triples, texts):
        try:
            provider.embed(text)
        except EmbeddingError as exc:
            raise ScoringError(f"embedding failed for triple {text}: {exc}", triple) from exc
    raise ScoringError("embedding failed for a batch of triples")


def score_candidates(
    masked_question: str,
    candidates: Iterable[Candidate | tuple[Triple, int] | Triple],
    provider: EmbeddingProvider,
    question_provider: EmbeddingProvider | None = None,
) -> list[ScoredTriple]:
    """Score each candidate by cosine(masked question, serialized triple).

    Output order matches input order. ``question_provider`` defaults to
    ``provider``.
    """
    items = [c if isinstance(c, tuple) else Candidate(c) for c in candidates]
    if not items:
        return []
    q_vec = (question_provider or provider).embed(masked_question)
    triples = [c[0] for c in items]
    vectors = _embed_triples(provider, triples)
    try:
        scores = cosine_many(q_vec, stack(vectors))
    except SimilarityError as exc:
        for triple, vec in zip(triples, vectors):
            if vec.shape != q_vec.shape or not vec.any():
                raise ScoringError(f"cannot score triple {triple}: {exc}", triple) from exc
        raise
    return [ScoredTriple(c[0], float(s), int(c[1])) for c, s in zip(items, scores)]


def select_context(
    scored: Sequence[ScoredTriple],
    config: RetrievalConfig,
    *,
    candidate_count: int | None = None,
    query_id: str = "",
    masked_question: str = "",
) -> ContextBundle:
    ranked = sorted(scored, key=ScoredTriple.sort_key)
    if config.mode == DYNAMIC:
        selected = [s for s in ranked if s.score >= config.lam]
    else:
        selected = ranked[: config.top_k]
    return ContextBundle(
        selected=tuple(selected),
        config_used=config,
        candidate_count=len(scored) if candidate_count is None else candidate_count,
        query_id=query_id,
        masked_question=masked_question,
    )


def retrieve(
    kg: KnowledgeGraph,
    query: Query,
    config: RetrievalConfig,
    provider: EmbeddingProvider,
    question_provider: EmbeddingProvider | None = None,
) -> ContextBundle:
    """Run the full filtering pipeline for one query."""
    depth = expand_hops_with_depth(kg, query.entities, config.hops)
    candidates = [Candidate(kg.triples[i], hop) for i, hop in sorted(depth.items())]
    masked = mask_entities(query.question, query.entities, config.mask_token)
    scored = score_candidates(masked, candidates, provider, question_provider)
    return select_context(
        scored,
        config,
        candidate_count=len(candidates),
        query_id=query.id,
        masked_question=masked,
    )
