"""Synthetic graphs and benchmarks with known answers.

``planted_benchmark`` builds queries whose relevant triples are fixed by
construction: each query owns one embedding axis, relevant triples sit at a
cosine above 0.8 to it and distractors below 0.5. Retrieval precision and
recall against the planted sets are then exact quantities.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .embedding import PrecomputedEmbeddingProvider
from .filtering import Query, mask_entities
from .kg import KnowledgeGraph, Triple

_WORDS = (
    "river stone lamp garden violin harbor castle meadow falcon copper velvet "
    "orchard lantern glacier canyon ember willow marble thistle beacon cedar "
    "quartz saddle prism tundra lagoon"
).split()

_RELATIONS = (
    "IsA UsedFor AtLocation HasProperty CapableOf PartOf RelatedTo MadeOf "
    "HasA Desires ReceivesAction CreatedBy spouse occupation country_of_citizenship "
    "place_of_birth date_of_birth member_of"
).split()


def _entity_label(rng: random.Random, i: int) -> str:
    return f"{rng.choice(_WORDS).title()} {i}"


def random_graph(
    n_triples: int, n_entities: int | None = None, seed: int | random.Random = 0
) -> KnowledgeGraph:
    """Random directed multigraph over ``n_entities`` labelled nodes."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    n_entities = n_entities or max(2, int(n_triples * rng.uniform(0.3, 1.5)))
    labels = [_entity_label(rng, i) for i in range(n_entities)]
    triples = []
    for _ in range(n_triples):
        h, t = rng.randrange(n_entities), rng.randrange(n_entities)
        triples.append(Triple(labels[h], rng.choice(_RELATIONS), labels[t]))
    return KnowledgeGraph.from_triples(triples)


def surface_variant(label: str, rng: random.Random) -> str:
    """Spell ``label`` differently without changing its normalized form."""
    choice = rng.randrange(4)
    if choice == 0:
        return label.upper()
    if choice == 1:
        return "  " + label.replace(" ", "   ") + " "
    if choice == 2:
        return label.lower()
    return label


def random_query(kg: KnowledgeGraph, seed: int | random.Random = 0, qid: str = "q") -> Query:
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    labels = sorted({t.head for t in kg.triples} | {t.tail for t in kg.triples})
    picked = rng.sample(labels, k=min(len(labels), rng.randint(0, 3)))
    entities = [surface_variant(p, rng) for p in picked]
    if rng.random() < 0.3:
        entities.append(f"Absent Entity {rng.randrange(10**6)}")
    words = [rng.choice(_WORDS + _RELATIONS) for _ in range(rng.randint(2, 8))]
    mention = f" of {picked[0]}" if picked else ""
    question = "What " + " ".join(words) + mention + "?"
    return Query(id=qid, question=question, entities=tuple(entities))


# -- planted relevance ---------------------------------------------------------


@dataclass
class PlantedBenchmark:
    kg: KnowledgeGraph
    queries: list[Query]
    provider: PrecomputedEmbeddingProvider
    relevance: dict[str, set[Triple]]


def _unit_mix(dim: int, axis: int, noise_axis: int, cos: float) -> list[float]:
    vec = [0.0] * dim
    vec[axis] = cos
    vec[noise_axis] = math.sqrt(max(0.0, 1.0 - cos * cos))
    return vec


def planted_benchmark(
    n_queries: int = 50,
    max_relevant: int = 9,
    n_distractors: int = 12,
    n_hubs: int = 4,
    seed: int = 0,
    mask_token: str = "<MASK>",
) -> PlantedBenchmark:
    """Queries with 0..``max_relevant`` relevant triples each, within 2 hops.

    Every query gets its own image entity and neighbourhood: ``n_hubs``
    one-hop triples and enough two-hop leaf triples to hold the relevant and
    distractor sets. Relevant triples embed at cosine in (0.8, 1.0] to the
    masked question, distractors in [-0.3, 0.5).
    """
    rng = random.Random(seed)
    dim = n_queries + 1
    noise_axis = n_queries
    table: dict[str, list[float]] = {}
    triples: list[Triple] = []
    queries: list[Query] = []
    relevance: dict[str, set[Triple]] = {}

    for q in range(n_queries):
        qid = f"p{q:04d}"
        entity = f"Entity {q}"
        n_rel = q % (max_relevant + 1)
        hubs = [f"Hub {q}.{h}" for h in range(n_hubs)]
        local = [Triple(entity, "associated with", hub) for hub in hubs]
        n_leaves = max(0, n_rel + n_distractors - len(local))
        local += [
            Triple(hubs[i % n_hubs], f"attribute {q}.{i}", f"Value {q}.{i}")
            for i in range(n_leaves)
        ]
        relevant = set(rng.sample(local, n_rel))
        for triple in local:
            if triple in relevant:
                cos = rng.uniform(0.81, 1.0)
            else:
                cos = rng.uniform(-0.3, 0.49)
            table[triple.serialize()] = _unit_mix(dim, q, noise_axis, cos)
        triples += local

        question = f"Which attribute {q} does {entity} have?"
        masked = mask_entities(question, [entity], mask_token)
        table[masked] = _unit_mix(dim, q, noise_axis, 1.0)
        queries.append(
            Query(
                id=qid,
                question=question,
                entities=(entity,),
                gold_answer=f"Value {q}.0",
                question_class="spatial" if n_rel == 0 else f"{n_rel}-relevant",
            )
        )
        relevance[qid] = relevant

    return PlantedBenchmark(
        kg=KnowledgeGraph.from_triples(triples),
        queries=queries,
        provider=PrecomputedEmbeddingProvider(table, source="planted"),
        relevance=relevance,
    )


# -- scale corpus ----------------------------------------------------------------

_CONCEPT_RELATIONS = (
    "IsA UsedFor AtLocation HasProperty CapableOf PartOf RelatedTo MadeOf HasA "
    "ReceivesAction Desires LocatedNear SimilarTo"
).split()


def write_scale_tsv(path, n_triples: int = 99_586, n_objects: int = 3_000, seed: int = 0) -> list[str]:
    """Write a ConceptNet-shaped TSV of exactly ``n_triples`` distinct triples.

    Heads are object labels, tails are concept labels drawn from a pool
    sized to keep two-hop neighbourhoods in the low hundreds. Returns the
    object labels.
    """
    rng = np.random.default_rng(seed)
    objects = [f"object {i}" for i in range(n_objects)]
    n_concepts = max(1, n_triples // 5)
    seen: set[tuple[int, int, int]] = set()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic object-concept triples\n")
        while len(seen) < n_triples:
            need = n_triples - len(seen)
            heads = rng.integers(n_objects, size=need)
            rels = rng.integers(len(_CONCEPT_RELATIONS), size=need)
            tails = rng.integers(n_concepts, size=need)
            for h, r, t in zip(heads.tolist(), rels.tolist(), tails.tolist()):
                key = (h, r, t)
                if key in seen:
                    continue
                seen.add(key)
                fh.write(f"{objects[h]}\t{_CONCEPT_RELATIONS[r]}\tconcept {t}\n")
    return objects
