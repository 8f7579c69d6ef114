"""Knowledge-graph context retrieval with dynamic triple filtering."""

__version__ = "0.1.0"

from .embedding import (  # noqa: E402
    EmbeddingProvider,
    HashEmbeddingProvider,
    MemoizedProvider,
    PrecomputedEmbeddingProvider,
    RemoteEmbeddingProvider,
    cosine,
)
from .filtering import (  # noqa: E402
    ContextBundle,
    Query,
    RetrievalConfig,
    ScoredTriple,
    mask_entities,
    retrieve,
    score_candidates,
    select_context,
)
from .kg import KnowledgeGraph, Triple, entity_triples, expand_hops, ingest, normalize_label  # noqa: E402

__all__ = [
    "ContextBundle",
    "EmbeddingProvider",
    "HashEmbeddingProvider",
    "KnowledgeGraph",
    "MemoizedProvider",
    "PrecomputedEmbeddingProvider",
    "Query",
    "RemoteEmbeddingProvider",
    "RetrievalConfig",
    "ScoredTriple",
    "Triple",
    "cosine",
    "entity_triples",
    "expand_hops",
    "ingest",
    "mask_entities",
    "normalize_label",
    "retrieve",
    "score_candidates",
    "select_context",
]
