"""Brute-force reference implementations used to check the fast paths.

Nothing here imports the code under test except plain data types.
"""

from __future__ import annotations

import math
import re
from collections import deque
from functools import lru_cache


@lru_cache(maxsize=None)
def normalize(text: str) -> str:
    text = re.sub(r"\s+", " ", text).strip()
    text = re.sub(r"\. ", ".", text)
    return text.casefold()


def scan_entity_triples(triples, entities):
    wanted = {normalize(e) for e in entities}
    wanted.discard("")
    return {t for t in triples if normalize(t.head) in wanted or normalize(t.tail) in wanted}


def bfs_hops(triples, entities, k):
    """Triples within ``k`` hops, via BFS distances on the label graph.

    A triple is reached at hop ``1 + min(dist(head), dist(tail))`` where
    ``dist`` counts triple edges from the starting entity labels.
    """
    adjacency: dict[str, set[str]] = {}
    for t in triples:
        h, tl = normalize(t.head), normalize(t.tail)
        adjacency.setdefault(h, set()).add(tl)
        adjacency.setdefault(tl, set()).add(h)
    dist: dict[str, int] = {}
    queue = deque()
    for e in entities:
        n = normalize(e)
        if n and n not in dist:
            dist[n] = 0
            queue.append(n)
    while queue:
        label = queue.popleft()
        for nxt in adjacency.get(label, ()):
            if nxt not in dist:
                dist[nxt] = dist[label] + 1
                queue.append(nxt)
    reached = {}
    for t in triples:
        d = min(dist.get(normalize(t.head), math.inf), dist.get(normalize(t.tail), math.inf))
        if d + 1 <= k:
            reached[t] = int(d) + 1
    return reached


def py_cosine(a, b) -> float:
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def sort_oracle(items):
    """Full stable sort by (score desc, serialization asc)."""
    by_text = sorted(items, key=lambda s: s.triple.serialize())
    return sorted(by_text, key=lambda s: -s.score)


def _word(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def mask_oracle(question: str, entities, mask_token: str) -> str:
    """Try every raw substring; longest entity first, left to right."""
    protected = [False] * len(question)
    i = question.find(mask_token)
    while i >= 0:
        for j in range(i, i + len(mask_token)):
            protected[j] = True
        i = question.find(mask_token, i + 1)
    needles = sorted({normalize(e) for e in entities if normalize(e)}, key=lambda n: (-len(n), n))
    spans = []
    n = len(question)
    for needle in needles:
        i = 0
        while i < n:
            hit = None
            if not question[i].isspace():
                for j in range(i + 1, n + 1):
                    if question[j - 1].isspace():
                        continue
                    if normalize(question[i:j]) != needle:
                        continue
                    if _word(needle[0]) and i > 0 and _word(question[i - 1]):
                        continue
                    if _word(needle[-1]) and j < n and _word(question[j]):
                        continue
                    if any(protected[i:j]):
                        continue
                    hit = j
                    break
            if hit is None:
                i += 1
                continue
            for x in range(i, hit):
                protected[x] = True
            spans.append((i, hit))
            i = hit
    out, cursor = [], 0
    for a, b in sorted(spans):
        out += [question[cursor:a], mask_token]
        cursor = b
    out.append(question[cursor:])
    return "".join(out)
