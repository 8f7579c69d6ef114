import io
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgfilter.errors import IngestError, SerializationError
from kgfilter.kg import (
    KnowledgeGraph,
    Triple,
    entity_triples,
    expand_hops,
    expand_hops_with_depth,
    ingest,
    normalize_label,
    normalize_with_offsets,
)
from kgfilter.synthetic import random_graph, surface_variant

from .oracles import bfs_hops, normalize, scan_entity_triples

label_text = st.text(alphabet="aAbB .\t\n,é", max_size=12)


# -- normalization -------------------------------------------------------------


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("R. Madhavan", "r.madhavan"),
        ("R.Madhavan", "r.madhavan"),
        ("  Sarita   Birje ", "sarita birje"),
        ("sarita  birje", "sarita birje"),
        ("A.  B.  C", "a.b.c"),
    ],
)
def test_normalize_label_examples(raw, expected):
    assert normalize_label(raw) == expected


@given(label_text)
def test_normalize_is_idempotent(text):
    once = normalize_label(text)
    assert normalize_label(once) == once


@given(label_text)
def test_fast_and_offset_normalizers_agree(text):
    assert normalize_label(text) == normalize_with_offsets(text)[0] == normalize(text)


@given(st.text(max_size=20))
def test_offsets_point_into_source(text):
    norm, offsets = normalize_with_offsets(text)
    assert len(norm) == len(offsets)
    assert offsets == sorted(offsets)
    assert all(0 <= i < len(text) for i in offsets)


# -- triples ---------------------------------------------------------------------


def test_triple_serializes_with_one_space_after_commas():
    assert Triple("R.Madhavan", "spouse", "Sarita Birje").serialize() == "(R.Madhavan, spouse, Sarita Birje)"


@pytest.mark.parametrize("fields", [("", "r", "t"), ("h", "  ", "t"), ("h", "r", "\t")])
def test_triple_rejects_empty_fields(fields):
    with pytest.raises(ValueError):
        Triple(*fields)


field_text = st.text(min_size=1, max_size=10).filter(lambda s: s.strip() and ", " not in s)


@given(field_text, field_text, field_text)
def test_triple_serialization_round_trips(h, r, t):
    triple = Triple(h, r, t)
    assert Triple.parse(triple.serialize()) == triple


def test_parse_rejects_ambiguous_text():
    with pytest.raises(SerializationError):
        Triple.parse("(Washington, D.C., capital of, USA)")


# -- ingest ------------------------------------------------------------------------


def test_ingest_tsv_line():
    kg = ingest(b"R.Madhavan\tspouse\tSarita Birje\n")
    assert kg.triples == (Triple("R.Madhavan", "spouse", "Sarita Birje"),)


def test_ingest_drops_duplicates_and_counts_them(caplog):
    data = b"A\tr\tB\nC\ts\tD\nA\tr\tB\n"
    with caplog.at_level("WARNING"):
        kg = ingest(data)
    assert len(kg) == 2
    assert kg.duplicate_count == 1
    assert "1 duplicate" in caplog.text


def test_ingest_dedup_uses_normalization():
    kg = ingest(b"R. Madhavan\tspouse\tSarita Birje\nr.madhavan\tspouse\tSarita  Birje\n")
    assert len(kg) == 1 and kg.duplicate_count == 1
    assert kg.triples[0].head == "R. Madhavan"


def test_ingest_keeps_first_occurrence_order():
    kg = ingest(b"C\ts\tD\nA\tr\tB\nC\ts\tD\nE\tt\tF\n")
    assert [t.head for t in kg.triples] == ["C", "A", "E"]


def test_ingest_skips_comments_and_blank_lines():
    kg = ingest(b"# header\n\nA\tr\tB\n\n")
    assert len(kg) == 1


@pytest.mark.parametrize(
    "data, line",
    [
        (b"A\tr\tB\nbroken line\n", 2),
        (b"A\tr\tB\nA\tr\tB\textra\n", 2),
        (b"A\t\tB\n", 1),
        (b"A\tr\t  \n", 1),
        (b"A\tr\tB\n\xff\xfe\tr\tB\n", 2),
    ],
)
def test_ingest_errors_cite_line(data, line):
    with pytest.raises(IngestError) as info:
        ingest(data)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


@pytest.mark.parametrize("data", [b"", b"# only a comment\n", b"\n\n"])
def test_ingest_empty_file(data):
    with pytest.raises(IngestError, match="empty knowledge base"):
        ingest(data)


def test_ingest_jsonl():
    data = b'{"head": "A", "relation": "r", "tail": "B"}\n{"head": "C", "relation": "s", "tail": "D"}\n'
    kg = ingest(io.BytesIO(data), format="jsonl")
    assert kg.triples == (Triple("A", "r", "B"), Triple("C", "s", "D"))


@pytest.mark.parametrize(
    "line", [b'{"head": "A", "relation": "r"}', b"not json", b'{"head": "A", "relation": "r", "tail": ""}']
)
def test_ingest_jsonl_errors(line):
    with pytest.raises(IngestError) as info:
        ingest(b'{"head": "X", "relation": "y", "tail": "Z"}\n' + line + b"\n", format="jsonl")
    assert info.value.line == 2


def test_ingest_accepts_paths_and_text_streams(tmp_path):
    path = tmp_path / "kg.tsv"
    path.write_text("A\tr\tB\n", encoding="utf-8")
    assert ingest(path).source_digest == ingest(str(path)).source_digest
    assert ingest(io.StringIO("A\tr\tB\n")).triples == (Triple("A", "r", "B"),)


def test_ingest_is_deterministic():
    data = "\n".join(f"e{i % 37}\tr{i % 5}\te{(i * 7) % 41}" for i in range(500)).encode()
    a, b = ingest(data), ingest(data)
    assert a.source_digest == b.source_digest
    assert a.triples == b.triples
    assert ingest(data + b"\n").source_digest != a.source_digest


def test_graph_is_immutable(chain_kg):
    with pytest.raises(Exception):
        chain_kg.triples = ()
    with pytest.raises(TypeError):
        chain_kg.entity_index["x"] = frozenset()


# -- index and lookup ----------------------------------------------------------------


def test_index_covers_head_and_tail(madhavan_kg):
    for ordinal, t in enumerate(madhavan_kg.triples):
        assert ordinal in madhavan_kg.lookup(t.head)
        assert ordinal in madhavan_kg.lookup(t.tail)
    assert madhavan_kg.lookup("Nobody") == frozenset()


def test_entity_triples_examples(madhavan_kg):
    kg = KnowledgeGraph.from_triples([Triple("A", "r1", "B"), Triple("C", "r2", "D")])
    assert entity_triples(kg, {"A"}) == {Triple("A", "r1", "B")}
    assert entity_triples(kg, set()) == set()
    assert Triple("R.Madhavan", "spouse", "Sarita Birje") in entity_triples(madhavan_kg, {"sarita  birje"})
    assert entity_triples(madhavan_kg, {"R. Madhavan"}) == {
        Triple("R.Madhavan", "spouse", "Sarita Birje"),
        Triple("R.Madhavan", "occupation", "actor"),
    }


def test_entity_triples_matches_linear_scan():
    rng = random.Random(7)
    for size in (1, 10, 300, 10_000):
        kg = random_graph(size, seed=rng)
        labels = sorted({t.head for t in kg.triples} | {t.tail for t in kg.triples})
        for _ in range(50 if size < 10_000 else 200):
            entities = {surface_variant(l, rng) for l in rng.sample(labels, min(len(labels), rng.randint(0, 4)))}
            if rng.random() < 0.3:
                entities.add("missing label")
            assert entity_triples(kg, entities) == scan_entity_triples(kg.triples, entities)


# -- multi-hop -----------------------------------------------------------------------


def test_expand_hops_chain(chain_kg):
    A_B, B_C, C_D = chain_kg.triples
    assert expand_hops(chain_kg, {"A"}, 1) == {A_B}
    assert expand_hops(chain_kg, {"A"}, 2) == {A_B, B_C}
    assert expand_hops(chain_kg, {"A"}, 10) == {A_B, B_C, C_D}


def test_expand_hops_reports_depth(chain_kg):
    depth = expand_hops_with_depth(chain_kg, {"a"}, 3)
    assert depth == {0: 1, 1: 2, 2: 3}


def test_expand_hops_rejects_nonpositive_k(chain_kg):
    with pytest.raises(ValueError):
        expand_hops(chain_kg, {"A"}, 0)


@given(st.integers(1, 200), st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_expand_hops_matches_bfs_and_is_monotone(n, seed, k):
    rng = random.Random(seed)
    kg = random_graph(n, seed=rng)
    entities = {rng.choice(kg.triples).head, "absent"}
    got = expand_hops_with_depth(kg, entities, k)
    want = bfs_hops(kg.triples, entities, k)
    assert {kg.triples[i]: hop for i, hop in got.items()} == want
    assert expand_hops(kg, entities, k) <= expand_hops(kg, entities, k + 1)
    assert expand_hops(kg, entities, 1) == entity_triples(kg, entities)
