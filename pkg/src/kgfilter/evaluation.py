"""Exact-match scoring and the fixed-vs-dynamic retrieval benchmark."""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .embedding import EmbeddingProvider
from .errors import EvaluationError, KGFilterError
from .filtering import DYNAMIC, ContextBundle, Query, RetrievalConfig, retrieve
from .kg import KnowledgeGraph, Triple

_TERMINAL_PUNCT = ".!?"
UNCLASSIFIED = "unclassified"


def normalize_answer(text: str) -> str:
    """Lowercase, trim, collapse whitespace, drop trailing ``. ! ?``."""
    text = " ".join(text.lower().split())
    return text.rstrip(_TERMINAL_PUNCT + " ")


def exact_match(predicted: str, gold: str) -> bool:
    return normalize_answer(predicted) == normalize_answer(gold)


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    predicted: str
    gold: str
    question_class: str | None
    matched: bool


@dataclass
class EvalResult:
    records: list[EvalRecord]
    accuracy: float
    per_class: dict[str, dict]
    macro_accuracy: float

    def to_dict(self) -> dict:
        return {
            "n": len(self.records),
            "accuracy": self.accuracy,
            "macro_accuracy": self.macro_accuracy,
            "per_class": self.per_class,
        }


def evaluate(
    predictions: Iterable[tuple[str, str]] | Mapping[str, str], queries: Sequence[Query]
) -> EvalResult:
    """Score predictions against the queries' gold answers.

    ``accuracy`` pools every record; ``macro_accuracy`` averages the
    per-class rates. Records are ordered by query id.
    """
    pairs = list(predictions.items()) if isinstance(predictions, Mapping) else list(predictions)
    if not pairs:
        raise EvaluationError("no predictions")
    by_id = {q.id: q for q in queries}
    seen: set[str] = set()
    records = []
    for qid, predicted in pairs:
        if qid in seen:
            raise EvaluationError(f"duplicate prediction id {qid!r}")
        seen.add(qid)
        query = by_id.get(qid)
        if query is None:
            raise EvaluationError(f"unknown prediction id {qid!r}")
        if query.gold_answer is None:
            raise EvaluationError(f"query {qid!r} has no gold answer")
        records.append(
            EvalRecord(qid, predicted, query.gold_answer, query.question_class,
                       exact_match(predicted, query.gold_answer))
        )
    records.sort(key=lambda r: r.query_id)

    per_class: dict[str, dict] = {}
    for rec in records:
        entry = per_class.setdefault(rec.question_class or UNCLASSIFIED, {"n": 0, "correct": 0})
        entry["n"] += 1
        entry["correct"] += rec.matched
    for entry in per_class.values():
        entry["accuracy"] = entry["correct"] / entry["n"]
    per_class = dict(sorted(per_class.items()))
    accuracy = sum(r.matched for r in records) / len(records)
    macro = statistics.fmean(e["accuracy"] for e in per_class.values())
    return EvalResult(records, accuracy, per_class, macro)


def load_predictions(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                pairs.append((str(row["id"]), str(row["predicted"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"{path}:{lineno}: bad prediction row ({exc})") from None
    return pairs


# -- retrieval metrics -----------------------------------------------------------


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """P/R/F1 with empty-set conventions.

    Nothing relevant and nothing selected scores 1/1/1. Selecting nothing
    when something is relevant gives precision 0; recall with nothing
    relevant is 1.
    """
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if fn == 0 else 0.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class _Tally:
    sizes: list[int] = field(default_factory=list)
    tp: int = 0
    fp: int = 0
    fn: int = 0
    query_f1: list[float] = field(default_factory=list)
    correct: int = 0
    judged: int = 0

    def summary(self, with_relevance: bool) -> dict:
        n = len(self.sizes)
        out = {
            "n_queries": n,
            "mean_context": statistics.fmean(self.sizes) if n else 0.0,
            "median_context": float(statistics.median(self.sizes)) if n else 0.0,
            "empty_fraction": sum(1 for s in self.sizes if s == 0) / n if n else 0.0,
            "exact_match": self.correct / self.judged if self.judged else None,
        }
        if with_relevance:
            p, r, f1 = precision_recall_f1(self.tp, self.fp, self.fn)
            out.update(
                precision=p,
                recall=r,
                f1=f1,
                macro_f1=statistics.fmean(self.query_f1) if self.query_f1 else None,
            )
        return out


@dataclass
class BenchReport:
    rows: list[dict]
    per_class: list[dict]

    TIMING_KEYS = ("wall_time",)

    def _strip(self, rows: list[dict], include_timing: bool) -> list[dict]:
        if include_timing:
            return rows
        return [{k: v for k, v in r.items() if k not in self.TIMING_KEYS} for r in rows]

    def to_dict(self, include_timing: bool = True) -> dict:
        return {"rows": self._strip(self.rows, include_timing), "per_class": self.per_class}

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2)

    def to_csv(self, include_timing: bool = True, per_class: bool = False) -> str:
        rows = self.per_class if per_class else self._strip(self.rows, include_timing)
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()

    def to_long_csv(self) -> str:
        """One ``config,metric,value`` line per numeric cell, for plotting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["config", "mode", "metric", "value"])
        for row in self.rows:
            for key, value in row.items():
                if key in ("config", "mode") or not isinstance(value, (int, float)):
                    continue
                writer.writerow([row["config"], row["mode"], key, value])
        return buf.getvalue()


class BenchError(KGFilterError):
    pass


Predictor = Callable[[Query, ContextBundle], str]


def bench_sweep(
    kg: KnowledgeGraph,
    queries: Sequence[Query],
    provider: EmbeddingProvider,
    configs: Sequence[RetrievalConfig],
    oracle_relevance: Mapping[str, set[Triple]] | None = None,
    predictor: Predictor | None = None,
    question_provider: EmbeddingProvider | None = None,
    jobs: int = 1,
) -> BenchReport:
    """Retrieve every query under every config and aggregate.

    With ``oracle_relevance`` the rows carry pooled precision/recall/F1 of
    the selected triples against the relevant sets (plus a per-query mean
    F1). With ``predictor`` they carry the exact-match rate of its answers.
    """
    if not configs:
        raise ValueError("bench_sweep needs at least one config")
    ordered = sorted(queries, key=lambda q: q.id)
    rows: list[dict] = []
    per_class: list[dict] = []
    with_rel = oracle_relevance is not None

    for config in configs:
        def run(query: Query) -> ContextBundle:
            try:
                return retrieve(kg, query, config, provider, question_provider)
            except KGFilterError as exc:
                raise BenchError(f"query {query.id!r} under {config.label()}: {exc}") from exc

        start = time.perf_counter()
        if jobs > 1 and provider.concurrency_safe:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                bundles = list(pool.map(run, ordered))
        else:
            bundles = [run(q) for q in ordered]
        elapsed = time.perf_counter() - start

        overall = _Tally()
        classes: dict[str, _Tally] = {}
        for query, bundle in zip(ordered, bundles):
            tallies = (overall, classes.setdefault(query.question_class or UNCLASSIFIED, _Tally()))
            selected = set(bundle.triples)
            counts = None
            if with_rel:
                relevant = set(oracle_relevance.get(query.id, ()))
                counts = (len(selected & relevant), len(selected - relevant), len(relevant - selected))
            matched = None
            if predictor is not None and query.gold_answer is not None:
                matched = exact_match(predictor(query, bundle), query.gold_answer)
            for tally in tallies:
                tally.sizes.append(len(selected))
                if counts is not None:
                    tally.tp += counts[0]
                    tally.fp += counts[1]
                    tally.fn += counts[2]
                    tally.query_f1.append(precision_recall_f1(*counts)[2])
                if matched is not None:
                    tally.judged += 1
                    tally.correct += matched

        head = {
            "config": config.label(),
            "mode": config.mode,
            "lambda": config.lam if config.mode == DYNAMIC else None,
            "top_k": None if config.mode == DYNAMIC else config.top_k,
            "hops": config.hops,
        }
        rows.append({**head, **overall.summary(with_rel), "wall_time": elapsed})
        for name, tally in sorted(classes.items()):
            per_class.append({"config": config.label(), "class": name, **tally.summary(with_rel)})
    return BenchReport(rows, per_class)


def default_sweep_configs(hops: int = 2, lam: float = 0.8) -> list[RetrievalConfig]:
    """Fixed top-k for k in 1, 3, 5, 7, 9 followed by one dynamic row."""
    fixed = [RetrievalConfig(mode="fixed", top_k=k, hops=hops) for k in (1, 3, 5, 7, 9)]
    return fixed + [RetrievalConfig(mode=DYNAMIC, lam=lam, hops=hops)]


def load_sweep(path) -> list[RetrievalConfig]:
    """Sweep file: a JSON list of config objects, or ``{"configs": [...]}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("configs", [])
    if not data:
        raise ValueError(f"{path}: sweep has no configs")
    return [RetrievalConfig.from_dict(obj) for obj in data]


def load_relevance(path) -> dict[str, set[Triple]]:
    """Rows ``{"id": ..., "relevant": [[head, relation, tail], ...]}``."""
    out: dict[str, set[Triple]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[str(row["id"])] = {Triple(*t) for t in row["relevant"]}
    return out
