"""Command-line entry point: ``kgfilter <command> ...``.

Exit codes: 0 success, 1 data or processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .contrastive import (
    ProjectionHead,
    load_instances,
    make_separable_dataset,
    train_head,
    write_loss_trace,
)
from .context import DEFAULT_SEP, TEMPLATES, assemble_input, render_prompt, serialize_context
from .embedding import ENDPOINT_ENV, MemoizedProvider, make_provider
from .errors import KGFilterError
from .evaluation import (
    bench_sweep,
    evaluate,
    load_predictions,
    load_relevance,
    load_sweep,
    default_sweep_configs,
)
from .filtering import ContextBundle, RetrievalConfig, load_queries, retrieve
from .kg import ingest
from .manifest import RunManifest

logger = logging.getLogger("kgfilter")

_RETRIEVAL_DEFAULTS = {
    "lam": 0.8,
    "hops": 2,
    "mode": "dynamic",
    "top_k": 5,
    "mask_token": "<MASK>",
}
_PROVIDER_DEFAULTS = {
    "provider": "hash",
    "dim": 256,
    "seed": 0,
    "embeddings": None,
    "question_embeddings": None,
    "endpoint": None,
    "batch_size": 64,
    "jobs": 1,
}
_CONFIG_ALIASES = {"lambda": "lam", "top-k": "top_k"}


class UsageError(Exception):
    pass


def _existing(path: str | None, what: str) -> str:
    if not path or not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _settings(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    merged = {**_RETRIEVAL_DEFAULTS, **_PROVIDER_DEFAULTS}
    if getattr(args, "config", None):
        with open(_existing(args.config, "config file"), encoding="utf-8") as fh:
            for key, value in json.load(fh).items():
                key = _CONFIG_ALIASES.get(key, key).replace("-", "_")
                if key not in merged:
                    raise UsageError(f"unknown config key {key!r}")
                merged[key] = value
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _retrieval_config(s: dict) -> RetrievalConfig:
    return RetrievalConfig(
        lam=float(s["lam"]), hops=int(s["hops"]), mode=s["mode"],
        top_k=int(s["top_k"]), mask_token=s["mask_token"],
    )


def _providers(s: dict):
    provider = MemoizedProvider(
        make_provider(s["provider"], dim=int(s["dim"]), seed=int(s["seed"]),
                      path=s["embeddings"], endpoint=s["endpoint"], batch_size=int(s["batch_size"]))
    )
    question_provider = None
    if s["question_embeddings"]:
        question_provider = make_provider("precomputed", path=s["question_embeddings"])
    return provider, question_provider


def _provider_snapshot(s: dict) -> dict:
    # --jobs changes scheduling only, so it stays out of the run identity
    return {k: s[k] for k in _PROVIDER_DEFAULTS if k != "jobs"}


def _manifest_path(args, default_dir: str | None = None) -> str:
    if getattr(args, "manifest", None):
        return args.manifest
    output = getattr(args, "output", None)
    if output:
        return output + ".manifest.json"
    return os.path.join(default_dir or ".", "manifest.json")


def _open_output(path: str | None):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", encoding="utf-8")
    return sys.stdout


# -- commands ----------------------------------------------------------------------


def cmd_ingest(args) -> int:
    _existing(args.triples, "triples file")
    kg = ingest(args.triples, args.format)
    stats = {
        "triples": len(kg),
        "entities": kg.entity_count,
        "duplicates": kg.duplicate_count,
        "digest": kg.source_digest,
    }
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        print(f"triples: {stats['triples']}, entities: {stats['entities']}, "
              f"duplicates dropped: {stats['duplicates']}")
    return 0


def cmd_retrieve(args) -> int:
    _existing(args.triples, "triples file")
    _existing(args.queries, "queries file")
    s = _settings(args)
    config = _retrieval_config(s)
    manifest = RunManifest("retrieve", {**config.to_dict(), **_provider_snapshot(s)},
                           seed=int(s["seed"]))
    manifest.add_input("triples", args.triples)
    manifest.add_input("queries", args.queries)
    for key in ("embeddings", "question_embeddings"):
        if s[key]:
            manifest.add_input(key, s[key])

    kg = ingest(args.triples, args.format)
    queries = sorted(load_queries(args.queries), key=lambda q: q.id)
    provider, question_provider = _providers(s)

    def run(query):
        try:
            return retrieve(kg, query, config, provider, question_provider), None
        except KGFilterError as exc:
            return None, exc

    jobs = int(s["jobs"])
    if jobs > 1 and provider.concurrency_safe:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, queries))
    else:
        results = [run(q) for q in queries]

    failures = 0
    out = _open_output(args.output)
    try:
        for query, (bundle, error) in zip(queries, results):
            if error is not None:
                failures += 1
                print(f"error: query {query.id}: {error}", file=sys.stderr)
                continue
            row = bundle.to_dict()
            row["context"] = serialize_context(bundle, args.sep)
            row["run_id"] = manifest.run_id
            out.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.output:
        manifest.outputs.append(args.output)
    manifest.write(_manifest_path(args))
    if failures:
        print(f"{failures} of {len(queries)} queries failed", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    s = _settings(args)
    out_dir = Path(args.output_dir)
    if args.planted:
        from .synthetic import planted_benchmark

        bench = planted_benchmark(n_queries=args.planted, seed=int(s["seed"]))
        kg, queries, provider, relevance = bench.kg, bench.queries, bench.provider, bench.relevance
        question_provider = None
        manifest_inputs = {"planted": f"n={args.planted},seed={s['seed']}"}
    else:
        _existing(args.triples, "triples file")
        _existing(args.queries, "queries file")
        kg = ingest(args.triples, args.format)
        queries = load_queries(args.queries)
        provider, question_provider = _providers(s)
        relevance = load_relevance(_existing(args.relevance, "relevance file")) if args.relevance else None
        manifest_inputs = {}
    configs = load_sweep(_existing(args.sweep, "sweep file")) if args.sweep else default_sweep_configs(
        hops=int(s["hops"]), lam=float(s["lam"])
    )

    manifest = RunManifest("bench", {"configs": [c.to_dict() for c in configs],
                                     **_provider_snapshot(s)}, seed=int(s["seed"]))
    manifest.inputs.update(manifest_inputs)
    for name in ("triples", "queries", "sweep", "relevance"):
        path = getattr(args, name, None)
        if path and (name == "sweep" or not args.planted):
            manifest.add_input(name, path)

    report = bench_sweep(kg, queries, provider, configs, relevance,
                         question_provider=question_provider, jobs=int(s["jobs"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    for row in report.rows:
        row["run_id"] = manifest.run_id
    files = {
        "report.csv": report.to_csv(),
        "per_class.csv": report.to_csv(per_class=True),
        "report_long.csv": report.to_long_csv(),
        "report.json": report.to_json(),
    }
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")
        manifest.outputs.append(str(out_dir / name))
    manifest.write(args.manifest or out_dir / "manifest.json")
    if not args.quiet:
        sys.stdout.write(files["report.csv"])
    return 0


def cmd_eval(args) -> int:
    _existing(args.predictions, "predictions file")
    _existing(args.queries, "queries file")
    result = evaluate(load_predictions(args.predictions), load_queries(args.queries))
    manifest = RunManifest("eval", {})
    manifest.add_input("predictions", args.predictions)
    manifest.add_input("queries", args.queries)
    payload = {**result.to_dict(), "run_id": manifest.run_id}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
        manifest.outputs.append(args.output)
    else:
        sys.stdout.write(text)
    if args.csv:
        lines = ["class,n,correct,accuracy,run_id"]
        for name, entry in result.per_class.items():
            lines.append(f"{name},{entry['n']},{entry['correct']},{entry['accuracy']!r},{manifest.run_id}")
        lines.append(f"__overall__,{len(result.records)},"
                     f"{sum(r.matched for r in result.records)},{result.accuracy!r},{manifest.run_id}")
        lines.append(f"__macro__,{len(result.per_class)},,{result.macro_accuracy!r},{manifest.run_id}")
        Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
        manifest.outputs.append(args.csv)
    manifest.write(_manifest_path(args))
    return 0


def cmd_prompt(args) -> int:
    _existing(args.queries, "queries file")
    queries = load_queries(args.queries)
    contexts: dict[str, str] = {}
    manifest = RunManifest("prompt", {"template": args.template, "sep": args.sep,
                                      "assemble": args.assemble})
    manifest.add_input("queries", args.queries)
    if args.contexts:
        manifest.add_input("contexts", _existing(args.contexts, "contexts file"))
        with open(args.contexts, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    bundle = ContextBundle.from_dict(json.loads(line))
                    contexts[bundle.query_id] = serialize_context(bundle, args.sep)

    out = _open_output(args.output)
    try:
        for query in queries:
            context = contexts.get(query.id)
            if args.assemble:
                image_ref = query.image_ref or f"img:{query.id}"
                assembled = assemble_input(image_ref, query, context or "", args.sep)
                row = {**assembled.to_dict(query.id), "run_id": manifest.run_id}
                out.write(json.dumps(row, ensure_ascii=False) + "\n")
                continue
            if context is None and args.template == "zero-shot-knowledge":
                context = ""
            prompt = render_prompt(TEMPLATES[args.template], query, context)
            if args.format == "text":
                out.write(prompt)
            else:
                row = {"id": query.id, "prompt": prompt, "run_id": manifest.run_id}
                out.write(json.dumps(row, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.output:
        manifest.outputs.append(args.output)
    manifest.write(_manifest_path(args))
    return 0


def cmd_train_align(args) -> int:
    out_dir = Path(args.output_dir)
    if args.data:
        dataset = load_instances(_existing(args.data, "training data"), tau=args.tau)
    else:
        dataset = make_separable_dataset(args.synthetic, dim=args.dim, tau=args.tau, seed=args.seed)
    if not dataset:
        raise KGFilterError("training data is empty")
    dim_in = dataset[0].positive.size
    dim_out = dataset[0].anchor.size
    if args.init == "identity":
        if dim_in != dim_out:
            raise UsageError("--init identity needs equal anchor and triple dims")
        head = ProjectionHead.identity(dim_in)
    else:
        head = ProjectionHead.random(dim_in, dim_out, seed=args.seed)

    manifest = RunManifest(
        "train-align",
        {"steps": args.steps, "learning_rate": args.lr, "tau": args.tau, "init": args.init,
         "synthetic": None if args.data else args.synthetic, "dim": dim_in},
        seed=args.seed,
    )
    if args.data:
        manifest.add_input("data", args.data)
    trained, trace = train_head(dataset, args.steps, args.lr, head)

    out_dir.mkdir(parents=True, exist_ok=True)
    head_path = out_dir / "head.json"
    head_path.write_text(json.dumps({**trained.to_dict(), "run_id": manifest.run_id}) + "\n",
                         encoding="utf-8")
    trace_path = out_dir / "loss_trace.csv"
    write_loss_trace(trace_path, trace)
    initial_path = out_dir / "head_init.json"
    initial_path.write_text(json.dumps(head.to_dict()) + "\n", encoding="utf-8")
    manifest.outputs += [str(head_path), str(trace_path), str(initial_path)]
    manifest.write(args.manifest or out_dir / "manifest.json")
    print(f"steps: {args.steps}, loss: {trace[0]:.6f} -> {trace[-1]:.6f}")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding provider")
    g.add_argument("--provider", choices=["hash", "precomputed", "remote"])
    g.add_argument("--embeddings", help="JSONL {key, vector} table for --provider precomputed")
    g.add_argument("--question-embeddings", dest="question_embeddings",
                   help="separate precomputed table for masked questions")
    g.add_argument("--endpoint", help=f"remote embedding URL (default ${ENDPOINT_ENV})")
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--dim", type=int, help="hash provider dimension")
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int, help="parallel queries")


def _add_retrieval_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("retrieval")
    g.add_argument("--config", help="flat JSON config; flags override it")
    g.add_argument("--lambda", dest="lam", type=float, help="similarity threshold (default 0.8)")
    g.add_argument("--hops", type=int, help="hop count (default 2)")
    g.add_argument("--mode", choices=["dynamic", "fixed"])
    g.add_argument("--top-k", dest="top_k", type=int, help="fixed-mode context size (default 5)")
    g.add_argument("--mask-token", dest="mask_token")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgfilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a triple file and print graph statistics")
    p.add_argument("triples")
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.add_argument("--json", action="store_true", help="print statistics as JSON")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("retrieve", help="select context triples for each query")
    p.add_argument("--triples", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.add_argument("--sep", default=DEFAULT_SEP)
    p.add_argument("--output", "-o")
    p.add_argument("--manifest")
    _add_retrieval_flags(p)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("bench", help="sweep retrieval configs and report context statistics")
    p.add_argument("--triples")
    p.add_argument("--queries")
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.add_argument("--sweep", help="JSON list of retrieval configs (default: top-k 1,3,5,7,9 + dynamic)")
    p.add_argument("--relevance", help="JSONL {id, relevant: [[h, r, t], ...]}")
    p.add_argument("--planted", type=int, metavar="N",
                   help="run on a generated planted-relevance benchmark with N queries")
    p.add_argument("--output-dir", dest="output_dir", default="bench-out")
    p.add_argument("--manifest")
    p.add_argument("--quiet", action="store_true")
    _add_retrieval_flags(p)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="exact-match scoring of predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--output", "-o", help="JSON report path (default stdout)")
    p.add_argument("--csv", help="per-class CSV report path")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prompt", help="render LLM prompts or assembled encoder inputs")
    p.add_argument("--queries", required=True)
    p.add_argument("--template", choices=sorted(TEMPLATES), default="zero-shot-plain")
    p.add_argument("--contexts", help="retrieve output JSONL supplying triples per query")
    p.add_argument("--assemble", action="store_true",
                   help="emit image/question/entities/context inputs instead of prompts")
    p.add_argument("--sep", default=DEFAULT_SEP)
    p.add_argument("--format", choices=["text", "jsonl"], default="jsonl")
    p.add_argument("--output", "-o")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("train-align", help="fit the triple-side projection head")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="JSONL {anchor, positive, negatives}")
    src.add_argument("--synthetic", type=int, default=200, help="generated separable instances")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=float(np.log(10.0)))
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=["identity", "random"], default="identity")
    p.add_argument("--output-dir", dest="output_dir", default="align-out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_train_align)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kgfilter {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (KGFilterError, ValueError, OSError) as exc:
        print(f"kgfilter {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
