"""Command-line pipeline: every stage reads and writes line-delimited
files so runs are resumable and each stage is independently testable.

Exit codes: 0 ok, 1 usage, 2 data error, 3 transport error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import SCHEMA, load_settings, require, require_file
from .errors import DataError, RetrankError, TransportError
from .evec import load_embeddings, save_embeddings
from .figures import render_bench_figure, render_recall_figure
from .index import normalize, search_topk
from .kb import export as export_kb
from .kb import ingest
from .llm import AnswerRequest, EndpointConfig, generate_answer
from .metrics import EvalRecord, evaluate, read_records
from .mining import contrastive_loss, mine_negatives, LossConfig
from .rerank import (
    RerankConfig,
    SectionEmbeddingStore,
    query_token_sets,
    rerank,
)
from .stub import StubLLM, load_fixtures


class UsageError(RetrankError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextmanager
def atomic_output(path: str | Path):
    """Write to <path>.tmp and rename on success; failures leave no
    partial output behind."""
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_jsonl(path: str | Path, records) -> None:
    with atomic_output(path) as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: record must be a JSON object")
            out.append(obj)
    return out


def _settings_from(args) -> dict:
    overrides = {key: value for key, value in vars(args).items() if key in SCHEMA}
    return load_settings(getattr(args, "config", None), overrides)


def _load_kb(settings, strict: bool = False):
    kb_path = require_file(settings, "kb_file")
    manifest = settings.get("images_manifest")
    if manifest is not None and not Path(manifest).exists():
        raise DataError(f"images_manifest: file not found: {manifest}")
    return ingest(kb_path, manifest, strict=strict)


def _load_normalized(path: str) -> "EmbeddingMatrix":
    return normalize(load_embeddings(path))


def _group_by_query(records: list[dict], key: str = "query_id") -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for record in records:
        if key not in record:
            raise DataError(f"record missing {key!r}: {record}")
        grouped.setdefault(str(record[key]), []).append(record)
    return grouped


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    settings = _settings_from(args)
    kb, report = _load_kb(settings, strict=args.strict)
    payload = {"stats": kb.stats, **report.as_dict()}
    if args.out:
        with atomic_output(args.out) as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    print(json.dumps(payload, indent=2))
    if args.export:
        with atomic_output(args.export) as fh:
            export_kb(kb, fh)
    if args.dump_sections:
        write_jsonl(
            args.dump_sections,
            (
                {"section_id": s.section_id, "text": s.prefixed_text}
                for s in kb.sections_of(kb.entries)
            ),
        )
    return 0


def cmd_index(args) -> int:
    matrix = load_embeddings(args.input)
    unit = normalize(matrix)
    save_embeddings(unit, args.out)
    print(f"normalized {len(unit)} vectors of dim {unit.dim} -> {args.out}")
    return 0


def cmd_search(args) -> int:
    settings = _settings_from(args)
    kb, _ = _load_kb(settings)
    index = _load_normalized(require_file(settings, "image_evec"))
    queries = load_embeddings(args.queries)
    k = settings["k"]
    rows = []
    for qid in queries.ids:
        for cand in search_topk(index, queries.row(qid), k, kb):
            rows.append({
                "query_id": qid,
                "rank": cand.rank,
                "image_id": cand.image_id,
                "entry_url": cand.entry_url,
                "visual_score": cand.visual_score,
            })
    write_jsonl(args.out, rows)
    print(f"searched {len(queries)} queries, k={k} -> {args.out}")
    return 0


def _candidates_of(records: list[dict]) -> list:
    from .index import RetrievalCandidate

    try:
        ordered = sorted(records, key=lambda r: int(r["rank"]))
        return [
            RetrievalCandidate(
                image_id=str(r["image_id"]),
                entry_url=str(r["entry_url"]),
                visual_score=float(r["visual_score"]),
                rank=int(r["rank"]),
            )
            for r in ordered
        ]
    except KeyError as exc:
        raise DataError(f"candidate record missing field {exc.args[0]!r}") from None


def cmd_rerank(args) -> int:
    settings = _settings_from(args)
    kb, _ = _load_kb(settings)
    token_sets = query_token_sets(load_embeddings(require_file(settings, "query_token_evec")))
    store = SectionEmbeddingStore(_load_normalized(require_file(settings, "section_evec")))
    cfg = RerankConfig(alpha=settings["alpha"], scope=settings["scope"])
    grouped = _group_by_query(read_jsonl(args.candidates))
    rows = []
    for qid, records in grouped.items():
        if qid not in token_sets:
            raise DataError(f"no query tokens for query {qid!r}")
        ranked = rerank(token_sets[qid], _candidates_of(records), store, kb, cfg)
        for position, section in enumerate(ranked, start=1):
            rows.append({
                "query_id": qid,
                "rank": position,
                "section_id": section.section_id,
                "entry_url": section.entry_url,
                "s_r": section.s_r,
                "s_v": section.s_v,
                "fused": section.fused,
            })
    write_jsonl(args.out, rows)
    print(f"reranked {len(grouped)} queries (alpha={cfg.alpha}, scope={cfg.scope}) -> {args.out}")
    return 0


def cmd_answer(args) -> int:
    settings = _settings_from(args)
    kb, _ = _load_kb(settings)
    ranked = _group_by_query(read_jsonl(args.ranked))
    questions = {
        str(r["query_id"]): str(r["question"]) for r in read_jsonl(args.questions)
    }

    stub = None
    try:
        if settings.get("stub_fixtures"):
            stub = StubLLM(load_fixtures(settings["stub_fixtures"])).__enter__()
            base_url = stub.base_url
            model = "stub"
        else:
            require(settings, "endpoint_base_url", "endpoint_model")
            base_url = settings["endpoint_base_url"]
            model = settings["endpoint_model"]
        endpoint = EndpointConfig(
            base_url=base_url,
            model=model,
            timeout_s=settings["endpoint_timeout_s"],
            max_tokens=settings["endpoint_max_tokens"],
            temperature=settings["endpoint_temperature"],
            max_retries=settings["endpoint_max_retries"],
        )
        rows = []
        transcripts = []
        for qid, records in ranked.items():
            if qid not in questions:
                raise DataError(f"no question for query {qid!r}")
            top = min(records, key=lambda r: int(r["rank"]))
            context = kb.section(str(top["section_id"])).prefixed_text
            result = generate_answer(
                AnswerRequest(
                    template=settings["template"],
                    context=context,
                    question=questions[qid],
                    endpoint=endpoint,
                )
            )
            rows.append({
                "query_id": qid,
                "answer": result.answer,
                "section_id": top["section_id"],
                "entry_url": top["entry_url"],
                "latency_ms": result.latency_ms,
                "retries": result.transcript["retry_count"],
            })
            if args.transcripts:
                transcripts.append({"query_id": qid, "transcript": result.transcript})
        write_jsonl(args.out, rows)
        if args.transcripts:
            write_jsonl(args.transcripts, transcripts)
    finally:
        if stub is not None:
            stub.__exit__(None, None, None)
    print(f"answered {len(rows)} queries -> {args.out}")
    return 0


def _compose_records(args) -> list[EvalRecord]:
    gold_rows = read_jsonl(args.gold)
    ranked = _group_by_query(read_jsonl(args.ranked))
    answers = {}
    if args.answers:
        answers = {
            str(r["query_id"]): str(r["answer"]) for r in read_jsonl(args.answers)
        }
    records = []
    for gold in gold_rows:
        try:
            qid = str(gold["query_id"])
            gold_url = str(gold["gold_url"])
            gold_answers = tuple(str(a) for a in gold["gold_answers"])
        except KeyError as exc:
            raise DataError(f"gold record missing field {exc.args[0]!r}") from None
        if qid not in ranked:
            raise DataError(f"no ranked output for query {qid!r}")
        ordered = sorted(ranked[qid], key=lambda r: int(r["rank"]))
        records.append(EvalRecord(
            query_id=qid,
            gold_url=gold_url,
            ranked_urls=tuple(str(r["entry_url"]) for r in ordered),
            gold_answers=gold_answers,
            predicted_answer=answers.get(qid),
            answer_kind=str(gold.get("answer_kind", "string")),
        ))
    return records


def cmd_eval(args) -> int:
    settings = _settings_from(args)
    issues: list[str] = []
    if args.records:
        with open(args.records, "r", encoding="utf-8") as fh:
            records, issues = read_records(fh)
        if not records:
            raise DataError("no valid records to evaluate")
    else:
        if not (args.ranked and args.gold):
            raise UsageError("eval: provide --records, or --ranked with --gold")
        records = _compose_records(args)
    report = evaluate(records, ks=settings["ks"])
    with atomic_output(args.out) as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    print(report.pretty())
    if not args.no_figure:
        figure_path = Path(args.out).with_suffix(".png")
        render_recall_figure(report.recall_at, figure_path)
        print(f"figure -> {figure_path}")
    if issues:
        for issue in issues:
            print(f"malformed record: {issue}", file=sys.stderr)
        return 2
    return 0


def cmd_mine(args) -> int:
    settings = _settings_from(args)
    kb, _ = _load_kb(settings)
    candidates = _group_by_query(read_jsonl(args.candidates))
    rows = []
    short = 0
    for gold in read_jsonl(args.gold):
        try:
            qid = str(gold["query_id"])
            gold_url = str(gold["gold_url"])
            evidence = str(gold["evidence_section_id"])
        except KeyError as exc:
            raise DataError(f"gold record missing field {exc.args[0]!r}") from None
        if qid not in candidates:
            raise DataError(f"no candidates for query {qid!r}")
        example = mine_negatives(
            qid, gold_url, evidence, _candidates_of(candidates[qid]), kb,
            n=settings["n_negatives"], seed=settings["seed"],
        )
        short += example.short
        rows.append(example.as_record())
    write_jsonl(args.out, rows)
    print(f"mined {len(rows)} examples ({short} short) -> {args.out}")
    return 0


def cmd_loss(args) -> int:
    settings = _settings_from(args)
    token_sets = query_token_sets(load_embeddings(require_file(settings, "query_token_evec")))
    store = SectionEmbeddingStore(_load_normalized(require_file(settings, "section_evec")))
    cfg = LossConfig(temperature=settings["loss_temperature"])
    rows = []
    for record in read_jsonl(args.batch):
        try:
            qid = str(record["query_id"])
            pos_id = str(record["positive_section_id"])
            neg_ids = [str(s) for s in record["negative_section_ids"]]
        except KeyError as exc:
            raise DataError(f"batch record missing field {exc.args[0]!r}") from None
        if qid not in token_sets:
            raise DataError(f"no query tokens for query {qid!r}")
        pos = store.get(pos_id)
        if pos is None:
            raise DataError(f"no section embedding for positive {pos_id!r}")
        missing = [s for s in neg_ids if store.get(s) is None]
        if missing:
            raise DataError("no section embedding for: " + ", ".join(missing))
        negs = [store.get(s) for s in neg_ids]
        result = contrastive_loss(token_sets[qid], pos, negs, cfg)
        rows.append({
            "query_id": qid,
            "loss": result.loss,
            "n_negatives": len(negs),
            "grad_norm_tokens": float(np.linalg.norm(result.grad_tokens)),
            "grad_norm_positive": float(np.linalg.norm(result.grad_positive)),
        })
    write_jsonl(args.out, rows)
    print(f"computed loss for {len(rows)} examples -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    settings = _settings_from(args)
    if args.synthetic:
        kb, index, sections = bench_mod.synthetic_corpus(
            n_entries=args.synthetic_entries,
            images_per_entry=args.images_per_entry,
            sections_per_entry=args.sections_per_entry,
            dim=args.dim,
            seed=settings["seed"],
        )
    else:
        kb, _ = _load_kb(settings)
        index = _load_normalized(require_file(settings, "image_evec"))
        sections = _load_normalized(require_file(settings, "section_evec"))
    report = bench_mod.bench_throughput(
        index, sections, kb,
        scopes=settings["scopes"],
        repetitions=settings["repetitions"],
        warmup=settings["warmup"],
        alpha=settings["alpha"],
        seed=settings["seed"],
    )
    write_jsonl(args.out, report.as_records())
    for row in report.rows:
        print(f"scope {row.scope:>5}: {row.total_retrieval_time_s:.4f} s total, "
              f"{row.qps:.2f} qps")
    if not args.no_figure:
        figure_path = Path(args.out).with_suffix(".png")
        render_bench_figure([r.as_record() for r in report.rows], figure_path)
        print(f"figure -> {figure_path}")
    return 0


def cmd_serve(args) -> int:
    from .service import build_service, serve_forever

    settings = _settings_from(args)
    service = build_service(settings)
    serve_forever(service, settings["host"], settings["port"])
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="retrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat JSON config file")
        return p

    p = add("ingest", cmd_ingest, "validate a knowledge-base file and report stats")
    p.add_argument("--kb", dest="kb_file", required=True)
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", help="write the report JSON here as well")
    p.add_argument("--export", help="re-export the canonical KB file")
    p.add_argument("--dump-sections", help="write {section_id, text} lines for embedding")

    p = add("index", cmd_index, "normalize an embedding file for cosine search")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("search", cmd_search, "visual-only top-k search")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--index", dest="image_evec")
    p.add_argument("--queries", required=True, help="EVEC of query image embeddings")
    p.add_argument("--k", dest="k", type=int)
    p.add_argument("--out", required=True)

    p = add("rerank", cmd_rerank, "late-interaction rerank of candidate sections")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--candidates", required=True)
    p.add_argument("--query-tokens", dest="query_token_evec")
    p.add_argument("--sections", dest="section_evec")
    p.add_argument("--alpha", dest="alpha", type=float)
    p.add_argument("--scope", dest="scope", type=int)
    p.add_argument("--out", required=True)

    p = add("answer", cmd_answer, "generate answers from top reranked sections")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--ranked", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--template", dest="template", choices=["evqa", "infoseek"])
    p.add_argument("--endpoint", dest="endpoint_base_url")
    p.add_argument("--model", dest="endpoint_model")
    p.add_argument("--stub", dest="stub_fixtures", help="question->answer JSON fixture map")
    p.add_argument("--out", required=True)
    p.add_argument("--transcripts", help="write full request transcripts here")

    p = add("eval", cmd_eval, "retrieval and answer metrics")
    p.add_argument("--records", help="line-delimited evaluation records")
    p.add_argument("--ranked", help="compose records from rerank output")
    p.add_argument("--answers", help="answers file for composition")
    p.add_argument("--gold", help="gold labels for composition")
    p.add_argument("--ks", dest="ks")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figure", action="store_true")

    p = add("mine", cmd_mine, "build hard-negative training batches")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--candidates", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--n", dest="n_negatives", type=int)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--out", required=True)

    p = add("loss", cmd_loss, "contrastive loss over a mined batch")
    p.add_argument("--query-tokens", dest="query_token_evec")
    p.add_argument("--sections", dest="section_evec")
    p.add_argument("--batch", required=True)
    p.add_argument("--temperature", dest="loss_temperature", type=float)
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, "throughput benchmark (batch size 1)")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--index", dest="image_evec")
    p.add_argument("--sections", dest="section_evec")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--synthetic-entries", type=int, default=20_000)
    p.add_argument("--images-per-entry", type=int, default=5)
    p.add_argument("--sections-per-entry", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--scopes", dest="scopes")
    p.add_argument("--repetitions", dest="repetitions", type=int)
    p.add_argument("--warmup", dest="warmup", type=int)
    p.add_argument("--alpha", dest="alpha", type=float)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figure", action="store_true")

    p = add("serve", cmd_serve, "HTTP service over the loaded pipeline")
    p.add_argument("--kb", dest="kb_file")
    p.add_argument("--images", dest="images_manifest")
    p.add_argument("--index", dest="image_evec")
    p.add_argument("--sections", dest="section_evec")
    p.add_argument("--host", dest="host")
    p.add_argument("--port", dest="port", type=int)
    p.add_argument("--stub", dest="stub_fixtures")

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
