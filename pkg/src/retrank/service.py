"""Long-running HTTP service over an immutable loaded pipeline.

Endpoints:
    GET  /healthz  -> {"status": "ok"}
    POST /search   -> stage-1 candidates for a query embedding
    POST /rerank   -> ranked sections for query tokens + candidates
    POST /answer   -> full pipeline: search, rerank, prompt, LLM

Malformed bodies get 400 with the offending field path; internal
failures get 500 with an opaque id that is logged server-side. Shutdown
drains in-flight requests before closing.
"""

from __future__ import annotations

import json
import logging
import signal
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .config import require_file
from .errors import DataError, TransportError
from .index import EmbeddingMatrix, RetrievalCandidate, normalize, search_topk
from .kb import KnowledgeBase, ingest
from .llm import AnswerRequest, EndpointConfig, generate_answer
from .rerank import QueryTokenSet, RerankConfig, SectionEmbeddingStore, rerank
from .evec import load_embeddings
from .stub import StubLLM, load_fixtures

log = logging.getLogger("retrank.service")


class BodyError(DataError):
    """Request body rejected; carries the field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def _field(body: dict, name: str, kind, required: bool = True, default=None):
    if name not in body:
        if required:
            raise BodyError(name, "field is required")
        return default
    value = body[name]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise BodyError(name, f"expected {kind.__name__}")
    return value


def _vector(body: dict, name: str) -> np.ndarray:
    raw = _field(body, name, list)
    for i, x in enumerate(raw):
        if not isinstance(x, (int, float)) or isinstance(x, bool):
            raise BodyError(f"{name}[{i}]", "expected number")
    if not raw:
        raise BodyError(name, "must be nonempty")
    return np.asarray(raw, dtype=np.float32)


def _matrix(body: dict, name: str) -> np.ndarray:
    raw = _field(body, name, list)
    if not raw:
        raise BodyError(name, "must be nonempty")
    rows = []
    width = None
    for i, row in enumerate(raw):
        if not isinstance(row, list):
            raise BodyError(f"{name}[{i}]", "expected a list of numbers")
        for j, x in enumerate(row):
            if not isinstance(x, (int, float)) or isinstance(x, bool):
                raise BodyError(f"{name}[{i}][{j}]", "expected number")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise BodyError(f"{name}[{i}]", f"expected {width} columns, got {len(row)}")
        rows.append(row)
    return np.asarray(rows, dtype=np.float32)


class RetrievalService:
    """Request handlers over immutable shared state; safe concurrently."""

    def __init__(
        self,
        kb: KnowledgeBase,
        index: EmbeddingMatrix,
        sections: SectionEmbeddingStore,
        defaults: dict,
        endpoint: EndpointConfig | None = None,
        stub: StubLLM | None = None,
    ):
        self.kb = kb
        self.index = index
        self.sections = sections
        self.defaults = defaults
        self.endpoint = endpoint
        self._stub = stub

    def close(self):
        if self._stub is not None:
            self._stub.__exit__(None, None, None)
            self._stub = None

    # ------------------------------------------------------------ routes

    def healthz(self) -> dict:
        return {"status": "ok"}

    def search(self, body: dict) -> dict:
        query = _vector(body, "embedding")
        k = _field(body, "k", int, required=False, default=self.defaults["k"])
        candidates = search_topk(self.index, query, k, self.kb)
        return {"candidates": [self._candidate_dict(c) for c in candidates]}

    def rerank_route(self, body: dict) -> dict:
        tokens = _matrix(body, "query_tokens")
        raw_candidates = _field(body, "candidates", list)
        candidates = []
        for i, raw in enumerate(raw_candidates):
            if not isinstance(raw, dict):
                raise BodyError(f"candidates[{i}]", "expected an object")
            try:
                candidates.append(RetrievalCandidate(
                    image_id=str(raw["image_id"]),
                    entry_url=str(raw["entry_url"]),
                    visual_score=float(raw["visual_score"]),
                    rank=int(raw["rank"]),
                ))
            except KeyError as exc:
                raise BodyError(f"candidates[{i}].{exc.args[0]}", "field is required") from None
            except (TypeError, ValueError) as exc:
                raise BodyError(f"candidates[{i}]", str(exc)) from None
        cfg = self._rerank_config(body)
        q = QueryTokenSet(query_id=str(body.get("query_id", "http")), tokens=tokens)
        ranked = rerank(q, candidates, self.sections, self.kb, cfg)
        return {"sections": [self._section_dict(i + 1, s) for i, s in enumerate(ranked)]}

    def answer(self, body: dict) -> dict:
        if self.endpoint is None:
            raise DataError("no answer endpoint configured for this service")
        question = _field(body, "question", str)
        if not question:
            raise BodyError("question", "must be nonempty")
        query = _vector(body, "embedding")
        tokens = _matrix(body, "query_tokens")
        k = _field(body, "k", int, required=False, default=self.defaults["k"])
        cfg = self._rerank_config(body)
        candidates = search_topk(self.index, query, k, self.kb)
        q = QueryTokenSet(query_id=str(body.get("query_id", "http")), tokens=tokens)
        ranked = rerank(q, candidates, self.sections, self.kb, cfg)
        top = ranked[0]
        context = self.kb.section(top.section_id).prefixed_text
        template = _field(
            body, "template", str, required=False, default=self.defaults["template"]
        )
        result = generate_answer(AnswerRequest(
            template=template, context=context, question=question, endpoint=self.endpoint,
        ))
        return {
            "answer": result.answer,
            "section_id": top.section_id,
            "entry_url": top.entry_url,
            "fused": top.fused,
            "latency_ms": result.latency_ms,
        }

    # ----------------------------------------------------------- helpers

    def _rerank_config(self, body: dict) -> RerankConfig:
        alpha = _field(body, "alpha", float, required=False, default=self.defaults["alpha"])
        scope = _field(body, "scope", int, required=False, default=self.defaults["scope"])
        return RerankConfig(alpha=alpha, scope=scope)

    @staticmethod
    def _candidate_dict(c: RetrievalCandidate) -> dict:
        return {
            "image_id": c.image_id,
            "entry_url": c.entry_url,
            "visual_score": c.visual_score,
            "rank": c.rank,
        }

    @staticmethod
    def _section_dict(rank: int, s) -> dict:
        return {
            "rank": rank,
            "section_id": s.section_id,
            "entry_url": s.entry_url,
            "s_r": s.s_r,
            "s_v": s.s_v,
            "fused": s.fused,
        }


class _Server(ThreadingHTTPServer):
    # non-daemon threads + block_on_close drain in-flight requests on close
    daemon_threads = False
    block_on_close = True


def make_server(service: RetrievalService, host: str, port: int) -> _Server:
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_GET(self):
            if self.path == "/healthz":
                self._json(200, service.healthz())
            else:
                self._json(404, {"error": {"message": "not found"}})

        def do_POST(self):
            routes = {
                "/search": service.search,
                "/rerank": service.rerank_route,
                "/answer": service.answer,
            }
            handler = routes.get(self.path)
            if handler is None:
                self._json(404, {"error": {"message": "not found"}})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    raise BodyError("body", "invalid JSON") from None
                if not isinstance(body, dict):
                    raise BodyError("body", "expected a JSON object")
                self._json(200, handler(body))
            except BodyError as exc:
                self._json(400, {"error": {"field": exc.field, "message": exc.message}})
            except (DataError, TransportError) as exc:
                self._json(400, {"error": {"message": str(exc)}})
            except Exception:
                error_id = uuid.uuid4().hex[:12]
                log.exception("internal error %s on %s", error_id, self.path)
                self._json(500, {"error": {"id": error_id}})

        def _json(self, status: int, payload: dict):
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return _Server((host, port), Handler)


def build_service(settings: dict) -> RetrievalService:
    kb_path = require_file(settings, "kb_file")
    kb, _ = ingest(kb_path, settings.get("images_manifest"))
    index = normalize(load_embeddings(require_file(settings, "image_evec")))
    sections = SectionEmbeddingStore(
        normalize(load_embeddings(require_file(settings, "section_evec")))
    )
    stub = None
    endpoint = None
    if settings.get("stub_fixtures"):
        stub = StubLLM(load_fixtures(settings["stub_fixtures"])).__enter__()
        endpoint = EndpointConfig(base_url=stub.base_url, model="stub")
    elif settings.get("endpoint_base_url"):
        endpoint = EndpointConfig(
            base_url=settings["endpoint_base_url"],
            model=settings["endpoint_model"],
            timeout_s=settings["endpoint_timeout_s"],
            max_tokens=settings["endpoint_max_tokens"],
            temperature=settings["endpoint_temperature"],
            max_retries=settings["endpoint_max_retries"],
        )
    return RetrievalService(
        kb=kb,
        index=index,
        sections=sections,
        defaults={
            "k": settings["k"],
            "alpha": settings["alpha"],
            "scope": settings["scope"],
            "template": settings["template"],
        },
        endpoint=endpoint,
        stub=stub,
    )


def serve_forever(service: RetrievalService, host: str, port: int) -> None:
    server = make_server(service, host, port)

    def request_shutdown(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, request_shutdown)
    signal.signal(signal.SIGTERM, request_shutdown)
    actual_host, actual_port = server.server_address[:2]
    print(f"serving on http://{actual_host}:{actual_port} (healthz, search, rerank, answer)")
    try:
        server.serve_forever()
    finally:
        server.server_close()
        service.close()
