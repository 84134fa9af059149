"""Deterministic stand-in for the answer endpoint.

Serves the chat-completions wire format from a fixture map of question
text to answer, so the whole pipeline runs and tests end to end without
a live model. Can also fail its first N requests to exercise the
client's retry path.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def question_of(messages: list[dict]) -> str | None:
    """The question is the last 'Question:' line of the last user
    message; templates place the real query after any one-shot example."""
    user = [m for m in messages if m.get("role") == "user"]
    if not user:
        return None
    for line in reversed(str(user[-1].get("content", "")).splitlines()):
        if line.startswith("Question: "):
            return line[len("Question: ") :].strip()
    return None


class StubLLM:
    """In-process chat-completions server on an ephemeral port."""

    def __init__(
        self,
        fixtures: dict[str, str],
        fail_first: int = 0,
        default_answer: str = "unknown",
        delay_s: float = 0.0,
    ):
        self.fixtures = dict(fixtures)
        self.default_answer = default_answer
        self.delay_s = delay_s
        self._fail_remaining = fail_first
        self._lock = threading.Lock()
        self.requests_served = 0
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                if not self.path.endswith("/chat/completions"):
                    self._reply(404, {"error": "not found"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length))
                except json.JSONDecodeError:
                    self._reply(400, {"error": "invalid JSON"})
                    return
                with stub._lock:
                    stub.requests_served += 1
                    if stub._fail_remaining > 0:
                        stub._fail_remaining -= 1
                        self._reply(500, {"error": "synthetic failure"})
                        return
                if stub.delay_s:
                    time.sleep(stub.delay_s)
                question = question_of(body.get("messages", []))
                answer = stub.fixtures.get(question, stub.default_answer)
                self._reply(
                    200,
                    {
                        "model": body.get("model", "stub"),
                        "choices": [
                            {"message": {"role": "assistant", "content": answer + "\n"}}
                        ],
                    },
                )

            def _reply(self, status: int, payload: dict):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> "StubLLM":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
        return False


def load_fixtures(path) -> dict[str, str]:
    """Fixture file: one JSON object mapping question -> answer."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return {str(k): str(v) for k, v in raw.items()}
