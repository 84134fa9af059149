"""Chat-completions client for the external answer generator.

The wire format is the de facto chat-completions JSON over HTTP, so any
hosted or local model server is pluggable. Transient transport failures
(connection errors, timeouts, 5xx) are retried with exponential backoff;
client errors are surfaced immediately.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass

import requests

from .errors import DataError, EmptyCompletionError, StatusError, TransportError
from .prompts import get_template, render_prompt

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_TOKENS = 64
DEFAULT_TEMPERATURE = 0.0
MAX_RETRIES = 3
API_KEY_ENV = "RETRANK_API_KEY"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str  # includes any version prefix, e.g. http://host:8000/v1
    model: str
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = MAX_RETRIES
    backoff_s: float = 0.5
    api_key_env: str = API_KEY_ENV

    @property
    def completions_url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


@dataclass(frozen=True)
class AnswerRequest:
    template: str  # "evqa" | "infoseek"
    context: str
    question: str
    endpoint: EndpointConfig

    def __post_init__(self):
        if not self.context:
            raise DataError("context must be nonempty")
        if not self.question:
            raise DataError("question must be nonempty")


@dataclass
class AnswerResult:
    answer: str
    transcript: dict
    latency_ms: float


class RateLimiter:
    """Caps in-flight requests across threads."""

    def __init__(self, max_concurrency: int):
        self._sem = threading.Semaphore(max_concurrency)

    def __enter__(self):
        self._sem.acquire()

    def __exit__(self, *exc):
        self._sem.release()
        return False


def extract_answer(raw: str) -> str:
    """Strip and keep the text before the first blank line."""
    return raw.strip().split("\n\n", 1)[0].strip()


def generate_answer(req: AnswerRequest, limiter: RateLimiter | None = None) -> AnswerResult:
    """Render the prompt, call the endpoint, and trim the completion.

    The full exchange (prompt, payload, per-attempt outcomes, raw
    response) is retained in the transcript for audit. The rendered
    prompt is never mutated.
    """
    messages = render_prompt(get_template(req.template), req.context, req.question)
    payload = {
        "model": req.endpoint.model,
        "messages": messages,
        "temperature": req.endpoint.temperature,
        "max_tokens": req.endpoint.max_tokens,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(req.endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    transcript: dict = {"prompt": messages, "request": payload, "attempts": []}
    started = time.perf_counter()
    attempts = req.endpoint.max_retries + 1
    last_error: Exception | None = None
    response = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(req.endpoint.backoff_s * 2 ** (attempt - 1))
        t0 = time.perf_counter()
        try:
            if limiter is not None:
                with limiter:
                    resp = requests.post(
                        req.endpoint.completions_url,
                        json=payload,
                        headers=headers,
                        timeout=req.endpoint.timeout_s,
                    )
            else:
                resp = requests.post(
                    req.endpoint.completions_url,
                    json=payload,
                    headers=headers,
                    timeout=req.endpoint.timeout_s,
                )
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = TransportError(f"request failed: {exc}")
            transcript["attempts"].append(
                {"error": str(exc), "latency_ms": _ms_since(t0)}
            )
            continue
        if resp.status_code >= 500:
            last_error = StatusError(resp.status_code, resp.text[:200])
            transcript["attempts"].append(
                {"status": resp.status_code, "latency_ms": _ms_since(t0)}
            )
            continue
        transcript["attempts"].append(
            {"status": resp.status_code, "latency_ms": _ms_since(t0)}
        )
        if resp.status_code != 200:
            transcript["retry_count"] = attempt
            raise StatusError(resp.status_code, resp.text[:200])
        response = resp
        break

    transcript["retry_count"] = len(transcript["attempts"]) - 1
    if response is None:
        raise last_error if last_error is not None else TransportError("no attempts made")

    try:
        body = response.json()
        raw = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise TransportError(
            f"malformed completion body: {response.text[:200]}"
        ) from None
    transcript["response"] = body
    answer = extract_answer(raw)
    if not answer:
        raise EmptyCompletionError("endpoint produced an empty completion")
    transcript["answer"] = answer
    return AnswerResult(
        answer=answer, transcript=transcript, latency_ms=_ms_since(started)
    )


def _ms_since(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0
