"""OpenAI-compatible model clients, prompt templates, and token accounting.

Both the chat and embeddings endpoints follow the common wire format:
``POST {base_url}/v1/chat/completions`` and ``POST {base_url}/v1/embeddings``
with a bearer token. Base URL and key come from ``UNWEAVER_BASE_URL`` /
``UNWEAVER_API_KEY`` unless given explicitly.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace

import httpx

from .corpus import Chunk
from .errors import BackendError

log = logging.getLogger("unweaver.gateway")

ENV_API_KEY = "UNWEAVER_API_KEY"
ENV_BASE_URL = "UNWEAVER_BASE_URL"

PHASES = ("index", "query")

CONTEXT_SEPARATOR = "\n\n---\n\n"

# System prompt for answer generation. {context} is replaced by the elected
# chunk texts joined with CONTEXT_SEPARATOR, in election order.
ANSWER_SYSTEM_TEMPLATE = (
    "You are a question answering system.\n"
    "Please make sure that the answer is correct and complete. \n"
    "At the same time avoid redundancy and irrelevant information.\n"
    "Please try to answer the question in Single Sentence.\n"
    "\n"
    "Do so based on the following context:\n"
    "\n"
    "{context}"
)

# System prompt for per-chunk entity extraction. Descriptions must be
# grounded in the presented chunk alone.
EXTRACTION_SYSTEM_PROMPT = (
    "You extract named entities from text.\n"
    "List the distinct named entities mentioned in the chunk below, and for "
    "each one write a short description based on the chunk content only.\n"
    "Respond with a JSON array and nothing else, in the form "
    '[{"name": "...", "description": "..."}].'
)

SHORTEN_SYSTEM_PROMPT = (
    "You shorten text.\n"
    "Rewrite the user's text so it fits within {limit} characters while "
    "keeping the key facts. Respond with the shortened text only."
)


def estimate_tokens(text: str) -> int:
    """Character-count fallback (ceil len/4) when a provider omits usage."""
    return (len(text) + 3) // 4


@dataclass
class TokenUsage:
    """Monotone token counters, split by pipeline phase.

    LLM prompt/completion tokens and embedder tokens are tracked separately
    for the index-build and query phases. Updates are atomic so concurrent
    extraction workers can share one instance.
    """

    index_prompt: int = 0
    index_completion: int = 0
    query_prompt: int = 0
    query_completion: int = 0
    index_embed: int = 0
    query_embed: int = 0
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def record_chat(self, phase: str, prompt_tokens: int, completion_tokens: int) -> None:
        _check_phase(phase)
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            if phase == "index":
                self.index_prompt += prompt_tokens
                self.index_completion += completion_tokens
            else:
                self.query_prompt += prompt_tokens
                self.query_completion += completion_tokens

    def record_embed(self, phase: str, tokens: int) -> None:
        _check_phase(phase)
        if tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            if phase == "index":
                self.index_embed += tokens
            else:
                self.query_embed += tokens

    def snapshot(self) -> "TokenUsage":
        with self._lock:
            return replace(self)

    def as_dict(self) -> dict:
        return {
            "index_prompt": self.index_prompt,
            "index_completion": self.index_completion,
            "query_prompt": self.query_prompt,
            "query_completion": self.query_completion,
            "index_embed": self.index_embed,
            "query_embed": self.query_embed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TokenUsage":
        return cls(**{k: int(data.get(k, 0)) for k in cls().as_dict()})


def _check_phase(phase: str) -> None:
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: list[tuple[str, str]]  # (role, content), roles in {system, user}
    temperature: float = 0.0

    def __post_init__(self):
        for role, _ in self.messages:
            if role not in ("system", "user"):
                raise ValueError(f"message role must be system or user, got {role!r}")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False


@dataclass(frozen=True)
class EmbedRequest:
    model: str
    texts: list[str]


@dataclass(frozen=True)
class EmbedResponse:
    vectors: list[list[float]]
    tokens: int
    estimated: bool = False


RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class ModelGateway:
    """HTTP client for chat completions and embeddings, with usage counters.

    Retries 429/5xx responses and transport failures up to ``max_retries``
    attempts with exponential backoff, then raises ``BackendError``. Every
    successful call books its tokens into exactly one phase bucket.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        chat_model: str = "default",
        embed_model: str = "default",
        timeout: float = 60.0,
        max_retries: int = 3,
        retry_backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL) or "http://localhost:8000").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.usage = TokenUsage()
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        last_status = None
        for attempt in range(self.max_retries):
            if attempt > 0 and self.retry_backoff > 0:
                time.sleep(self.retry_backoff * 2 ** (attempt - 1))
            try:
                response = self._client.post(url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                log.warning("attempt %d/%d to %s failed: %s", attempt + 1, self.max_retries, url, exc)
                continue
            if response.status_code == 200:
                try:
                    return response.json()
                except ValueError as exc:
                    raise BackendError(f"non-JSON response from {url}: {exc}", status=200) from exc
            last_status = response.status_code
            last_error = f"HTTP {response.status_code}"
            if response.status_code not in RETRYABLE_STATUSES:
                raise BackendError(f"{url} returned {last_error}", status=response.status_code)
            log.warning("attempt %d/%d to %s got %s", attempt + 1, self.max_retries, url, last_error)
        raise BackendError(
            f"{url} failed after {self.max_retries} attempts ({last_error})", status=last_status
        )

    def chat(self, request: ChatRequest, phase: str = "query") -> ChatResponse:
        """Run a chat completion and book its tokens under ``phase``."""
        _check_phase(phase)
        payload = {
            "model": request.model,
            "messages": [{"role": role, "content": content} for role, content in request.messages],
            "temperature": request.temperature,
        }
        data = self._post("/v1/chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc!r}") from exc
        usage = data.get("usage") or {}
        estimated = "prompt_tokens" not in usage or "completion_tokens" not in usage
        if estimated:
            prompt_tokens = sum(estimate_tokens(c) for _, c in request.messages)
            completion_tokens = estimate_tokens(content)
        else:
            prompt_tokens = int(usage["prompt_tokens"])
            completion_tokens = int(usage["completion_tokens"])
        self.usage.record_chat(phase, prompt_tokens, completion_tokens)
        return ChatResponse(
            content=content,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            estimated=estimated,
        )

    def embed(self, request: EmbedRequest, phase: str = "index") -> EmbedResponse:
        """Fetch embeddings for a batch of texts, preserving input order."""
        _check_phase(phase)
        payload = {"model": request.model, "input": list(request.texts)}
        data = self._post("/v1/embeddings", payload)
        try:
            rows = data["data"]
            if all("index" in row for row in rows):
                rows = sorted(rows, key=lambda item: item["index"])
            vectors = [[float(v) for v in row["embedding"]] for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embeddings response: {exc!r}") from exc
        if len(vectors) != len(request.texts):
            raise BackendError(
                f"embeddings response has {len(vectors)} rows for {len(request.texts)} inputs"
            )
        usage = data.get("usage") or {}
        estimated = "prompt_tokens" not in usage
        if estimated:
            tokens = sum(estimate_tokens(t) for t in request.texts)
        else:
            tokens = int(usage["prompt_tokens"])
        self.usage.record_embed(phase, tokens)
        return EmbedResponse(vectors=vectors, tokens=tokens, estimated=estimated)


def answer_prompt(context_chunks: list[Chunk], question: str) -> list[tuple[str, str]]:
    """Build the answer-generation messages from elected chunks.

    The system message is ANSWER_SYSTEM_TEMPLATE with {context} replaced by
    the chunk texts joined in election order; the user message is the
    question verbatim.
    """
    if not context_chunks:
        raise ValueError("answer_prompt requires at least one context chunk")
    context = CONTEXT_SEPARATOR.join(chunk.text for chunk in context_chunks)
    return [
        ("system", ANSWER_SYSTEM_TEMPLATE.format(context=context)),
        ("user", question),
    ]


def stub_answer(messages: list[tuple[str, str]]) -> str:
    """Deterministic offline answer: first sentence of the top context chunk."""
    marker = "Do so based on the following context:\n\n"
    for role, content in messages:
        if role == "system" and marker in content:
            context = content.split(marker, 1)[1]
            first_chunk = context.split(CONTEXT_SEPARATOR, 1)[0].strip()
            if first_chunk:
                stops = [pos for pos in (first_chunk.find(s) for s in ".!?") if pos != -1]
                if stops:
                    return first_chunk[: min(stops) + 1]
                return first_chunk
    return "No context available."
