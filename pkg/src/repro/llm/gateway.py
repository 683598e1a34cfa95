"""The single chokepoint for model traffic.

Every chat completion and embedding goes through :class:`Gateway`, which
handles model routing by purpose, retries with backoff, cost accounting and
the record/replay transcript store. In replay mode no backend is touched:
responses come byte-for-byte from ``transcripts.jsonl``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from ..errors import GatewayError, ParseFailure, ReplayMiss, TransientError
from .structured import extract_structured

logger = logging.getLogger(__name__)

PURPOSES = (
    "guide_extract", "ground", "standardize", "filter", "skeleton",
    "fill", "verify", "plan", "refine", "match",
)
CODING_PURPOSES = frozenset({"skeleton", "fill", "plan", "refine"})
MODES = ("live", "record", "replay")

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    model_id: str
    purpose: str
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")

    def digest(self) -> str:
        payload = json.dumps(
            {"messages": [list(m) for m in self.messages], "model": self.model_id, "purpose": self.purpose},
            ensure_ascii=False,
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


def transcript_key(request: ChatRequest, sequence_number: int) -> str:
    return hashlib.sha256(f"{request.digest()}:{sequence_number}".encode()).hexdigest()


def embedding_key(model_id: str, text: str) -> str:
    return hashlib.sha256(json.dumps(["embed", model_id, text], ensure_ascii=False).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# cost accounting


@dataclass(frozen=True)
class LedgerEntry:
    purpose: str
    model: str
    prompt_tokens: int
    completion_tokens: int
    cost: float
    priced: bool
    replayed: bool
    key: str


def call_cost(prices: dict, model: str, prompt_tokens: int, completion_tokens: int) -> tuple[float, bool]:
    """Currency for one call; prices are per 1k tokens. Unknown model costs 0."""
    price = prices.get(model)
    if not price:
        return 0.0, False
    return (prompt_tokens * float(price.get("input", 0.0)) + completion_tokens * float(price.get("output", 0.0))) / 1000.0, True


class CostLedger:
    def __init__(self, prices: dict | None = None) -> None:
        self.prices = dict(prices or {})
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def add(self, purpose: str, model: str, response: ChatResponse, *, key: str, replayed: bool = False) -> LedgerEntry:
        cost, priced = call_cost(self.prices, model, response.prompt_tokens, response.completion_tokens)
        entry = LedgerEntry(purpose, model, response.prompt_tokens, response.completion_tokens, cost, priced, replayed, key)
        with self._lock:
            self._entries.append(entry)
        return entry

    @property
    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return sorted(self._entries, key=lambda e: (e.purpose, e.key))

    @property
    def total_cost(self) -> float:
        # fsum is exactly rounded, so the total does not depend on arrival order
        return math.fsum(e.cost for e in self.entries)

    def per_purpose(self) -> dict[str, dict[str, Any]]:
        totals: dict[str, dict[str, Any]] = {}
        for e in self.entries:
            t = totals.setdefault(e.purpose, {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "cost": 0.0})
            t["calls"] += 1
            t["prompt_tokens"] += e.prompt_tokens
            t["completion_tokens"] += e.completion_tokens
        for purpose in totals:
            totals[purpose]["cost"] = math.fsum(e.cost for e in self.entries if e.purpose == purpose)
        return dict(sorted(totals.items()))

    def to_dict(self) -> dict:
        return {
            "prices_per_1k": self.prices,
            "total_cost": self.total_cost,
            "per_purpose": self.per_purpose(),
            "entries": [asdict(e) for e in self.entries],
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# transcript store


class TranscriptStore:
    """Append-only JSON-lines store keyed by content hash.

    ``path=None`` keeps everything in memory (handy for tests).
    """

    def __init__(self, path: str | Path | None = None, *, readonly: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.readonly = readonly
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    key = record["key"]
                    if key in self._records:
                        raise GatewayError(f"{self.path}:{lineno}: duplicate transcript key {key}")
                    self._records[key] = record

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> dict | None:
        return self._records.get(key)

    def put(self, record: dict) -> None:
        if self.readonly:
            raise GatewayError("transcript store is read-only")
        key = record["key"]
        with self._lock:
            if key in self._records:
                return
            self._records[key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# backends


class HTTPChatBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        *,
        timeout: float = 300.0,
        omit_temperature_for: Sequence[str] = ("o1", "o3", "o4"),
    ) -> None:
        import httpx

        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
        )
        self._omit_temperature_for = tuple(omit_temperature_for)

    def __call__(self, request: ChatRequest) -> ChatResponse:
        import httpx

        payload: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "max_tokens": request.max_output_tokens,
        }
        if not request.model_id.startswith(self._omit_temperature_for):
            payload["temperature"] = request.temperature
        started = time.monotonic()
        try:
            resp = self._client.post("/chat/completions", json=payload)
        except (httpx.TransportError, httpx.TimeoutException) as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        data = resp.json()
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransientError(f"malformed completion payload: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=int((time.monotonic() - started) * 1000),
        )


class ScriptedBackend:
    """Deterministic stand-in for a model.

    ``script`` is either a callable ``request -> str | ChatResponse`` or a
    mapping from purpose to a queue of replies. Queue items that are
    exceptions are raised instead of returned.
    """

    def __init__(self, script: Callable[[ChatRequest], Any] | dict[str, list[Any]]) -> None:
        self._fn = script if callable(script) else None
        self._queues = {k: list(v) for k, v in script.items()} if not callable(script) else {}
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    def __call__(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
            if self._fn is not None:
                reply = self._fn(request)
            else:
                queue = self._queues.get(request.purpose)
                if not queue:
                    raise GatewayError(f"script exhausted for purpose {request.purpose}")
                reply = queue.pop(0)
        if isinstance(reply, BaseException):
            raise reply
        if isinstance(reply, ChatResponse):
            return reply
        prompt_words = sum(len(t.split()) for _, t in request.messages)
        return ChatResponse(text=str(reply), prompt_tokens=prompt_words, completion_tokens=len(str(reply).split()))

    def calls_for(self, purpose: str) -> list[ChatRequest]:
        return [c for c in self.calls if c.purpose == purpose]


# ---------------------------------------------------------------------------
# gateway


@dataclass
class Routing:
    analysis_model: str = "analysis-model"
    coding_model: str = "coding-model"
    max_output_tokens: dict[str, int] = field(default_factory=dict)

    def model_for(self, purpose: str) -> str:
        return self.coding_model if purpose in CODING_PURPOSES else self.analysis_model


_TRANSIENT = (TransientError, ConnectionError, TimeoutError)


class Gateway:
    def __init__(
        self,
        backend: Callable[[ChatRequest], ChatResponse] | None = None,
        *,
        mode: str = "live",
        store: TranscriptStore | None = None,
        ledger: CostLedger | None = None,
        routing: Routing | None = None,
        embedder=None,
        retry_limit: int = 3,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        parallelism: int = 8,
        temperature: float = 0.0,
        default_max_output_tokens: int = 4096,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode needs a transcript store")
        if mode != "replay" and backend is None:
            raise GatewayError(f"{mode} mode needs a backend")
        self.backend = backend
        self.mode = mode
        self.store = store
        self.ledger = ledger or CostLedger()
        self.routing = routing or Routing()
        self.embedder = embedder
        self.retry_limit = retry_limit
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.parallelism = max(1, parallelism)
        self.temperature = temperature
        self.default_max_output_tokens = default_max_output_tokens
        self.backend_calls = 0
        self._seen: dict[str, int] = defaultdict(int)
        self._vectors: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    # -- chat ---------------------------------------------------------------

    def request(self, purpose: str, messages: Iterable[tuple[str, str]], *, model: str | None = None) -> ChatRequest:
        return ChatRequest(
            messages=tuple((r, t) for r, t in messages),
            model_id=model or self.routing.model_for(purpose),
            purpose=purpose,
            temperature=self.temperature,
            max_output_tokens=self.routing.max_output_tokens.get(purpose, self.default_max_output_tokens),
        )

    def chat(self, purpose: str, messages: Iterable[tuple[str, str]], *, model: str | None = None) -> ChatResponse:
        return self.complete(self.request(purpose, messages, model=model))

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            digest = request.digest()
            seq = self._seen[digest]
            self._seen[digest] += 1
        key = transcript_key(request, seq)

        if self.store is not None and self.mode in ("record", "replay"):
            record = self.store.get(key)
            if record is not None:
                response = ChatResponse(**record["response"])
                self.ledger.add(request.purpose, request.model_id, response, key=key, replayed=True)
                return response
            if self.mode == "replay":
                raise ReplayMiss(key, request.purpose)

        response = self._call_backend(request)
        if self.mode == "record":
            self.store.put(
                {
                    "key": key,
                    "kind": "chat",
                    "purpose": request.purpose,
                    "model": request.model_id,
                    "seq": seq,
                    "messages": [list(m) for m in request.messages],
                    "response": asdict(response),
                }
            )
        self.ledger.add(request.purpose, request.model_id, response, key=key)
        return response

    def _retrying(self, fn: Callable[[], R], what: str) -> R:
        attempt = 0
        while True:
            try:
                with self._lock:
                    self.backend_calls += 1
                return fn()
            except _TRANSIENT as exc:
                if attempt >= self.retry_limit:
                    raise GatewayError(f"{what} failed after {attempt + 1} attempts: {exc}") from exc
                delay = self.backoff_base * (2**attempt)
                logger.warning("%s failed (attempt %d/%d): %s; retrying in %.1fs", what, attempt + 1, self.retry_limit + 1, exc, delay)
                self.sleep(delay)
                attempt += 1

    def _call_backend(self, request: ChatRequest) -> ChatResponse:
        if self.backend is None:
            raise GatewayError("no backend configured")
        return self._retrying(lambda: self.backend(request), f"{request.purpose} completion")

    # -- embeddings ---------------------------------------------------------

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if self.embedder is None:
            raise GatewayError("no embedder configured")
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        if not texts:
            return np.zeros((0, self.embedder.dim))
        if not getattr(self.embedder, "recordable", False):
            return self.embedder.embed_many(list(texts))

        model = self.embedder.model_id
        keys = [embedding_key(model, t) for t in texts]
        missing: dict[str, str] = {}
        for key, text in zip(keys, texts):
            if key in self._vectors or key in missing:
                continue
            record = self.store.get(key) if self.store is not None else None
            if record is not None:
                self._vectors[key] = np.asarray(record["vector"], dtype=float)
            elif self.mode == "replay":
                raise ReplayMiss(key, "embed")
            else:
                missing[key] = text
        if missing:
            batch = list(missing.items())
            vectors = self._retrying(lambda: self.embedder.embed_many([t for _, t in batch]), "embedding")
            for (key, text), vec in zip(batch, vectors):
                self._vectors[key] = np.asarray(vec, dtype=float)
                if self.mode == "record":
                    self.store.put({"key": key, "kind": "embedding", "model": model, "text": text, "vector": [float(x) for x in vec]})
        return np.stack([self._vectors[k] for k in keys])

    # -- fan-out --------------------------------------------------------------

    def map(self, fn: Callable[[T], R], items: Sequence[T], parallelism: int | None = None) -> list[R]:
        """Apply ``fn`` with bounded parallelism; results keep input order."""
        items = list(items)
        workers = min(parallelism or self.parallelism, self.parallelism, max(1, len(items)))
        if workers <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))


def ask(
    gateway: Gateway,
    purpose: str,
    messages: Sequence[tuple[str, str]],
    parse: Callable[[str], T] | str,
    *,
    max_reprompts: int = 2,
    on_reprompt: Callable[[int, ParseFailure], None] | None = None,
) -> T:
    """Chat, parse, and re-prompt on :class:`ParseFailure`.

    ``parse`` is either an :func:`extract_structured` kind or a callable that
    raises ParseFailure. The failed reply and a correction request are
    appended to the conversation for each re-prompt. The last failure is
    re-raised once ``max_reprompts`` is spent.
    """
    parser = (lambda text: extract_structured(text, parse)) if isinstance(parse, str) else parse
    convo = list(messages)
    attempt = 0
    while True:
        reply = gateway.chat(purpose, convo)
        try:
            return parser(reply.text)
        except ParseFailure as exc:
            if attempt >= max_reprompts:
                raise
            attempt += 1
            if on_reprompt is not None:
                on_reprompt(attempt, exc)
            logger.info("re-prompting %s (%d/%d): %s", purpose, attempt, max_reprompts, exc)
            convo = convo + [
                ("assistant", reply.text),
                ("user", f"Your previous reply could not be used: {exc}. Reply again, following the required output format exactly."),
            ]
