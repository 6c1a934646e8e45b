"""Chat-completion client with a record/replay response cache."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from samcheck.errors import AuthError, CacheMiss, ProviderError, TransportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    max_output_tokens: int = 4096
    credential_env_var: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    concurrency: int = 4
    system_message: bool = False

    def __post_init__(self):
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be at least 1")

    def provenance(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "credential_env_var": self.credential_env_var,
        }


def _framed(*parts: str) -> bytes:
    # length prefixes keep ("ab", "c") and ("a", "bc") apart
    return b"".join(f"{len(p.encode())}:".encode() + p.encode() for p in parts)


def request_id_for(model_name: str, temperature: float, prompt_text: str) -> str:
    return hashlib.sha256(_framed(model_name, repr(float(temperature)), prompt_text)).hexdigest()


@dataclass(frozen=True)
class LlmRequest:
    prompt_text: str
    model_name: str
    temperature: float = 0.0
    request_id: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "request_id", request_id_for(self.model_name, self.temperature, self.prompt_text))

    @classmethod
    def for_config(cls, prompt_text: str, cfg: ProviderConfig) -> "LlmRequest":
        return cls(prompt_text, cfg.model_name, cfg.temperature)


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    provider_meta: dict = field(default_factory=dict)
    from_cache: bool = False


class CacheMode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


class ResponseCache:
    """Append-only JSONL store of responses keyed by request id.

    A request may be recorded several times (one line per repetition);
    lookups for repetition ``r`` return the r-th recorded line, or the last
    one when fewer were recorded.
    """

    def __init__(self, path: str | Path | None, mode: CacheMode | str = CacheMode.REPLAY):
        self.path = Path(path) if path else None
        self.mode = CacheMode(mode)
        self._lock = threading.Lock()
        self._entries: dict[str, list[dict]] = {}
        if self.mode is not CacheMode.PASSTHROUGH and self.path is None:
            raise ValueError(f"{self.mode.value} mode needs a cache file")
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("skipping unreadable cache line %d in %s", lineno, self.path)
                    continue
                self._entries.setdefault(rec["request_id"], []).append(rec)

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def __contains__(self, request_id: str) -> bool:
        return request_id in self._entries

    def lookup(self, request_id: str, repetition: int = 0) -> dict | None:
        with self._lock:
            recs = self._entries.get(request_id)
            if not recs:
                return None
            return recs[min(repetition, len(recs) - 1)]

    def recorded(self, request_id: str, repetition: int) -> dict | None:
        """The entry stored for exactly this repetition, if any."""
        with self._lock:
            recs = self._entries.get(request_id, [])
            return recs[repetition] if repetition < len(recs) else None

    def append(self, request: LlmRequest, response_text: str, meta: dict | None = None) -> dict:
        rec = {
            "request_id": request.request_id,
            "model": request.model_name,
            "temperature": request.temperature,
            "prompt_sha": hashlib.sha256(request.prompt_text.encode()).hexdigest(),
            "response_text": response_text,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if meta:
            rec["meta"] = meta
        with self._lock:
            rec["repetition"] = len(self._entries.get(request.request_id, []))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._entries.setdefault(request.request_id, []).append(rec)
        return rec


class ProviderAdapter(Protocol):
    def build_payload(self, request: LlmRequest, cfg: ProviderConfig) -> dict: ...

    def extract(self, body: dict) -> tuple[str, dict]: ...


class OpenAIChatAdapter:
    """OpenAI-style ``/chat/completions`` wire format."""

    def build_payload(self, request: LlmRequest, cfg: ProviderConfig) -> dict:
        messages = [{"role": "user", "content": request.prompt_text}]
        if cfg.system_message:
            messages.insert(0, {"role": "system", "content": ""})
        return {
            "model": cfg.model_name,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        }

    def extract(self, body: dict) -> tuple[str, dict]:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("response has no completion text", body=json.dumps(body)[:2000]) from exc
        meta = {"model": body.get("model"), "usage": body.get("usage")}
        return text if text is not None else "", meta


_semaphores: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_semaphores_lock = threading.Lock()


def _limit(cfg: ProviderConfig) -> threading.BoundedSemaphore:
    key = (cfg.endpoint_url, cfg.concurrency)
    with _semaphores_lock:
        if key not in _semaphores:
            _semaphores[key] = threading.BoundedSemaphore(cfg.concurrency)
        return _semaphores[key]


def _live_call(
    request: LlmRequest,
    cfg: ProviderConfig,
    adapter: ProviderAdapter,
    client: httpx.Client | None,
    sleep: Callable[[float], None],
) -> tuple[str, dict]:
    key = os.environ.get(cfg.credential_env_var)
    if not key:
        raise AuthError(f"environment variable {cfg.credential_env_var} is not set")
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    payload = adapter.build_payload(request, cfg)
    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    try:
        last: Exception | None = None
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                with _limit(cfg):
                    resp = client.post(cfg.endpoint_url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("transport error on attempt %d/%d: %s", attempt, cfg.max_attempts, type(exc).__name__)
                if attempt < cfg.max_attempts:
                    sleep(cfg.backoff_base * 2 ** (attempt - 1))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials (HTTP {resp.status_code})")
            if not resp.is_success:
                raise ProviderError(f"provider returned HTTP {resp.status_code}", resp.status_code, resp.text)
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProviderError("provider returned non-JSON body", resp.status_code, resp.text) from exc
            return adapter.extract(body)
        raise TransportError(f"gave up after {cfg.max_attempts} attempts: {last}")
    finally:
        if own_client:
            client.close()


def complete(
    request: LlmRequest,
    cfg: ProviderConfig,
    cache: ResponseCache,
    *,
    repetition: int = 0,
    adapter: ProviderAdapter | None = None,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> LlmResponse:
    """Answer ``request`` according to the cache mode.

    Replay never touches the network and raises ``CacheMiss`` for unknown
    requests.  Record reuses an entry already stored for this repetition,
    otherwise calls the provider and appends the answer.  Passthrough always
    calls the provider and stores nothing.
    """
    adapter = adapter or OpenAIChatAdapter()
    if cache.mode is CacheMode.REPLAY:
        rec = cache.lookup(request.request_id, repetition)
        if rec is None:
            raise CacheMiss(f"no cached response for request {request.request_id[:12]}")
        return LlmResponse(rec["response_text"], {"model": rec.get("model"), **rec.get("meta", {})}, True)
    if cache.mode is CacheMode.RECORD:
        rec = cache.recorded(request.request_id, repetition)
        if rec is not None:
            return LlmResponse(rec["response_text"], {"model": rec.get("model"), **rec.get("meta", {})}, True)
    text, meta = _live_call(request, cfg, adapter, client, sleep)
    if cache.mode is CacheMode.RECORD:
        cache.append(request, text, meta)
    return LlmResponse(text, meta, False)


class Gateway:
    """Bundles provider settings, a cache and an adapter."""

    def __init__(
        self,
        cfg: ProviderConfig,
        cache: ResponseCache,
        adapter: ProviderAdapter | None = None,
        client: httpx.Client | None = None,
    ):
        self.cfg = cfg
        self.cache = cache
        self.adapter = adapter or OpenAIChatAdapter()
        self.client = client

    def ask(self, prompt_text: str, repetition: int = 0) -> LlmResponse:
        req = LlmRequest.for_config(prompt_text, self.cfg)
        return complete(req, self.cfg, self.cache, repetition=repetition, adapter=self.adapter, client=self.client)

    def provenance(self) -> dict[str, Any]:
        return {**self.cfg.provenance(), "cache": str(self.cache.path) if self.cache.path else None,
                "cache_mode": self.cache.mode.value}
