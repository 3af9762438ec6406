"""Chat-completions client for judges, with retries and a content-addressed response cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from ..errors import CacheConflictError, ConfigError, JudgeEndpointError, OfflineCacheMiss, TransportError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class JudgeConfig:
    judge_id: str
    model_name: str
    endpoint_url: str = "https://api.openai.com/v1"
    native_scale_max: float = 1.0
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    template_id: str = "main"

    def __post_init__(self):
        if self.native_scale_max not in (1.0, 10.0):
            raise ConfigError(f"judge {self.judge_id}: native_scale_max must be 1 or 10")
        if self.max_retries < 0:
            raise ConfigError(f"judge {self.judge_id}: max_retries must be >= 0")
        if not self.judge_id:
            raise ConfigError("judge_id must be non-empty")

    @property
    def env_prefix(self) -> str:
        return re.sub(r"[^A-Za-z0-9]", "_", self.judge_id).upper()

    def base_url(self) -> str:
        return os.environ.get(f"{self.env_prefix}_BASE_URL", self.endpoint_url).rstrip("/")

    def api_key(self) -> str | None:
        return os.environ.get(f"{self.env_prefix}_API_KEY")


def canonical_request(config: JudgeConfig, prompt: str, attempt: int = 0) -> dict:
    req = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    }
    if attempt:
        # whole-verdict retries must not hit the cached reply that failed to parse
        req["attempt"] = attempt
    return req


def request_key(request: dict) -> str:
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per request under ``root/<k[:2]>/<k>.json``; entries are write-once."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return entry["response"]

    def put(self, key: str, request: dict, response: str) -> None:
        path = self._path(key)
        data = json.dumps({"key": key, "request": request, "response": response},
                          sort_keys=True, indent=1, ensure_ascii=False).encode("utf-8")
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            try:
                os.link(tmp, path)  # atomic create-if-absent
            except FileExistsError:
                if path.read_bytes() != data:
                    raise CacheConflictError(f"cache entry {key} already holds a different response") from None
        finally:
            os.unlink(tmp)

    def keys(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("*/*.json"))

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for key in self.keys():
            h.update(key.encode())
        return h.hexdigest()


class JudgeClient:
    """Calls OpenAI-style ``/chat/completions`` endpoints.

    ``transport_factory`` lets tests and the scripted mock judge supply an
    :class:`httpx.BaseTransport`; URLs with the ``mock://`` scheme are routed to
    :mod:`rationale_eval.judge.mock` automatically.
    """

    def __init__(self, cache: ResponseCache | None = None, *, offline: bool = False,
                 transport: httpx.BaseTransport | None = None, backoff_base: float = 1.0,
                 max_backoff: float = 30.0, sleep: Callable[[float], None] = time.sleep):
        self.cache = cache
        self.offline = offline
        self.backoff_base = backoff_base
        self.max_backoff = max_backoff
        self.sleep = sleep
        self._transport = transport
        self._clients: dict[str, httpx.Client] = {}
        self._lock = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0

    def _client(self, config: JudgeConfig) -> httpx.Client:
        base = config.base_url()
        with self._lock:
            if base not in self._clients:
                transport = self._transport
                if transport is None and base.startswith("mock://"):
                    from .mock import MockJudgeTransport
                    transport = MockJudgeTransport.from_url(base)
                self._clients[base] = httpx.Client(transport=transport, timeout=config.timeout)
            return self._clients[base]

    def close(self):
        for c in self._clients.values():
            c.close()
        self._clients.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def call(self, config: JudgeConfig, prompt: str, attempt: int = 0) -> str:
        request = canonical_request(config, prompt, attempt)
        key = request_key(request)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return cached
        if self.offline:
            raise OfflineCacheMiss(f"judge {config.judge_id}: cache miss for {key[:12]} in offline mode")
        content = self._post_with_retries(config, request)
        if self.cache is not None:
            self.cache.put(key, request, content)
        return content

    def _post_with_retries(self, config: JudgeConfig, request: dict) -> str:
        base = config.base_url()
        headers = {"Content-Type": "application/json"}
        key = config.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {k: v for k, v in request.items() if k != "attempt"}
        last_error = "no attempt made"
        for attempt in range(config.max_retries + 1):
            if attempt:
                delay = min(self.max_backoff, self.backoff_base * 2 ** (attempt - 1))
                self.sleep(delay)
            with self._lock:
                self.network_calls += 1
            try:
                resp = self._client(config).post(f"{base}/chat/completions", json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.info("judge %s: transport error (%s), attempt %d", config.judge_id, last_error, attempt)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.info("judge %s: HTTP %d, attempt %d", config.judge_id, resp.status_code, attempt)
                continue
            if not resp.is_success:
                raise JudgeEndpointError(
                    f"judge {config.judge_id}: HTTP {resp.status_code}: {resp.text[:200]}",
                    status=resp.status_code, body=resp.text[:200])
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise JudgeEndpointError(f"judge {config.judge_id}: malformed completion body",
                                         status=resp.status_code, body=resp.text[:200]) from None
        raise TransportError(f"judge {config.judge_id}: gave up after {config.max_retries + 1} attempts "
                             f"({last_error})")


def call_judge(config: JudgeConfig, prompt: str, client: JudgeClient | None = None) -> str:
    client = client or JudgeClient()
    return client.call(config, prompt)
