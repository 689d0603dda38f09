"""HTTP client for OpenAI-style chat-completion endpoints.

One client serves both pipeline stages that talk to a model: suggestion
polishing and prediction generation.  Any endpoint speaking the
chat-completion JSON protocol works, including a local stub server.

Request bodies carry {model, messages, temperature, max_tokens} plus
top_p when given; the first choice's message content is the result.
Transient failures (timeouts, connection errors, 5xx) are retried with
exponential backoff; 4xx responses are fatal and abort the run.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests

DEFAULT_API_KEY_ENV = "COQ_FORGE_API_KEY"


class PolishError(RuntimeError):
    """Client failure; `kind` is one of 'transient', 'fatal', 'empty'."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass
class LlmClientConfig:
    endpoint: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.7
    max_response_length: int = 512
    timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    requests_per_minute: float = 60.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")

    @classmethod
    def from_file(cls, path) -> "LlmClientConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


class RateLimiter:
    """Spaces acquisitions so the observed rate never exceeds the limit.

    Shared across workers; thread-safe.
    """

    def __init__(self, requests_per_minute: float):
        self._interval = 60.0 / requests_per_minute if requests_per_minute > 0 else 0.0
        self._lock = threading.Lock()
        self._next_allowed = 0.0

    def acquire(self):
        if self._interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + self._interval
        if wait > 0:
            time.sleep(wait)


class PolishCache:
    """Append-only on-disk key-value log keyed by content hash.

    Loaded fully into memory on open; writes are serialized through a
    single lock so concurrent workers can share one cache.
    """

    FILENAME = "polish_cache.jsonl"

    def __init__(self, directory):
        self.path = Path(directory) / self.FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self._entries[entry["key"]] = entry["value"]

    @staticmethod
    def key_for(template_name: str, prompt: str) -> str:
        payload = template_name.encode("utf-8") + b"\x00" + prompt.encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def get(self, key: str) -> Optional[str]:
        return self._entries.get(key)

    def put(self, key: str, value: str):
        with self._lock:
            self._entries[key] = value
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"key": key, "value": value, "created_at": time.time()},
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    def __len__(self):
        return len(self._entries)


class LlmClient:
    def __init__(
        self,
        config: LlmClientConfig,
        cache: Optional[PolishCache] = None,
        session: Optional[requests.Session] = None,
    ):
        self.config = config
        self.cache = cache
        self.limiter = RateLimiter(config.requests_per_minute)
        self.session = session or requests.Session()

    def api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise PolishError(
                "fatal",
                f"API key environment variable {self.config.api_key_env} is not set",
            )
        return key

    def complete(
        self,
        prompt: str,
        temperature: Optional[float] = None,
        top_p: Optional[float] = None,
        max_tokens: Optional[int] = None,
    ) -> str:
        """One chat completion, with rate limiting and retries."""
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature if temperature is None else temperature,
            "max_tokens": cfg.max_response_length if max_tokens is None else max_tokens,
        }
        if top_p is not None:
            body["top_p"] = top_p
        headers = {"Authorization": f"Bearer {self.api_key()}"}

        last_error = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(cfg.backoff_base * (2 ** (attempt - 1)))
            self.limiter.acquire()
            try:
                resp = self.session.post(
                    cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise PolishError(
                    "fatal", f"client error {resp.status_code}: {resp.text[:200]}"
                )
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise PolishError("fatal", f"malformed response: {exc}") from exc
            text = (text or "").strip()
            if not text:
                raise PolishError("empty", "endpoint returned empty text")
            return text
        raise PolishError(
            "transient", f"gave up after {cfg.max_retries + 1} attempts: {last_error}"
        )

    def polish(self, prompt: str, template_name: str = "default") -> str:
        """Cache-aware completion: identical prompts never hit the network twice."""
        if self.cache is None:
            return self.complete(prompt)
        key = PolishCache.key_for(template_name, prompt)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        text = self.complete(prompt)
        self.cache.put(key, text)
        return text
