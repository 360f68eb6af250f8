"""Pluggable text-generation clients.

Two implementations share one interface: an HTTP client speaking the
chat-completions wire format of OpenAI-compatible endpoints, and a
scripted mock whose outputs are a pure function of (script, request) so
pipelines built on it replay bit-for-bit. Retry handling (bounded
budget, exponential backoff, retry-after hints) lives in the shared
base class.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .errors import (
    AuthError,
    ClientError,
    MalformedResponseError,
    RateLimitedError,
    SchemaError,
    TransportError,
    ValidationError,
)

ENV_BASE_URL = "IFENGINE_BASE_URL"
ENV_API_KEY = "IFENGINE_API_KEY"
ENV_MODEL = "IFENGINE_MODEL"

_RETRYABLE_STATUS = frozenset({500, 502, 503, 504})


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    n: int = 1
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class Usage:
    prompt_units: int = 0
    completion_units: int = 0


@dataclass(frozen=True)
class GenerationResponse:
    completions: tuple[str, ...]
    usage: Usage
    latency_ms: float


def config_digest(payload: Mapping) -> str:
    """Stable hex digest of a JSON-serializable config mapping."""
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class GenerationClient(ABC):
    """Shared retry/backoff/concurrency shell around a single-attempt call."""

    def __init__(
        self,
        *,
        retry_budget: int = 3,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        sleep=time.sleep,
    ):
        self.retry_budget = retry_budget
        self.backoff_base = backoff_base
        self._slots = threading.Semaphore(max_in_flight)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.last_retry_count = 0

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        """Produce req.n completions, retrying transient failures.

        Transport and rate-limit errors are retried up to the budget
        with exponential backoff (or the server's retry-after hint);
        auth and malformed-response errors surface immediately.
        """
        retries = 0
        with self._slots:
            while True:
                try:
                    response = self._generate_once(req)
                    break
                except (TransportError, RateLimitedError) as exc:
                    if retries >= self.retry_budget:
                        raise
                    delay = self.backoff_base * (2**retries)
                    if isinstance(exc, RateLimitedError) and exc.retry_after is not None:
                        delay = exc.retry_after
                    retries += 1
                    if delay > 0:
                        self._sleep(delay)
        with self._lock:
            self.last_retry_count = retries
        return response

    @abstractmethod
    def _generate_once(self, req: GenerationRequest) -> GenerationResponse:
        """One attempt; raises a ClientError subclass on failure."""

    @abstractmethod
    def config_digest(self) -> str:
        """Stable digest identifying this client's configuration."""


class MockGenerationClient(GenerationClient):
    """Deterministic scripted client for tests and offline pipelines.

    The script is either a mapping from exact prompt text to its list of
    completions, or a flat list used for every request; either way the
    response is a pure function of (script, request). An optional
    failure plan raises scripted errors on the first attempts, which
    exercises the retry shell without breaking that purity.
    """

    def __init__(
        self,
        script: Mapping[str, Sequence[str]] | Sequence[str],
        *,
        default: Sequence[str] | None = None,
        failures: Sequence[ClientError] = (),
        retry_budget: int = 3,
        backoff_base: float = 0.0,
        max_in_flight: int = 16,
    ):
        super().__init__(
            retry_budget=retry_budget,
            backoff_base=backoff_base,
            max_in_flight=max_in_flight,
        )
        self._script = script
        self._default = default
        self._failures = list(failures)
        self.call_count = 0

    def _lookup(self, prompt: str) -> Sequence[str]:
        if isinstance(self._script, Mapping):
            if prompt in self._script:
                return self._script[prompt]
            if self._default is not None:
                return self._default
            raise MalformedResponseError(f"no scripted response for prompt {prompt[:80]!r}")
        return self._script

    def _generate_once(self, req: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.call_count += 1
            failure = self._failures.pop(0) if self._failures else None
        if failure is not None:
            raise failure
        outputs = self._lookup(req.prompt)
        if len(outputs) < req.n:
            raise MalformedResponseError(
                f"script holds {len(outputs)} completions, request wants {req.n}"
            )
        completions = tuple(outputs[: req.n])
        usage = Usage(
            prompt_units=len(req.prompt),
            completion_units=sum(len(c) for c in completions),
        )
        return GenerationResponse(completions=completions, usage=usage, latency_ms=0.0)

    def config_digest(self) -> str:
        if isinstance(self._script, Mapping):
            payload = {"type": "mock", "script": {k: list(v) for k, v in self._script.items()}}
        else:
            payload = {"type": "mock", "script": list(self._script)}
        if self._default is not None:
            payload["default"] = list(self._default)
        return config_digest(payload)


@dataclass(frozen=True)
class HttpClientConfig:
    base_url: str
    api_key: str = ""
    model: str = ""
    timeout_s: float = 60.0
    retry_budget: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, overrides: Mapping | None = None) -> "HttpClientConfig":
        """Build from IFENGINE_* env vars; explicit overrides win."""
        merged = {
            "base_url": os.environ.get(ENV_BASE_URL, ""),
            "api_key": os.environ.get(ENV_API_KEY, ""),
            "model": os.environ.get(ENV_MODEL, ""),
        }
        if overrides:
            merged.update({k: v for k, v in overrides.items() if v is not None})
        if not merged.get("base_url"):
            raise ValidationError(f"no endpoint base URL (set {ENV_BASE_URL} or config file)")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(merged) - known
        if unknown:
            raise SchemaError(f"unknown http client config keys: {sorted(unknown)}")
        return cls(**merged)


class HttpGenerationClient(GenerationClient):
    """Chat-completions client for OpenAI-compatible endpoints.

    The request payload is built once per generate() call and reused
    verbatim across retries.
    """

    def __init__(self, config: HttpClientConfig, *, transport: httpx.BaseTransport | None = None):
        super().__init__(
            retry_budget=config.retry_budget,
            backoff_base=config.backoff_base,
            max_in_flight=config.max_in_flight,
        )
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout_s,
            transport=transport,
        )

    def _payload(self, req: GenerationRequest) -> bytes:
        # Pure function of the request, so every retry posts identical bytes.
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": req.n,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        return json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")

    def _generate_once(self, req: GenerationRequest) -> GenerationResponse:
        started = time.perf_counter()
        try:
            response = self._http.post("/chat/completions", content=self._payload(req))
        except httpx.HTTPError as exc:
            raise TransportError(f"request failed: {exc}") from exc
        latency_ms = (time.perf_counter() - started) * 1000.0

        if response.status_code in (401, 403):
            raise AuthError(f"credential rejected (HTTP {response.status_code})")
        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After")
            hint = float(retry_after) if retry_after else None
            raise RateLimitedError("rate limited (HTTP 429)", retry_after=hint)
        if response.status_code in _RETRYABLE_STATUS:
            raise TransportError(f"server error (HTTP {response.status_code})")
        if response.status_code != 200:
            raise MalformedResponseError(f"unexpected HTTP {response.status_code}")

        try:
            data = response.json()
            completions = tuple(c["message"]["content"] for c in data["choices"])
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponseError(f"bad completion payload: {exc}") from exc
        if len(completions) != req.n:
            raise MalformedResponseError(
                f"expected {req.n} completions, got {len(completions)}"
            )
        usage = data.get("usage") or {}
        return GenerationResponse(
            completions=completions,
            usage=Usage(
                prompt_units=int(usage.get("prompt_tokens", 0)),
                completion_units=int(usage.get("completion_tokens", 0)),
            ),
            latency_ms=latency_ms,
        )

    def config_digest(self) -> str:
        # Credential deliberately excluded: digests end up in manifests.
        return config_digest(
            {"type": "http", "base_url": self.config.base_url, "model": self.config.model}
        )

    def close(self) -> None:
        self._http.close()


def load_client(source: str | Path | Mapping) -> GenerationClient:
    """Build a client from a JSON config file path or an in-memory mapping.

    {"type": "mock", "script": {...} | [...], "default": [...]} or
    {"type": "http", "base_url": ..., "model": ..., ...}; http settings
    missing from the file fall back to IFENGINE_* env vars.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid client config JSON in {source}: {exc}") from exc
    else:
        obj = dict(source)
    kind = obj.get("type")
    if kind == "mock":
        script = obj.get("script")
        if script is None:
            raise SchemaError("mock client config requires a 'script' entry")
        return MockGenerationClient(script, default=obj.get("default"))
    if kind == "http":
        overrides = {k: v for k, v in obj.items() if k != "type"}
        return HttpGenerationClient(HttpClientConfig.from_env(overrides))
    raise SchemaError(f"unknown client type {kind!r}")
