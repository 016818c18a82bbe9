"""HTTP access to chat and embedding models behind an OpenAI-style API.

One gateway instance serves a whole run: it caches responses on disk keyed
by a content digest, retries transient failures with exponential backoff,
and bounds concurrent outbound requests with a semaphore. The transport is
injectable so tests can run without sockets.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional
from urllib.parse import urlparse

import requests

from .dataset_io import read_cache_record, write_cache_record

DEFAULT_RETRIES = 5
DEFAULT_MAX_PARALLEL = 8
DEFAULT_TIMEOUT_S = 120.0


class GatewayError(RuntimeError):
    """Base for everything the gateway can raise."""


class TransportError(GatewayError):
    """Connection failures, timeouts, and other network-level faults."""


class RateLimitError(GatewayError):
    """HTTP 429."""


class ServiceError(GatewayError):
    """HTTP 5xx."""


class RequestError(GatewayError):
    """HTTP 4xx other than 429; retrying will not help."""


class MalformedResponseError(GatewayError):
    """The server answered 200 with a body we cannot use."""


class DegenerateEmbeddingError(MalformedResponseError):
    """An embedding came back as all zeros."""


class EmbeddingDimensionError(MalformedResponseError):
    """An embedding's dimension disagrees with earlier ones from the same model."""


_RETRYABLE = (TransportError, RateLimitError, ServiceError)


@dataclass(frozen=True)
class ModelEndpoint:
    """Where a model lives and how to authenticate against it.

    api_key_ref names an environment variable; the key itself never
    appears in configs, caches, or logs.
    """

    base_url: str
    model_id: str
    kind: str = "chat"
    api_key_ref: Optional[str] = None

    def __post_init__(self) -> None:
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"base_url must be an absolute http(s) URL, got {self.base_url!r}")
        if self.kind not in ("chat", "embedding"):
            raise ValueError(f"endpoint kind must be chat or embedding, got {self.kind!r}")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")

    def resolve_api_key(self) -> Optional[str]:
        if self.api_key_ref is None:
            return None
        value = os.environ.get(self.api_key_ref)
        if not value:
            raise GatewayError(
                f"endpoint for {self.model_id} names env var {self.api_key_ref!r} "
                "but it is unset or empty"
            )
        return value


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    def as_key_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must be non-empty")
        if all(v == 0.0 for v in self.values):
            raise DegenerateEmbeddingError("embedding is all zeros")

    @property
    def dim(self) -> int:
        return len(self.values)


def cache_key(model_id: str, kind: str, text: str, params: dict, ordinal: int = 0) -> str:
    """Content digest identifying one model call; stable across runs."""
    payload = json.dumps(
        {
            "model": model_id,
            "kind": kind,
            "text": text,
            "params": params,
            "ordinal": ordinal,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# transport(url, payload, headers, timeout) -> (status_code, parsed_body)
Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"POST {url} failed: {exc}") from exc
    try:
        body = response.json()
    except ValueError:
        body = {"_raw": response.text}
    return response.status_code, body


@dataclass
class GatewayStats:
    requests: int = 0
    cache_hits: int = 0
    retries: int = 0


class ModelGateway:
    """Cached, retried access to chat and embedding endpoints."""

    def __init__(
        self,
        cache_dir: Optional[str] = None,
        read_cache: bool = True,
        retries: int = DEFAULT_RETRIES,
        max_parallel: int = DEFAULT_MAX_PARALLEL,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        transport: Optional[Transport] = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base_s: float = 1.0,
        rng: Optional[random.Random] = None,
    ):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        if max_parallel < 1:
            raise ValueError("max_parallel must be at least 1")
        self.cache_dir = cache_dir
        self.read_cache = read_cache
        self.retries = retries
        self.timeout_s = timeout_s
        self.transport = transport or _requests_transport
        self.sleep = sleep
        self.backoff_base_s = backoff_base_s
        self._rng = rng or random.Random()
        self.stats = GatewayStats()
        self._semaphore = threading.Semaphore(max_parallel)
        self._lock = threading.Lock()
        self._embed_dims: dict[str, int] = {}

    # -- plumbing ----------------------------------------------------------

    def _headers(self, endpoint: ModelEndpoint) -> dict:
        headers = {"Content-Type": "application/json"}
        key = endpoint.resolve_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, endpoint: ModelEndpoint, route: str, payload: dict) -> dict:
        url = endpoint.base_url.rstrip("/") + route
        headers = self._headers(endpoint)
        last_error: Optional[GatewayError] = None
        for attempt in range(self.retries):
            if attempt > 0:
                with self._lock:
                    self.stats.retries += 1
                delay = self.backoff_base_s * (2 ** (attempt - 1))
                delay += self._rng.uniform(0, delay * 0.25)
                self.sleep(delay)
            try:
                with self._semaphore:
                    with self._lock:
                        self.stats.requests += 1
                    status, body = self.transport(url, payload, headers, self.timeout_s)
            except TransportError as exc:
                last_error = exc
                continue
            if status == 429:
                last_error = RateLimitError(f"{url} returned 429")
                continue
            if status >= 500:
                last_error = ServiceError(f"{url} returned {status}")
                continue
            if status >= 400:
                raise RequestError(f"{url} returned {status}: {body}")
            return body
        assert last_error is not None
        raise last_error

    def _cached_call(self, digest: str, do_call: Callable[[], dict]) -> dict:
        if self.cache_dir and self.read_cache:
            cached = read_cache_record(self.cache_dir, digest)
            if cached is not None:
                with self._lock:
                    self.stats.cache_hits += 1
                return cached
        record = do_call()
        if self.cache_dir:
            # Written even when read_cache is off, so a later run can reuse it.
            write_cache_record(self.cache_dir, digest, record)
        return record

    # -- public API --------------------------------------------------------

    def chat_complete(
        self,
        endpoint: ModelEndpoint,
        prompt: str,
        params: GenerationParams,
        ordinal: int = 0,
    ) -> str:
        """One chat completion; returns the assistant message text."""
        if endpoint.kind != "chat":
            raise ValueError(f"chat_complete needs a chat endpoint, got kind={endpoint.kind!r}")
        digest = cache_key(endpoint.model_id, "chat", prompt, params.as_key_dict(), ordinal)

        def do_call() -> dict:
            payload = {
                "model": endpoint.model_id,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            }
            if params.seed is not None:
                payload["seed"] = params.seed
            return self._post(endpoint, "/chat/completions", payload)

        body = self._cached_call(digest, do_call)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(
                f"chat response from {endpoint.model_id} lacks choices[0].message.content"
            ) from exc
        if not isinstance(content, str) or not content.strip():
            raise MalformedResponseError(f"chat response from {endpoint.model_id} is empty")
        return content

    def embed(self, endpoint: ModelEndpoint, text: str, ordinal: int = 0) -> EmbeddingVector:
        """Embed one text; dimension is checked against earlier calls for the model."""
        if endpoint.kind != "embedding":
            raise ValueError(f"embed needs an embedding endpoint, got kind={endpoint.kind!r}")
        digest = cache_key(endpoint.model_id, "embedding", text, {}, ordinal)

        def do_call() -> dict:
            return self._post(
                endpoint, "/embeddings", {"model": endpoint.model_id, "input": text}
            )

        body = self._cached_call(digest, do_call)
        try:
            values = tuple(float(v) for v in body["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponseError(
                f"embedding response from {endpoint.model_id} lacks data[0].embedding"
            ) from exc
        vector = EmbeddingVector(values)
        with self._lock:
            known = self._embed_dims.get(endpoint.model_id)
            if known is None:
                self._embed_dims[endpoint.model_id] = vector.dim
            elif known != vector.dim:
                raise EmbeddingDimensionError(
                    f"model {endpoint.model_id} returned a {vector.dim}-dim embedding "
                    f"after earlier {known}-dim ones"
                )
        return vector
