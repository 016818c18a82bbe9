"""Deterministic stand-in for chat and embedding endpoints.

The harness answers the same wire format as a real OpenAI-style server,
in-process (as an injectable transport) or over loopback HTTP. Every
response is a pure function of (behavior seed, request payload), so a rerun
with the same seed reproduces every byte. Ships in the package, not in
tests: desk-scale verification is a supported product mode.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import numpy as np

from .domain import _LETTERS
from .gateway import ModelEndpoint

MOCK_CHAT_MODEL = "mock-chat"
MOCK_EMBED_MODEL = "mock-embed"

# Markers baked into the default prompt templates; used to route a request
# to the right behavior without any request-type field on the wire.
_REFEREE_MARKER = 'strictly be "Better:{A or B or Tie}"'
_JUDGE_MARKER = "your result format must strictly be"

_ASPECT_RE = re.compile(r"from the (.+?) aspect\.")
_COUNT_RE = re.compile(r"from (two|three|four|five|six) choices")
_COUNTS = {"two": 2, "three": 3, "four": 4, "five": 5, "six": 6}
_BEST_RE = re.compile(r"[Bb]est\s+answer\s*:\s*\{?\s*([A-F])")
_WORST_RE = re.compile(r"[Ww]orst\s+answer\s*:\s*\{?\s*([A-F])")
_REFEREE_PARTS_RE = re.compile(
    r"Here is the judgment A:(.*?)\nHere is the judgment B:(.*)\nNote: your result format",
    re.DOTALL,
)

# Embedding geometry: one anchor slot per ordered (best, worst) letter pair,
# the rest of the vector carries text-derived noise. With noise weight 0.2,
# two judgments sharing a pair have cosine >= (1-0.04)/(1+0.04) ~ 0.923 and
# judgments with different pairs stay within +-0.04.
_ANCHOR_SLOTS = 36
_NOISE_WEIGHT = 0.2


@dataclass(frozen=True)
class JudgeScript:
    """Fixed judge selections: a majority pair, and a minority pair used for
    the aspects named in dissent_aspects."""

    majority_best: str = "B"
    majority_worst: str = "D"
    minority_best: str = "C"
    minority_worst: str = "A"
    dissent_aspects: frozenset = frozenset()

    def __post_init__(self) -> None:
        for letter in (self.majority_best, self.majority_worst,
                       self.minority_best, self.minority_worst):
            if letter not in _LETTERS:
                raise ValueError(f"script letter must be one of {_LETTERS}, got {letter!r}")
        if self.majority_best == self.majority_worst:
            raise ValueError("majority best and worst must differ")
        if self.minority_best == self.minority_worst:
            raise ValueError("minority best and worst must differ")


@dataclass(frozen=True)
class MockBehavior:
    """Everything that determines the harness's responses.

    violation_rate breaks the judge output format with that probability
    (drawn deterministically per request). position_bias, when set to a
    letter, makes every judgment identical regardless of aspect, which
    drives consistency scores uniform. response_table pins exact responses
    by prompt digest and wins over every rule.
    """

    seed: int = 0
    judge_script: Optional[JudgeScript] = None
    violation_rate: float = 0.0
    position_bias: Optional[str] = None
    semantic_embeddings: bool = True
    embed_dim: int = 64
    response_table: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.violation_rate <= 1.0:
            raise ValueError("violation_rate must be in [0, 1]")
        if self.position_bias is not None and self.position_bias not in _LETTERS:
            raise ValueError(f"position_bias must be a letter in {_LETTERS}")
        if self.embed_dim < _ANCHOR_SLOTS + 4:
            raise ValueError(f"embed_dim must be at least {_ANCHOR_SLOTS + 4}")


def prompt_digest(prompt: str) -> str:
    """Key for MockBehavior.response_table entries."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _request_rng(behavior: MockBehavior, route: str, payload: dict) -> np.random.Generator:
    material = json.dumps(
        {"seed": behavior.seed, "route": route, "payload": payload},
        sort_keys=True,
        ensure_ascii=False,
    )
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _sniff_aspect(prompt: str) -> str:
    match = _ASPECT_RE.search(prompt)
    return match.group(1) if match else ""


def _sniff_m(prompt: str) -> int:
    match = _COUNT_RE.search(prompt)
    return _COUNTS[match.group(1)] if match else 4


def _judgment_text(cot: str, best: str, worst: str) -> str:
    return f"COT:{{{cot}}}. Answer : Best answer:{best}. Worst answer :{worst}"


def _judge_reply(behavior: MockBehavior, prompt: str, rng: np.random.Generator) -> str:
    if rng.random() < behavior.violation_rate:
        # No COT marker and no answer fields: unparseable on purpose.
        return "These options all look reasonable to me, hard to say."
    m = _sniff_m(prompt)
    aspect = _sniff_aspect(prompt)
    if behavior.position_bias is not None:
        best = behavior.position_bias
        worst = _LETTERS[m - 1] if best != _LETTERS[m - 1] else _LETTERS[0]
        # Identical text for every aspect, by design: the embeddings then
        # collapse and the consistency scores come out uniform.
        return _judgment_text(
            "All options look close; the leading option reads best overall", best, worst
        )
    if behavior.judge_script is not None:
        script = behavior.judge_script
        if aspect in script.dissent_aspects:
            best, worst = script.minority_best, script.minority_worst
        else:
            best, worst = script.majority_best, script.majority_worst
        cot = f"Considering {aspect or 'overall quality'}, option {best} covers the question most faithfully while option {worst} falls short"
        return _judgment_text(cot, best, worst)
    best_i = int(rng.integers(m))
    worst_i = int((best_i + 1 + rng.integers(m - 1)) % m)
    best, worst = _LETTERS[best_i], _LETTERS[worst_i]
    cot = (
        f"Weighing {aspect or 'the criteria'}, option {best} aligns with the ground "
        f"truth more closely than the rest and option {worst} diverges the most"
    )
    return _judgment_text(cot, best, worst)


def _referee_reply(prompt: str) -> str:
    match = _REFEREE_PARTS_RE.search(prompt)
    if not match:
        return "Better:Tie"
    a, b = match.group(1).strip(), match.group(2).strip()
    if len(a) > len(b):
        return "Better:A"
    if len(b) > len(a):
        return "Better:B"
    return "Better:Tie"


def _generator_reply(prompt: str, rng: np.random.Generator) -> str:
    token = "".join(chr(ord("a") + int(rng.integers(26))) for _ in range(10))
    question = ""
    match = re.search(r"Question: (.+)\nAnswer:", prompt)
    if match:
        question = match.group(1).strip()
    # Varied shapes so deterministic metrics see unequal candidates.
    shape = int(rng.integers(4))
    if shape == 0 or not question:
        return f"Mock answer {token}."
    if shape == 1:
        return f"Mock answer {token} regarding {question[:60]}"
    if shape == 2:
        extra = "".join(chr(ord("a") + int(rng.integers(26))) for _ in range(6))
        return f"{question[:60]} Mock answer {token} with detail {extra}."
    return f"The answer is {token}."


def chat_reply(behavior: MockBehavior, payload: dict) -> str:
    """The mock's whole chat policy, one prompt in, one completion out."""
    messages = payload.get("messages") or []
    prompt = ""
    for message in messages:
        if message.get("role") == "user":
            prompt = message.get("content", "")
    pinned = behavior.response_table.get(prompt_digest(prompt))
    if pinned is not None:
        return pinned
    rng = _request_rng(behavior, "chat", payload)
    if _REFEREE_MARKER in prompt:
        return _referee_reply(prompt)
    if _JUDGE_MARKER in prompt:
        return _judge_reply(behavior, prompt, rng)
    return _generator_reply(prompt, rng)


def embed_rule(behavior: MockBehavior, text: str) -> list[float]:
    """Deterministic unit vector for one text.

    Semantic mode reserves one anchor slot per (best, worst) letter pair
    found in the text, so judgments that agree sit near each other and
    judgments that differ stay near-orthogonal. Texts with no parseable
    pair (and everything in non-semantic mode) get pure hash noise.
    """
    digest = hashlib.sha256(
        f"{behavior.seed}|embed|{text}".encode("utf-8")
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    dim = behavior.embed_dim
    noise = np.zeros(dim)
    noise[_ANCHOR_SLOTS:] = rng.standard_normal(dim - _ANCHOR_SLOTS)
    noise /= np.linalg.norm(noise)
    if behavior.semantic_embeddings:
        best = _BEST_RE.search(text)
        worst = _WORST_RE.search(text)
        if best and worst:
            slot = _LETTERS.index(best.group(1)) * 6 + _LETTERS.index(worst.group(1))
            vector = np.zeros(dim)
            vector[slot] = 1.0
            vector += _NOISE_WEIGHT * noise
            vector /= np.linalg.norm(vector)
            return vector.tolist()
    return noise.tolist()


def handle(behavior: MockBehavior, route: str, payload: dict) -> tuple[int, dict]:
    """Serve one request; the same (behavior, route, payload) always returns
    the same body."""
    if route.endswith("/chat/completions"):
        content = chat_reply(behavior, payload)
        return 200, {
            "id": "mock-" + prompt_digest(content)[:12],
            "object": "chat.completion",
            "model": payload.get("model", MOCK_CHAT_MODEL),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
        }
    if route.endswith("/embeddings"):
        text = payload.get("input", "")
        if isinstance(text, list):
            text = text[0] if text else ""
        vector = embed_rule(behavior, text)
        return 200, {
            "object": "list",
            "model": payload.get("model", MOCK_EMBED_MODEL),
            "data": [{"object": "embedding", "index": 0, "embedding": vector}],
        }
    return 404, {"error": {"message": f"no route {route}"}}


def transport(behavior: MockBehavior):
    """In-process Transport for ModelGateway; no sockets involved."""

    def _transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
        return handle(behavior, url, payload)

    return _transport


def mock_endpoints(base_url: str = "http://mock.invalid") -> tuple[ModelEndpoint, ModelEndpoint]:
    """(chat, embedding) endpoints wired for the harness; no API key needed."""
    return (
        ModelEndpoint(base_url=base_url, model_id=MOCK_CHAT_MODEL, kind="chat"),
        ModelEndpoint(base_url=base_url, model_id=MOCK_EMBED_MODEL, kind="embedding"),
    )


class MockServer:
    """Loopback HTTP server speaking the same contract; close() shuts it down."""

    def __init__(self, behavior: MockBehavior, host: str = "127.0.0.1", port: int = 0):
        self.behavior = behavior
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    payload = json.loads(self.rfile.read(length).decode("utf-8"))
                except (ValueError, UnicodeDecodeError):
                    payload = {}
                status, body = handle(outer.behavior, self.path, payload)
                data = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt: str, *args) -> None:
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def endpoints(self) -> tuple[ModelEndpoint, ModelEndpoint]:
        return mock_endpoints(self.base_url)

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def serve(behavior: MockBehavior, host: str = "127.0.0.1", port: int = 0) -> MockServer:
    return MockServer(behavior, host=host, port=port)
