"""Chat/embedding backends: scripted mock, OpenAI-compatible remote, hashed n-gram embedder."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SEED = 1234


class BackendError(RuntimeError):
    """Base class for errors raised while talking to a model."""


class TransportError(BackendError):
    """Endpoint unreachable or connection dropped."""


class ProviderError(BackendError):
    """The provider answered with an error payload (refusal, bad request, ...)."""


class BackendTimeout(TransportError):
    pass


class ScriptMiss(BackendError):
    """A mock received a prompt no rule covers and it has no default."""


class ConfigError(ValueError):
    """Invalid configuration; always fatal."""


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    seed: int = DEFAULT_SEED
    max_tokens: int = 512
    images: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "images", tuple(self.images))

    @property
    def prompt(self) -> str:
        return f"{self.system_prompt}\n\n{self.user_prompt}"


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token usage must be non-negative")


class Backend(Protocol):
    parallelism: int
    supports_images: bool

    def chat(self, req: ChatRequest) -> ChatResponse: ...

    def embed(self, text: str) -> np.ndarray: ...


def ask(backend: Backend, system: str, user: str, images: Sequence[str] = ()) -> str:
    return backend.chat(ChatRequest(system_prompt=system, user_prompt=user, images=tuple(images))).text


def strip_fences(text: str) -> str:
    """Drop surrounding markdown code fences from a model reply."""
    t = text.strip()
    if t.startswith("```"):
        t = t.split("\n", 1)[1] if "\n" in t else ""
        if t.rstrip().endswith("```"):
            t = t.rstrip()[:-3]
    return t.strip()


def parse_json_reply(text: str) -> Any:
    """Lenient JSON parse: strips fences, then falls back to the outermost bracket span."""
    t = strip_fences(text)
    try:
        return json.loads(t)
    except json.JSONDecodeError:
        pass
    for open_, close in (("[", "]"), ("{", "}")):
        i, j = t.find(open_), t.rfind(close)
        if 0 <= i < j:
            try:
                return json.loads(t[i : j + 1])
            except json.JSONDecodeError:
                continue
    raise ValueError(f"reply is not JSON: {text[:200]!r}")


# --- embeddings -----------------------------------------------------------------


class HashingEmbedder:
    """Signed feature hashing of word unigrams and character 3-grams, L2-normalised."""

    def __init__(self, dim: int = 256, ngram: int = 3):
        self.dim = dim
        self.ngram = ngram

    @property
    def embedder_id(self) -> str:
        return f"hash-ngram{self.ngram}-{self.dim}"

    def _features(self, text: str) -> list[str]:
        low = text.lower()
        feats = [f"w:{w}" for w in low.split()]
        padded = f" {' '.join(low.split())} "
        feats += [f"c:{padded[i:i + self.ngram]}" for i in range(len(padded) - self.ngram + 1)]
        return feats

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for feat in self._features(text):
            h = int.from_bytes(hashlib.blake2b(feat.encode(), digest_size=8).digest(), "little")
            vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


# --- scripted mock ---------------------------------------------------------------


@dataclass
class Rule:
    """Fires when every `contains` substring occurs in the request's prompt."""

    contains: tuple[str, ...]
    reply: Any  # str or callable(ChatRequest) -> str

    def matches(self, req: ChatRequest) -> bool:
        prompt = req.prompt
        return all(c in prompt for c in self.contains)


@dataclass
class Call:
    request: ChatRequest
    reply: str | None
    started: float
    finished: float


class MockBackend:
    """Deterministic scripted backend.

    Rules are checked in order; the first match answers. A reply of the form
    ``"!error:transport"`` / ``"!error:provider"`` raises instead. Unmatched
    prompts fall through to `default`, or raise `ScriptMiss` when there is none.
    Every call is recorded in `calls` for transcript assertions.
    """

    def __init__(
        self,
        rules: Sequence[Rule | tuple | dict] = (),
        default: str | None = None,
        delay: float = 0.0,
        parallelism: int = 8,
        supports_images: bool = False,
        embedder: HashingEmbedder | None = None,
    ):
        self.rules = [_coerce_rule(r) for r in rules]
        self.default = default
        self.delay = delay
        self.parallelism = parallelism
        self.supports_images = supports_images
        self.embedder = embedder or HashingEmbedder()
        self.calls: list[Call] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: "str | os.PathLike", **kwargs) -> "MockBackend":
        """Load ``[{"contains": str | [str], "reply": str}, ...]`` or
        ``{"rules": [...], "default": str}``."""
        data = json.loads(Path(path).read_text())
        if isinstance(data, list):
            rules, default = data, None
        elif isinstance(data, dict):
            rules, default = data.get("rules", []), data.get("default")
        else:
            raise ConfigError(f"{path}: mock script must be a list or an object")
        kwargs.setdefault("default", default)
        return cls(rules, **kwargs)

    def respond(self, req: ChatRequest) -> str:
        for rule in self.rules:
            if rule.matches(req):
                reply = rule.reply(req) if callable(rule.reply) else rule.reply
                break
        else:
            if self.default is None:
                raise ScriptMiss(f"no scripted reply for prompt: {req.user_prompt[:160]!r}")
            reply = self.default
        if reply.startswith("!error:"):
            kind = reply.split(":", 1)[1]
            if kind == "transport":
                raise TransportError("scripted transport failure")
            raise ProviderError(f"scripted provider failure: {kind}")
        return reply

    def chat(self, req: ChatRequest) -> ChatResponse:
        started = time.perf_counter()
        if self.delay:
            time.sleep(self.delay)
        reply: str | None = None
        try:
            reply = self.respond(req)
            return ChatResponse(reply, len(req.prompt.split()), len(reply.split()))
        finally:
            with self._lock:
                self.calls.append(Call(req, reply, started, time.perf_counter()))

    @property
    def embedder_id(self) -> str:
        return self.embedder.embedder_id

    def embed(self, text: str) -> np.ndarray:
        return self.embedder.embed(text)

    def prompts(self) -> list[str]:
        with self._lock:
            return [c.request.prompt for c in self.calls]

    def count(self, *needles: str) -> int:
        return sum(all(n in p for n in needles) for p in self.prompts())

    def reset(self) -> None:
        with self._lock:
            self.calls.clear()


def _coerce_rule(r) -> Rule:
    if isinstance(r, Rule):
        return r
    if isinstance(r, dict):
        contains, reply = r.get("contains", ""), r["reply"]
    else:
        contains, reply = r
    if isinstance(contains, str):
        contains = (contains,)
    return Rule(tuple(contains), reply)


# --- remote OpenAI-compatible backend --------------------------------------------


@dataclass
class RemoteBackend:
    """OpenAI-compatible chat/embeddings client.

    Retries once on transport errors; provider errors are never retried.
    """

    base_url: str
    model: str
    api_key: str | None = None
    embedding_model: str | None = None
    timeout: float = 60.0
    parallelism: int = 4
    supports_images: bool = False
    _client: Any = field(default=None, repr=False)

    @classmethod
    def from_env(cls, **overrides) -> "RemoteBackend":
        base_url = overrides.pop("base_url", None) or os.environ.get("METAQUERY_BASE_URL") or os.environ.get("OPENAI_BASE_URL")
        model = overrides.pop("model", None) or os.environ.get("METAQUERY_MODEL")
        if not base_url or not model:
            raise ConfigError("remote backend needs METAQUERY_BASE_URL and METAQUERY_MODEL (or config values)")
        api_key = overrides.pop("api_key", None) or os.environ.get("METAQUERY_API_KEY") or os.environ.get("OPENAI_API_KEY")
        return cls(base_url=base_url, model=model, api_key=api_key, **overrides)

    @property
    def embedder_id(self) -> str:
        return f"remote:{self.embedding_model or self.model}"

    def _http(self):
        import httpx

        if self._client is None:
            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
            self._client = httpx.Client(base_url=self.base_url.rstrip("/"), headers=headers, timeout=self.timeout)
        return self._client

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        for attempt in (0, 1):
            try:
                resp = self._http().post(path, json=body)
            except httpx.TimeoutException as exc:
                err: TransportError = BackendTimeout(str(exc))
            except httpx.TransportError as exc:
                err = TransportError(str(exc))
            else:
                if resp.status_code >= 400:
                    raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                payload = resp.json()
                if isinstance(payload, dict) and payload.get("error"):
                    raise ProviderError(str(payload["error"]))
                return payload
            if attempt == 0:
                log.warning("transport error on %s, retrying once: %s", path, err)
        raise err

    def chat(self, req: ChatRequest) -> ChatResponse:
        if req.images and self.supports_images:
            content: Any = [{"type": "text", "text": req.user_prompt}]
            for path in req.images:
                mime = mimetypes.guess_type(path)[0] or "image/png"
                data = base64.b64encode(Path(path).read_bytes()).decode()
                content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}})
        else:
            content = req.user_prompt
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": content},
            ],
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_tokens,
        }
        payload = self._post("/chat/completions", body)
        try:
            text = payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ProviderError(f"malformed completion payload: {str(payload)[:300]}") from None
        usage = payload.get("usage") or {}
        return ChatResponse(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        payload = self._post("/embeddings", {"model": self.embedding_model or self.model, "input": text})
        try:
            vec = np.asarray(payload["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError):
            raise ProviderError("malformed embeddings payload") from None
        if not np.all(np.isfinite(vec)):
            raise ProviderError("embedding has non-finite entries")
        return vec
