"""Uniform client for external model services.

One gateway serves every model role: text embedding, vision embedding
(dense and multi-vector), chat completion, visual description,
summarization, and reranking. Requests use the de-facto standard
chat-completions / embeddings / rerank HTTP shapes so any compatible
server plugs in; endpoints whose base_url uses the ``stub:`` scheme are
served by the deterministic local stub instead (see `stubs`).
"""

from __future__ import annotations

import base64
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

DEFAULT_BATCH_SIZE = 64


class EndpointKind(str, Enum):
    CHAT = "chat"
    EMBED_TEXT = "embed_text"
    EMBED_VISION_DENSE = "embed_vision_dense"
    EMBED_VISION_MULTI = "embed_vision_multi"
    RERANK = "rerank"


class GatewayError(RuntimeError):
    def __init__(self, endpoint: str, cause: str):
        self.endpoint = endpoint
        self.cause = cause
        super().__init__(f"{endpoint}: {cause}")


@dataclass(frozen=True)
class ModelEndpointConfig:
    name: str
    base_url: str
    kind: EndpointKind
    api_key_env: str = ""
    max_concurrency: int = 4
    timeout_ms: int = 30_000
    max_retries: int = 2
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.timeout_ms < 1000:
            raise ValueError("timeout_ms must be >= 1000")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int
    model_name: str

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise ValueError(f"dim {self.dim} != len(values) {len(self.values)}")
        if not all(v == v and abs(v) != float("inf") for v in self.values):
            raise ValueError("non-finite embedding value")

    @classmethod
    def of(cls, values: Sequence[float], model_name: str = "") -> "EmbeddingVector":
        vals = tuple(float(v) for v in values)
        return cls(values=vals, dim=len(vals), model_name=model_name)


@dataclass(frozen=True)
class MultiVector:
    rows: tuple[EmbeddingVector, ...]
    model_name: str

    def __post_init__(self):
        if not self.rows:
            raise ValueError("multi-vector must have at least one row")
        dims = {r.dim for r in self.rows}
        if len(dims) != 1:
            raise ValueError(f"inconsistent row dims {dims}")

    @property
    def dim(self) -> int:
        return self.rows[0].dim

    @classmethod
    def of(cls, rows: Sequence[Sequence[float]], model_name: str = "") -> "MultiVector":
        return cls(rows=tuple(EmbeddingVector.of(r, model_name) for r in rows), model_name=model_name)


class TransportError(RuntimeError):
    pass


class HttpTransport:
    """Blocking JSON-over-HTTP transport backed by httpx."""

    def __init__(self):
        import httpx

        self._client = httpx.Client()

    def post(self, url: str, payload: dict, timeout_s: float, headers: dict) -> dict:
        import httpx

        try:
            resp = self._client.post(url, json=payload, timeout=timeout_s, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()


def _encode_image(path: str) -> str:
    data = Path(path).read_bytes()
    return base64.b64encode(data).decode("ascii")


class ModelGateway:
    """Shared, thread-safe client with per-endpoint concurrency limits.

    Retry budget is 1 + max_retries attempts per request; `stats` counts
    requests/retries/failures for observability and tests.
    """

    def __init__(self, transport=None):
        self._transport = transport
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._sem_lock = threading.Lock()
        self.stats = {"requests": 0, "retries": 0, "failures": 0}

    # -- plumbing ----------------------------------------------------------

    def _semaphore(self, cfg: ModelEndpointConfig) -> threading.Semaphore:
        with self._sem_lock:
            sem = self._semaphores.get(cfg.name)
            if sem is None:
                sem = threading.Semaphore(cfg.max_concurrency)
                self._semaphores[cfg.name] = sem
            return sem

    def _headers(self, cfg: ModelEndpointConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key_env:
            key = os.environ.get(cfg.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request(self, cfg: ModelEndpointConfig, path: str, payload: dict) -> dict:
        if cfg.base_url.startswith("stub:"):
            from . import stubs

            return stubs.handle(cfg.base_url, path, payload)
        if self._transport is None:
            self._transport = HttpTransport()
        url = cfg.base_url.rstrip("/") + path
        last: Exception | None = None
        sem = self._semaphore(cfg)
        for attempt in range(1 + cfg.max_retries):
            with sem:
                self.stats["requests"] += 1
                if attempt:
                    self.stats["retries"] += 1
                try:
                    return self._transport.post(url, payload, cfg.timeout_ms / 1000.0, self._headers(cfg))
                except TransportError as exc:
                    last = exc
            if attempt < cfg.max_retries:
                time.sleep(min(0.05 * 2**attempt, 1.0))
        self.stats["failures"] += 1
        raise GatewayError(cfg.name, str(last))

    def _embed_batches(self, inputs: list, cfg: ModelEndpointConfig) -> list:
        batches = [inputs[i : i + cfg.batch_size] for i in range(0, len(inputs), cfg.batch_size)]

        def run(batch):
            reply = self._request(cfg, "/embeddings", {"model": cfg.name, "input": batch})
            data = sorted(reply["data"], key=lambda d: d.get("index", 0))
            if len(data) != len(batch):
                raise GatewayError(cfg.name, f"expected {len(batch)} embeddings, got {len(data)}")
            return [d["embedding"] for d in data]

        if len(batches) == 1:
            results = [run(batches[0])]
        else:
            with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
                results = list(pool.map(run, batches))
        return [emb for batch in results for emb in batch]

    @staticmethod
    def _check_dims(vectors: Sequence[EmbeddingVector], cfg: ModelEndpointConfig):
        dims = {v.dim for v in vectors}
        if len(dims) > 1:
            raise GatewayError(cfg.name, f"dimension mismatch across batch: {sorted(dims)}")

    # -- operations --------------------------------------------------------

    def embed_texts(self, texts: Sequence[str], cfg: ModelEndpointConfig) -> list[EmbeddingVector]:
        """One vector per input text, order preserving."""
        if cfg.kind not in (
            EndpointKind.EMBED_TEXT,
            EndpointKind.EMBED_VISION_DENSE,
            EndpointKind.EMBED_VISION_MULTI,
        ):
            raise GatewayError(cfg.name, f"kind {cfg.kind} cannot embed text")
        if not texts:
            raise GatewayError(cfg.name, "empty input batch")
        raw = self._embed_batches(list(texts), cfg)
        if cfg.kind is EndpointKind.EMBED_VISION_MULTI:
            # Query-side multi-vectors for late-interaction retrievers.
            return [MultiVector.of(r, cfg.name) for r in raw]  # type: ignore[return-value]
        out = [EmbeddingVector.of(r, cfg.name) for r in raw]
        self._check_dims(out, cfg)
        return out

    def embed_images(self, image_refs: Sequence[str], cfg: ModelEndpointConfig):
        """Vision embeddings for image files: dense vectors or multi-vectors
        depending on the endpoint kind. Images travel base64-inline."""
        if cfg.kind not in (EndpointKind.EMBED_VISION_DENSE, EndpointKind.EMBED_VISION_MULTI):
            raise GatewayError(cfg.name, f"kind {cfg.kind} cannot embed images")
        if not image_refs:
            raise GatewayError(cfg.name, "empty input batch")
        if cfg.base_url.startswith("stub:"):
            inputs = [{"image_path": str(p)} for p in image_refs]
        else:
            inputs = [{"image_b64": _encode_image(str(p))} for p in image_refs]
        raw = self._embed_batches(inputs, cfg)
        if cfg.kind is EndpointKind.EMBED_VISION_MULTI:
            return [MultiVector.of(rows, cfg.name) for rows in raw]
        out = [EmbeddingVector.of(r, cfg.name) for r in raw]
        self._check_dims(out, cfg)
        return out

    def chat(self, messages: Sequence[tuple[str, object]], cfg: ModelEndpointConfig) -> str:
        """Chat completion. Message content is a string or a list of parts,
        each a string or ``{"image": path}`` which is inlined as base64."""
        if cfg.kind is not EndpointKind.CHAT:
            raise GatewayError(cfg.name, f"kind {cfg.kind} cannot chat")
        wire_messages = []
        for role, content in messages:
            if isinstance(content, str):
                wire_messages.append({"role": role, "content": content})
                continue
            parts = []
            for part in content:
                if isinstance(part, str):
                    parts.append({"type": "text", "text": part})
                elif "image" in part:
                    if cfg.base_url.startswith("stub:"):
                        parts.append({"type": "image_path", "path": str(part["image"])})
                    else:
                        b64 = _encode_image(str(part["image"]))
                        parts.append(
                            {
                                "type": "image_url",
                                "image_url": {"url": f"data:image/png;base64,{b64}"},
                            }
                        )
                else:
                    raise GatewayError(cfg.name, f"unknown content part {part!r}")
            wire_messages.append({"role": role, "content": parts})
        reply = self._request(cfg, "/chat/completions", {"model": cfg.name, "messages": wire_messages})
        try:
            return reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise GatewayError(cfg.name, f"malformed chat reply: {str(reply)[:200]}")

    def describe_visual(self, crop_ref: str, mode: str, cfg: ModelEndpointConfig) -> str:
        """Coarse summary or fine description of one visual element."""
        from . import prompts

        if mode not in ("coarse", "fine"):
            raise ValueError(f"mode must be coarse or fine, got {mode!r}")
        prompt = prompts.render(f"describe_{mode}")
        return self.chat([("user", [prompt, {"image": crop_ref}])], cfg)

    def rerank(
        self, query: str, candidates: Sequence[str], cfg: ModelEndpointConfig
    ) -> list[tuple[int, float]]:
        """Score every candidate against the query; (index, score) pairs
        sorted by descending score."""
        if cfg.kind is not EndpointKind.RERANK:
            raise GatewayError(cfg.name, f"kind {cfg.kind} cannot rerank")
        reply = self._request(
            cfg, "/rerank", {"model": cfg.name, "query": query, "documents": list(candidates)}
        )
        results = reply.get("results")
        if not isinstance(results, list) or len(results) != len(candidates):
            raise GatewayError(cfg.name, "reranker did not score every candidate exactly once")
        pairs = [(int(r["index"]), float(r["relevance_score"])) for r in results]
        seen = {i for i, _ in pairs}
        if seen != set(range(len(candidates))):
            raise GatewayError(cfg.name, "reranker indices do not cover the candidate set")
        pairs.sort(key=lambda p: (-p[1], p[0]))
        return pairs


@dataclass
class BoundChat:
    """A chat endpoint bound to its config, with an optional transcript.

    This is the surface the agent roles consume: ``chat(messages) -> str``.
    """

    gateway: ModelGateway
    cfg: ModelEndpointConfig
    transcript: list = field(default_factory=list)

    def chat(self, messages: Sequence[tuple[str, object]]) -> str:
        reply = self.gateway.chat(messages, self.cfg)
        self.transcript.append({"messages": _printable(messages), "reply": reply})
        return reply


@dataclass
class EnrichmentModels:
    """Facade used by corpus enrichment: visual description + summarization."""

    gateway: ModelGateway
    chat_cfg: ModelEndpointConfig

    def describe(self, crop_ref: str, mode: str) -> str:
        return self.gateway.describe_visual(crop_ref, mode, self.chat_cfg)

    def summarize(self, text: str) -> str:
        from . import prompts

        return self.gateway.chat([("user", prompts.render("summarize", text=text))], self.chat_cfg)


def _printable(messages) -> list:
    out = []
    for role, content in messages:
        if isinstance(content, str):
            out.append({"role": role, "content": content})
        else:
            out.append(
                {
                    "role": role,
                    "content": [p if isinstance(p, str) else {"image": str(p.get("image"))} for p in content],
                }
            )
    return out
