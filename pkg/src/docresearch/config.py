"""Engine configuration: a TOML file validated into dataclasses.

The file names the model endpoints, maps them onto roles (chat,
text/vision retrievers, reranker), and carries the retrieval and loop
parameters. Validation failures raise ConfigError with the offending
field."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import EndpointKind, ModelEndpointConfig
from .retrieval import Paradigm

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PARSING_LEVELS = ("free", "shallow", "deep")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field {field_name!r}: {message}")


@dataclass
class EngineConfig:
    data_dir: Path
    endpoints: dict[str, ModelEndpointConfig] = field(default_factory=dict)
    paradigm: Paradigm = Paradigm.HYBRID
    parsing_level: str = "deep"
    tau: float = 0.8
    t_max: int = 3
    k: int = 10
    max_chunk_tokens: int = 300
    min_image_bytes: int = 10_240
    chunk_chars: int = 140
    overlap_threshold: float = 0.5
    context_budget: int = 24_000
    workers: int = 4
    index_backend: str = "exact"
    use_planner: bool = True
    prompts_dir: str | None = None
    chat_role: str = ""
    text_retrievers: tuple[str, ...] = ()
    vision_retrievers: tuple[str, ...] = ()
    reranker_role: str = ""

    def validate(self) -> "EngineConfig":
        if not 0 < self.tau <= 1:
            raise ConfigError("tau", f"must be in (0, 1], got {self.tau}")
        if self.t_max < 1:
            raise ConfigError("t_max", f"must be >= 1, got {self.t_max}")
        if self.k < 1:
            raise ConfigError("k", f"must be >= 1, got {self.k}")
        if self.max_chunk_tokens < 1:
            raise ConfigError("max_chunk_tokens", "must be >= 1")
        if self.min_image_bytes < 0:
            raise ConfigError("min_image_bytes", "must be >= 0")
        if self.chunk_chars < 1:
            raise ConfigError("chunk_chars", "must be >= 1")
        if not 0 < self.overlap_threshold <= 1:
            raise ConfigError("overlap_threshold", "must be in (0, 1]")
        if self.parsing_level not in PARSING_LEVELS:
            raise ConfigError("parsing_level", f"must be one of {PARSING_LEVELS}")
        if self.index_backend not in ("exact", "approx"):
            raise ConfigError("index_backend", "must be exact or approx")
        for role, names in (
            ("chat", (self.chat_role,) if self.chat_role else ()),
            ("text_retrievers", self.text_retrievers),
            ("vision_retrievers", self.vision_retrievers),
            ("reranker", (self.reranker_role,) if self.reranker_role else ()),
        ):
            for name in names:
                if name not in self.endpoints:
                    raise ConfigError(f"roles.{role}", f"unknown endpoint {name!r}")
        for name in self.text_retrievers:
            if self.endpoints[name].kind is not EndpointKind.EMBED_TEXT:
                raise ConfigError("roles.text_retrievers", f"{name!r} is not an embed_text endpoint")
        for name in self.vision_retrievers:
            if self.endpoints[name].kind not in (
                EndpointKind.EMBED_VISION_DENSE,
                EndpointKind.EMBED_VISION_MULTI,
            ):
                raise ConfigError("roles.vision_retrievers", f"{name!r} is not a vision endpoint")
        if self.chat_role and self.endpoints[self.chat_role].kind is not EndpointKind.CHAT:
            raise ConfigError("roles.chat", f"{self.chat_role!r} is not a chat endpoint")
        if self.reranker_role and self.endpoints[self.reranker_role].kind is not EndpointKind.RERANK:
            raise ConfigError("roles.reranker", f"{self.reranker_role!r} is not a rerank endpoint")
        return self


def _endpoint_from_dict(raw: dict) -> ModelEndpointConfig:
    try:
        kind = EndpointKind(raw["kind"])
    except (KeyError, ValueError):
        raise ConfigError("endpoints.kind", f"unknown kind {raw.get('kind')!r}")
    for key in ("name", "base_url"):
        if not raw.get(key):
            raise ConfigError(f"endpoints.{key}", "missing")
    try:
        return ModelEndpointConfig(
            name=raw["name"],
            base_url=raw["base_url"],
            kind=kind,
            api_key_env=raw.get("api_key_env", ""),
            max_concurrency=int(raw.get("max_concurrency", 4)),
            timeout_ms=int(raw.get("timeout_ms", 30_000)),
            max_retries=int(raw.get("max_retries", 2)),
            batch_size=int(raw.get("batch_size", 64)),
        )
    except ValueError as exc:
        raise ConfigError(f"endpoints.{raw['name']}", str(exc))


def config_from_dict(raw: dict, base_dir: Path | None = None) -> EngineConfig:
    endpoints = {}
    for ep in raw.get("endpoints", []):
        cfg = _endpoint_from_dict(ep)
        if cfg.name in endpoints:
            raise ConfigError("endpoints.name", f"duplicate endpoint {cfg.name!r}")
        endpoints[cfg.name] = cfg
    roles = raw.get("roles", {})
    data_dir = Path(raw.get("data_dir", "data"))
    if base_dir is not None and not data_dir.is_absolute():
        data_dir = base_dir / data_dir
    try:
        paradigm = Paradigm(raw.get("paradigm", "hybrid"))
    except ValueError:
        raise ConfigError("paradigm", f"unknown paradigm {raw.get('paradigm')!r}")
    cfg = EngineConfig(
        data_dir=data_dir,
        endpoints=endpoints,
        paradigm=paradigm,
        parsing_level=raw.get("parsing_level", "deep"),
        tau=float(raw.get("tau", 0.8)),
        t_max=int(raw.get("t_max", 3)),
        k=int(raw.get("k", 10)),
        max_chunk_tokens=int(raw.get("max_chunk_tokens", 300)),
        min_image_bytes=int(raw.get("min_image_bytes", 10_240)),
        chunk_chars=int(raw.get("chunk_chars", 140)),
        overlap_threshold=float(raw.get("overlap_threshold", 0.5)),
        context_budget=int(raw.get("context_budget", 24_000)),
        workers=int(raw.get("workers", 4)),
        index_backend=raw.get("index_backend", "exact"),
        use_planner=bool(raw.get("use_planner", True)),
        prompts_dir=raw.get("prompts_dir"),
        chat_role=roles.get("chat", ""),
        text_retrievers=tuple(roles.get("text_retrievers", [])),
        vision_retrievers=tuple(roles.get("vision_retrievers", [])),
        reranker_role=roles.get("reranker", ""),
    )
    return cfg.validate()


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw, base_dir=path.parent)
