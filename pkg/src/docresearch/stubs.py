"""Deterministic local stand-ins for model endpoints.

Endpoints whose base_url uses the ``stub:`` scheme are served here instead
of over HTTP, so pipelines run reproducibly with no model servers:

    stub://embed?dim=16&seed=7          hash-based dense embeddings
    stub://embed?mode=marker&markers=A,B&dim=8   marker one-hot embeddings
    stub://embed-multi?dim=8&seed=7&rows=4   hash-based multi-vectors
    stub://chat?script=/path/rules.json substring-matched scripted replies
    stub://rerank?mode=hash&seed=7      deterministic rerank scores
    stub://rerank?mode=length           score = candidate length

Chat scripts are JSON: ``{"rules": [{"when": "needle", "reply": "..."}],
"default": "..."}``; a rule may instead carry ``"when_all": [n1, n2]``.
The first matching rule wins. Matching is content-based, so replies do
not depend on call order and stay deterministic under concurrency.

Marker embeddings map input i to the one-hot axis of the first marker
occurring in its text (or, for images, in the file path); unmarked
inputs get hash noise in the remaining axes. They give planted-fact
corpora a semantically meaningful geometry with no model in the loop.
"""

from __future__ import annotations

import hashlib
import json
import struct
from functools import lru_cache
from pathlib import Path
from urllib.parse import parse_qs, urlparse


def _params(base_url: str) -> tuple[str, dict]:
    parsed = urlparse(base_url)
    name = parsed.netloc or parsed.path.lstrip("/")
    qs = {k: v[0] for k, v in parse_qs(parsed.query).items()}
    return name, qs


def _hash_floats(key: bytes, dim: int) -> list[float]:
    out: list[float] = []
    counter = 0
    while len(out) < dim:
        block = hashlib.sha256(key + counter.to_bytes(4, "little")).digest()
        for i in range(0, len(block) - 3, 4):
            (u,) = struct.unpack_from("<I", block, i)
            out.append(u / 2**31 - 1.0)  # [-1, 1)
            if len(out) == dim:
                break
        counter += 1
    norm = sum(v * v for v in out) ** 0.5 or 1.0
    return [v / norm for v in out]


def _input_key(item, seed: str) -> bytes:
    if isinstance(item, dict):
        path = item.get("image_path") or item.get("image_b64") or ""
        p = Path(str(path))
        payload = p.read_bytes() if p.is_file() else str(path).encode()
        return seed.encode() + b"\x00img\x00" + payload
    return seed.encode() + b"\x00txt\x00" + str(item).encode()


def _marker_vector(item, markers: list[str], dim: int, seed: str) -> list[float]:
    text = item.get("image_path", "") if isinstance(item, dict) else str(item)
    for i, marker in enumerate(markers):
        if marker and marker in text:
            vec = [0.0] * dim
            vec[i] = 1.0
            return vec
    noise = _hash_floats(_input_key(item, seed), dim - len(markers))
    return [0.0] * len(markers) + noise


def _embed(qs: dict, payload: dict, multi: bool) -> dict:
    dim = int(qs.get("dim", 16))
    seed = qs.get("seed", "0")
    markers = [m for m in qs.get("markers", "").split(",") if m] if qs.get("mode") == "marker" else None
    if markers and dim <= len(markers):
        raise ValueError("marker mode needs dim > number of markers")
    data = []
    for i, item in enumerate(payload["input"]):
        key = _input_key(item, seed)
        if multi:
            fixed = qs.get("rows")
            n_rows = int(fixed) if fixed else 3 + hashlib.sha256(key).digest()[0] % 4
            emb = [_hash_floats(key + bytes([r]), dim) for r in range(n_rows)]
        elif markers is not None:
            emb = _marker_vector(item, markers, dim, seed)
        else:
            emb = _hash_floats(key, dim)
        data.append({"index": i, "embedding": emb})
    return {"data": data}


@lru_cache(maxsize=32)
def _load_script(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _render_messages(messages: list) -> str:
    parts = []
    for msg in messages:
        content = msg.get("content")
        if isinstance(content, str):
            parts.append(content)
        else:
            for p in content:
                if p.get("type") == "text":
                    parts.append(p["text"])
                elif p.get("type") == "image_path":
                    parts.append(f"[image:{p['path']}]")
    return "\n".join(parts)


def _chat(qs: dict, payload: dict) -> dict:
    text = _render_messages(payload["messages"])
    reply = qs.get("reply", "")
    script_path = qs.get("script")
    if script_path:
        script = _load_script(script_path)
        reply = script.get("default", "")
        for rule in script.get("rules", []):
            needles = rule.get("when_all") or [rule.get("when", "")]
            if all(n in text for n in needles):
                reply = rule.get("reply", "")
                break
    return {"choices": [{"message": {"role": "assistant", "content": reply}}]}


def _rerank(qs: dict, payload: dict) -> dict:
    mode = qs.get("mode", "hash")
    seed = qs.get("seed", "0")
    query = payload["query"]
    results = []
    for i, cand in enumerate(payload["documents"]):
        if mode == "length":
            score = float(len(cand))
        else:
            digest = hashlib.sha256(f"{seed}\x00{query}\x00{cand}".encode()).digest()
            score = int.from_bytes(digest[:4], "little") / 2**32
        results.append({"index": i, "relevance_score": score})
    return {"results": results}


def handle(base_url: str, path: str, payload: dict) -> dict:
    name, qs = _params(base_url)
    if path == "/embeddings":
        return _embed(qs, payload, multi=name.startswith("embed-multi") or name == "multi")
    if path == "/chat/completions":
        return _chat(qs, payload)
    if path == "/rerank":
        return _rerank(qs, payload)
    raise ValueError(f"stub endpoint {name!r} cannot serve {path}")
