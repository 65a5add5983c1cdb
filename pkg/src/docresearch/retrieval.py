"""Retrieval paradigms and fusion into one ranked evidence list.

Three paradigms: text_only (every configured text retriever pooled over
textual chunks and visual-element descriptions, reranked when a reranker
is configured), vision_only (page screenshots only), and hybrid (text
retrievers over textual chunks, vision retrievers over visual chunks and
page images, merged by per-retriever z-score fusion). Multi-query
aggregation reranks pooled text candidates against the original question;
vision and hybrid accumulate equal passages per sub-query round-robin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .chunking import Chunk, GranularityLevel, Modality, Provenance
from .gateway import EndpointKind, ModelEndpointConfig, ModelGateway, MultiVector
from .index import MATCH_ALL, SearchFilter, VectorIndex

# Deterministic tie order across modalities.
_MODALITY_ORDER = {
    Modality.TEXT: 0,
    Modality.TABLE: 1,
    Modality.FIGURE: 2,
    Modality.EQUATION: 3,
    Modality.PAGE_IMAGE: 4,
}

TEXT_CHUNK_MODALITIES = frozenset(
    {Modality.TEXT, Modality.TABLE, Modality.FIGURE, Modality.EQUATION}
)
HYBRID_TEXT_MODALITIES = frozenset({Modality.TEXT, Modality.EQUATION})
HYBRID_VISION_MODALITIES = frozenset({Modality.TABLE, Modality.FIGURE, Modality.PAGE_IMAGE})


class Paradigm(str, Enum):
    TEXT_ONLY = "text_only"
    VISION_ONLY = "vision_only"
    HYBRID = "hybrid"


class RetrievalError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetrieverSpec:
    """One configured retriever: its endpoint is both the passage encoder
    and the query encoder (cross-modal retrievers embed query text into
    the image space)."""

    cfg: ModelEndpointConfig

    @property
    def name(self) -> str:
        return self.cfg.name

    @property
    def is_multi(self) -> bool:
        return self.cfg.kind is EndpointKind.EMBED_VISION_MULTI


@dataclass(frozen=True)
class RetrieverSetup:
    text: tuple[RetrieverSpec, ...] = ()
    vision: tuple[RetrieverSpec, ...] = ()
    rerank_cfg: ModelEndpointConfig | None = None


@dataclass(frozen=True)
class RetrievalRequest:
    queries: tuple[str, ...]
    paradigm: Paradigm
    granularity: GranularityLevel = GranularityLevel.CHUNK
    filter: SearchFilter = MATCH_ALL
    k: int = 10
    pool_k: int | None = None  # per-retriever/per-query fetch before fusion

    def __post_init__(self):
        if not self.queries:
            raise ValueError("queries must be non-empty")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class TraceEntry:
    retriever_name: str
    raw_score: float
    normalized_score: float
    source_query: str


@dataclass
class Candidate:
    chunk: Chunk
    traces: list[TraceEntry] = field(default_factory=list)
    score: float = 0.0

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id


@dataclass(frozen=True)
class EvidenceHit:
    chunk_id: str
    doc_id: str
    granularity: GranularityLevel
    modality: Modality
    text: str
    image_ref: str | None
    provenance: tuple[Provenance, ...]
    score: float
    rank: int
    trace: tuple[TraceEntry, ...] = ()


@dataclass
class RankedEvidence:
    hits: list[EvidenceHit] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def chunk_ids(self) -> list[str]:
        return [h.chunk_id for h in self.hits]


def _tie_key(c: Candidate) -> tuple:
    return (-c.score, _MODALITY_ORDER[c.chunk.modality], c.chunk_id)


def _to_ranked(ordered: list[Candidate], warnings: list[str]) -> RankedEvidence:
    hits = [
        EvidenceHit(
            chunk_id=c.chunk_id,
            doc_id=c.chunk.doc_id,
            granularity=c.chunk.granularity,
            modality=c.chunk.modality,
            text=c.chunk.text,
            image_ref=c.chunk.image_ref,
            provenance=c.chunk.provenance,
            score=c.score,
            rank=i + 1,
            trace=tuple(c.traces),
        )
        for i, c in enumerate(ordered)
    ]
    return RankedEvidence(hits=hits, warnings=warnings)


def _finalize(candidates: list[Candidate], k: int, warnings: list[str]) -> RankedEvidence:
    seen: set[str] = set()
    unique: list[Candidate] = []
    for c in sorted(candidates, key=_tie_key):
        if c.chunk_id in seen:
            continue
        seen.add(c.chunk_id)
        unique.append(c)
    return _to_ranked(unique[:k], warnings)


def _zscores(values: list[float]) -> list[float]:
    # The population is anchored with the null score 0 (an orthogonal
    # match) so a singleton or constant group still normalizes relative
    # to "no signal" instead of collapsing to zero.
    if not values:
        return []
    population = values + [0.0]
    n = len(population)
    mean = sum(population) / n
    var = sum((v - mean) ** 2 for v in population) / n
    std = math.sqrt(var)
    if std < 1e-12:
        return [0.0 for _ in values]
    return [(v - mean) / std for v in values]


def _normalize_group(cands: list[Candidate]) -> None:
    """Replace each candidate's score with the z-score of its raw score
    within its (retriever, query) group; multi-trace candidates keep the
    max normalized score."""
    groups: dict[tuple[str, str], list[tuple[Candidate, int]]] = {}
    for c in cands:
        for ti, t in enumerate(c.traces):
            groups.setdefault((t.retriever_name, t.source_query), []).append((c, ti))
    for members in groups.values():
        zs = _zscores([c.traces[ti].raw_score for c, ti in members])
        for (c, ti), z in zip(members, zs):
            t = c.traces[ti]
            c.traces[ti] = TraceEntry(t.retriever_name, t.raw_score, z, t.source_query)
    for c in cands:
        c.score = max((t.normalized_score for t in c.traces), default=0.0)


def _merge_dedup(cands: list[Candidate]) -> list[Candidate]:
    by_id: dict[str, Candidate] = {}
    for c in cands:
        existing = by_id.get(c.chunk_id)
        if existing is None:
            by_id[c.chunk_id] = c
        else:
            existing.traces.extend(c.traces)
            existing.score = max(existing.score, c.score)
    return list(by_id.values())


def _search_spec(
    index: VectorIndex,
    gateway: ModelGateway,
    spec: RetrieverSpec,
    query: str,
    qfilter: SearchFilter,
    fetch_k: int,
    chunks,
) -> list[Candidate]:
    [qvec] = gateway.embed_texts([query], spec.cfg)
    if spec.is_multi:
        if not isinstance(qvec, MultiVector):
            qvec = MultiVector(rows=(qvec,), model_name=spec.name)
        hits = index.search_multivector(qvec, fetch_k, qfilter, spec.name)
    else:
        hits = index.search_dense(qvec, fetch_k, qfilter, spec.name)
    out = []
    for h in hits:
        chunk = chunks.get(h.chunk_id)
        if chunk is None:
            continue
        out.append(
            Candidate(chunk=chunk, traces=[TraceEntry(spec.name, h.score, h.score, query)], score=h.score)
        )
    return out


def _side_filter(base: SearchFilter, granularity: GranularityLevel, modalities: frozenset) -> SearchFilter:
    mods = modalities if base.modalities is None else frozenset(base.modalities & modalities)
    return SearchFilter(doc_ids=base.doc_ids, granularity=granularity, modalities=mods)


def retrieve(
    req: RetrievalRequest,
    index: VectorIndex,
    gateway: ModelGateway,
    chunks,
    setup: RetrieverSetup,
) -> RankedEvidence:
    """Run one retrieval request through its paradigm and fuse the results.

    ``chunks`` resolves chunk_id -> Chunk payloads (a dict works).
    """
    warnings: list[str] = []
    granularity = req.granularity
    if req.paradigm is Paradigm.VISION_ONLY and granularity is not GranularityLevel.PAGE:
        warnings.append(f"vision_only supports page granularity; coerced from {granularity.value}")
        granularity = GranularityLevel.PAGE

    if req.paradigm is Paradigm.TEXT_ONLY:
        if not setup.text:
            raise RetrievalError("text_only paradigm has no configured text retriever")
        qfilter = _side_filter(req.filter, granularity, TEXT_CHUNK_MODALITIES)
        fetch_k = req.pool_k or req.k
        pooled: list[Candidate] = []
        for query in req.queries:
            for spec in setup.text:
                pooled.extend(_search_spec(index, gateway, spec, query, qfilter, fetch_k, chunks))
        return aggregate_multiquery_text(
            list(req.queries), pooled, req.queries[0], req.k, gateway, setup.rerank_cfg, warnings
        )

    if req.paradigm is Paradigm.VISION_ONLY:
        if not setup.vision:
            raise RetrievalError("vision_only paradigm has no configured vision retriever")
        qfilter = _side_filter(req.filter, granularity, frozenset({Modality.PAGE_IMAGE}))
        fetch_k = req.pool_k or req.k
        per_query: list[list[Candidate]] = []
        for query in req.queries:
            cands: list[Candidate] = []
            for spec in setup.vision:
                cands.extend(_search_spec(index, gateway, spec, query, qfilter, fetch_k, chunks))
            cands = _merge_dedup(cands)
            _normalize_group(cands)
            per_query.append(sorted(cands, key=_tie_key))
        return aggregate_multiquery_visual(list(req.queries), per_query, req.k, warnings)

    if not setup.text or not setup.vision:
        raise RetrievalError("hybrid paradigm needs both text and vision retrievers")
    fetch_k = req.pool_k or req.k
    text_filter = _side_filter(req.filter, granularity, HYBRID_TEXT_MODALITIES)
    vision_filter = _side_filter(req.filter, granularity, HYBRID_VISION_MODALITIES)
    per_query = []
    for query in req.queries:
        text_hits: list[Candidate] = []
        for spec in setup.text:
            text_hits.extend(_search_spec(index, gateway, spec, query, text_filter, fetch_k, chunks))
        vision_hits: list[Candidate] = []
        for spec in setup.vision:
            vision_hits.extend(_search_spec(index, gateway, spec, query, vision_filter, fetch_k, chunks))
        per_query.append(_fuse_hybrid_candidates(text_hits, vision_hits, req.k))
    return aggregate_multiquery_visual(list(req.queries), per_query, req.k, warnings)


def aggregate_multiquery_text(
    queries: list[str],
    pooled_candidates: list[Candidate],
    original_question: str,
    k: int,
    gateway: ModelGateway,
    rerank_cfg: ModelEndpointConfig | None = None,
    warnings: list[str] | None = None,
) -> RankedEvidence:
    """Dedup the pooled candidates and rerank every unique one against the
    original question; without a reranker, fall back to normalized-score
    fusion with a recorded warning."""
    warnings = warnings if warnings is not None else []
    unique = _merge_dedup(pooled_candidates)
    if rerank_cfg is None:
        warnings.append("no reranker configured; falling back to normalized-score fusion")
        _normalize_group(unique)
        return _finalize(unique, k, warnings)
    unique.sort(key=lambda c: c.chunk_id)
    texts = [c.chunk.text for c in unique]
    if not texts:
        return RankedEvidence(hits=[], warnings=warnings)
    scored = gateway.rerank(original_question, texts, rerank_cfg)
    for idx, score in scored:
        unique[idx].score = score
        unique[idx].traces.append(TraceEntry(rerank_cfg.name, score, score, original_question))
    return _finalize(unique, k, warnings)


def aggregate_multiquery_visual(
    queries: list[str],
    per_query_hits: list[list[Candidate]],
    k: int,
    warnings: list[str] | None = None,
) -> RankedEvidence:
    """Equal accumulation: round-robin one hit per sub-query, skipping
    duplicates, until k results or every ranking is exhausted."""
    warnings = warnings if warnings is not None else []
    cursors = [0] * len(per_query_hits)
    taken: list[Candidate] = []
    seen: set[str] = set()
    while len(taken) < k:
        progressed = False
        for qi, ranking in enumerate(per_query_hits):
            while cursors[qi] < len(ranking):
                cand = ranking[cursors[qi]]
                cursors[qi] += 1
                if cand.chunk_id in seen:
                    continue
                seen.add(cand.chunk_id)
                taken.append(cand)
                progressed = True
                break
            if len(taken) >= k:
                break
        if not progressed:
            break
    # round-robin order is the ranking; scores stay visible in the trace
    return _to_ranked(taken, warnings)


def fuse_hybrid(
    text_hits: list[Candidate], vision_hits: list[Candidate], k: int
) -> RankedEvidence:
    """Merge the two sides after per-retriever z-score normalization,
    dedup keeping the higher normalized score; ties break text-first,
    then by modality, then chunk_id."""
    return _to_ranked(_fuse_hybrid_candidates(text_hits, vision_hits, k), [])


def _fuse_hybrid_candidates(
    text_hits: list[Candidate], vision_hits: list[Candidate], k: int
) -> list[Candidate]:
    text_side = _merge_dedup(text_hits)
    vision_side = _merge_dedup(vision_hits)
    _normalize_group(text_side)
    _normalize_group(vision_side)
    by_id: dict[str, tuple[int, Candidate]] = {}
    for side_rank, side in ((0, text_side), (1, vision_side)):
        for c in side:
            existing = by_id.get(c.chunk_id)
            if existing is None:
                by_id[c.chunk_id] = (side_rank, c)
            else:
                ex_rank, ex = existing
                ex.traces.extend(c.traces)
                if c.score > ex.score:
                    ex.score = c.score
                if side_rank < ex_rank:
                    by_id[c.chunk_id] = (side_rank, ex)
    merged = sorted(
        by_id.values(), key=lambda rc: (-rc[1].score, rc[0], _MODALITY_ORDER[rc[1].chunk.modality], rc[1].chunk_id)
    )
    return [c for _, c in merged[:k]]
