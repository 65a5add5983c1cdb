"""Engine: ties corpus, chunking, index, retrieval, and the agent loop
together behind one object, plus multi-turn session persistence.

Sessions are persisted under ``data_dir/sessions/<id>.json`` after every
turn and survive restarts; one query may be in flight per session.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import prompts
from .agents import (
    AgentRuntime,
    DialogTurn,
    EventSink,
    LoopConfig,
    Report,
    ResearchState,
    ResearchStatus,
    report,
    report_to_dict,
    research_loop,
)
from .chunking import (
    GranularityLevel,
    Modality,
    build_granularities,
    chunk_document_deep,
    chunk_document_shallow,
)
from .config import EngineConfig
from .corpus import Document, EnrichError, corpus_stats, enrich_document, load_document
from .evalkit import BenchmarkItem, ItemOutcome, RunResult, load_benchmark, run_benchmark
from .gateway import BoundChat, EndpointKind, EnrichmentModels, ModelGateway
from .index import IndexEntry, VectorIndex
from .retrieval import (
    Paradigm,
    RankedEvidence,
    RetrievalRequest,
    RetrieverSetup,
    RetrieverSpec,
    retrieve,
)
from .store import ChunkMap, CorpusStore


class EngineBusy(RuntimeError):
    """One query is already running on this session."""


class UnknownSession(KeyError):
    pass


@dataclass
class SessionTurn:
    question: str
    report: dict
    state: dict


@dataclass
class Session:
    session_id: str
    created_at: str
    turns: list[SessionTurn] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at": self.created_at,
            "turns": [
                {"question": t.question, "report": t.report, "state": t.state} for t in self.turns
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Session":
        return cls(
            session_id=raw["session_id"],
            created_at=raw["created_at"],
            turns=[SessionTurn(t["question"], t["report"], t["state"]) for t in raw["turns"]],
        )


def _state_snapshot(state: ResearchState) -> dict:
    return {
        "status": state.status.value,
        "turn": state.turn,
        "sufficiency": state.sufficiency,
        "subqueries": list(state.subqueries),
        "plan": {
            "doc_ids": sorted(state.plan.filtered_doc_ids),
            "granularity": state.plan.granularity.value,
            "subqueries": list(state.plan.subqueries),
            "rationale": state.plan.rationale,
        }
        if state.plan
        else None,
        "evidence": [
            {
                "chunk_id": item.chunk_id,
                "doc_id": item.doc_id,
                "source_subquery": item.source_subquery,
                "accepted_turn": item.accepted_turn,
            }
            for item in state.evidence.items
        ],
        "insufficient": state.insufficient,
        "warnings": list(state.warnings),
        "error": state.error,
    }


class Engine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.store = CorpusStore(config.data_dir)
        self.index = VectorIndex(Path(config.data_dir) / "index", backend=config.index_backend)
        self.gateway = ModelGateway()
        self.chat_cfg = config.endpoints.get(config.chat_role)
        self.setup = RetrieverSetup(
            text=tuple(RetrieverSpec(config.endpoints[n]) for n in config.text_retrievers),
            vision=tuple(RetrieverSpec(config.endpoints[n]) for n in config.vision_retrievers),
            rerank_cfg=config.endpoints.get(config.reranker_role) if config.reranker_role else None,
        )
        self.sessions_dir = Path(config.data_dir) / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._chunkmap: ChunkMap | None = None
        self._summaries: dict[str, str] | None = None
        self._docs: dict[str, Document] = {}
        self._active: set[str] = set()
        self._active_lock = threading.Lock()
        self.warnings: list[str] = []

    # -- corpus -------------------------------------------------------------

    def _invalidate(self):
        self._chunkmap = None
        self._summaries = None
        self._docs = {}

    @property
    def chunkmap(self) -> ChunkMap:
        if self._chunkmap is None:
            self._chunkmap = ChunkMap.from_store(self.store)
        return self._chunkmap

    def document(self, doc_id: str) -> Document:
        if doc_id not in self._docs:
            self._docs[doc_id] = self.store.load_document(doc_id)
        return self._docs[doc_id]

    def summaries(self, doc_ids: list[str] | None = None) -> dict[str, str]:
        if self._summaries is None:
            self._summaries = {
                doc_id: self.document(doc_id).summary for doc_id in self.store.list_doc_ids()
            }
        if doc_ids is None:
            return dict(self._summaries)
        return {d: self._summaries.get(d, "") for d in doc_ids if d in self._summaries}

    def ingest(self, paths: list[str | Path], enrich: bool | None = None) -> list[str]:
        """Ingest files in the canonical format: validate, enrich when a
        chat endpoint is configured, chunk per the parsing level, persist."""
        if enrich is None:
            enrich = self.chat_cfg is not None
        ingested = []
        for path in paths:
            doc = load_document(path)
            if enrich and self.chat_cfg is not None:
                models = EnrichmentModels(self.gateway, self.chat_cfg)
                try:
                    doc = enrich_document(doc, models)
                except EnrichError as exc:
                    self.warnings.append(
                        f"{doc.doc_id}: enrichment stopped at element {exc.element_id}; partial kept"
                    )
                    doc = exc.partial
            stored = self.store.save_document(doc)
            self.store.save_chunks(stored.doc_id, self._chunk(stored))
            ingested.append(stored.doc_id)
        self._invalidate()
        return ingested

    def _chunk(self, doc: Document):
        level = self.config.parsing_level
        levels = [GranularityLevel.PAGE]
        if doc.full_text:
            levels.append(GranularityLevel.FULL)
        if doc.summary:
            levels.append(GranularityLevel.SUMMARY)
        if level == "deep":
            chunks = chunk_document_deep(
                doc, self.config.max_chunk_tokens, self.config.min_image_bytes
            )
        elif level == "shallow":
            chunks = chunk_document_shallow(doc, self.config.chunk_chars)
        else:  # free: screenshots only
            chunks = []
        return chunks + build_granularities(doc, chunks, levels=tuple(levels))

    def stats(self):
        return corpus_stats([self.document(d) for d in self.store.list_doc_ids()])

    # -- index --------------------------------------------------------------

    def build_index(self, paradigm: Paradigm | None = None) -> int:
        """Embed chunks and upsert them into per-retriever partitions.
        Returns the number of live index entries."""
        paradigm = paradigm or self.config.paradigm
        cm = self.chunkmap
        count = 0
        if paradigm in (Paradigm.TEXT_ONLY, Paradigm.HYBRID) and self.setup.text:
            text_chunks = [
                c
                for c in sorted(cm.all(), key=lambda c: c.chunk_id)
                if c.text
                and c.modality is not Modality.PAGE_IMAGE
                and c.granularity in (GranularityLevel.CHUNK, GranularityLevel.PAGE)
            ]
            for spec in self.setup.text:
                if not text_chunks:
                    break
                vectors = self.gateway.embed_texts([c.text for c in text_chunks], spec.cfg)
                entries = [
                    IndexEntry(
                        chunk_id=c.chunk_id,
                        doc_id=c.doc_id,
                        granularity=c.granularity,
                        modality=c.modality,
                        retriever_name=spec.name,
                        dense=v,
                    )
                    for c, v in zip(text_chunks, vectors)
                ]
                count = self.index.upsert(entries)
        if paradigm in (Paradigm.VISION_ONLY, Paradigm.HYBRID) and self.setup.vision:
            image_chunks = [
                c for c in sorted(cm.all(), key=lambda c: c.chunk_id) if c.image_ref
            ]
            for spec in self.setup.vision:
                if not image_chunks:
                    break
                vectors = self.gateway.embed_images([c.image_ref for c in image_chunks], spec.cfg)
                entries = []
                for c, v in zip(image_chunks, vectors):
                    dense = v if spec.cfg.kind is EndpointKind.EMBED_VISION_DENSE else None
                    multi = v if spec.cfg.kind is EndpointKind.EMBED_VISION_MULTI else None
                    entries.append(
                        IndexEntry(
                            chunk_id=c.chunk_id,
                            doc_id=c.doc_id,
                            granularity=c.granularity,
                            modality=c.modality,
                            retriever_name=spec.name,
                            dense=dense,
                            multi=multi,
                        )
                    )
                count = self.index.upsert(entries)
        return count

    # -- retrieval ----------------------------------------------------------

    def search(
        self,
        queries: list[str],
        k: int | None = None,
        paradigm: Paradigm | None = None,
        granularity: GranularityLevel = GranularityLevel.CHUNK,
        doc_ids: frozenset[str] | None = None,
    ) -> RankedEvidence:
        from .index import SearchFilter

        req = RetrievalRequest(
            queries=tuple(queries),
            paradigm=paradigm or self.config.paradigm,
            granularity=granularity,
            filter=SearchFilter(doc_ids=doc_ids),
            k=k or self.config.k,
        )
        return retrieve(req, self.index, self.gateway, self.chunkmap, self.setup)

    # -- research -----------------------------------------------------------

    def _require_chat(self) -> BoundChat:
        if self.chat_cfg is None:
            raise RuntimeError("no chat endpoint configured (roles.chat)")
        return BoundChat(self.gateway, self.chat_cfg)

    def _extractor(self):
        if self.chat_cfg is None:
            return None
        cfg = self.chat_cfg
        pdir = self.config.prompts_dir

        def extract(image_ref: str, query: str) -> str:
            prompt = prompts.render("extract_visual", override_dir=pdir, query=query)
            return self.gateway.chat([("user", [prompt, {"image": image_ref}])], cfg)

        return extract

    def _runtime(self, llm, doc_scope: frozenset[str] | None = None) -> AgentRuntime:
        summaries = self.summaries(sorted(doc_scope) if doc_scope is not None else None)
        return AgentRuntime(
            llm=llm,
            index=self.index,
            gateway=self.gateway,
            chunks=self.chunkmap,
            setup=self.setup,
            corpus_summaries=summaries,
            extractor=self._extractor(),
            prompts_dir=self.config.prompts_dir,
        )

    def _loop_config(self) -> LoopConfig:
        return LoopConfig(
            paradigm=self.config.paradigm,
            tau=self.config.tau,
            t_max=self.config.t_max,
            k=self.config.k,
            context_budget=self.config.context_budget,
            workers=self.config.workers,
            use_planner=self.config.use_planner,
        )

    def run_research(
        self,
        question: str,
        history: list[DialogTurn],
        doc_scope: frozenset[str] | None = None,
        event_cb=None,
        session_id: str = "",
    ) -> tuple[ResearchState, Report | None, EventSink, BoundChat]:
        llm = self._require_chat()
        sink = EventSink(event_cb)
        state = ResearchState(session_id=session_id or "adhoc", question=question, history=list(history))
        state = research_loop(state, self._loop_config(), self._runtime(llm, doc_scope), sink)
        rep = None
        if state.status is ResearchStatus.REPORTING:
            rep = report(question, state.evidence, llm, prompts_dir=self.config.prompts_dir)
            state.status = ResearchStatus.DONE
            sink.emit("report_ready", report=report_to_dict(rep))
        else:
            sink.emit("failed", error=state.error)
        return state, rep, sink, llm

    # -- sessions -----------------------------------------------------------

    def _session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def create_session(self) -> Session:
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        self._save_session(session)
        return session

    def _save_session(self, session: Session):
        with open(self._session_path(session.session_id), "w", encoding="utf-8") as fh:
            json.dump(session.to_dict(), fh, ensure_ascii=False, indent=1, sort_keys=True)

    def get_session(self, session_id: str) -> Session:
        path = self._session_path(session_id)
        if not path.is_file():
            raise UnknownSession(session_id)
        with open(path, encoding="utf-8") as fh:
            return Session.from_dict(json.load(fh))

    def list_sessions(self) -> list[str]:
        return sorted(p.stem for p in self.sessions_dir.glob("*.json"))

    def acquire_session(self, session_id: str) -> bool:
        with self._active_lock:
            if session_id in self._active:
                return False
            self._active.add(session_id)
            return True

    def release_session(self, session_id: str):
        with self._active_lock:
            self._active.discard(session_id)

    def query_session(self, session_id: str, question: str, event_cb=None) -> tuple[Session, Report | None]:
        """Run one research turn on a session; prior turns feed the
        planner as dialog history. One in-flight query per session."""
        session = self.get_session(session_id)
        if not self.acquire_session(session_id):
            raise EngineBusy(session_id)
        try:
            return self.query_session_unguarded(session, question, event_cb)
        finally:
            self.release_session(session_id)

    def query_session_unguarded(
        self, session: Session, question: str, event_cb=None
    ) -> tuple[Session, Report | None]:
        """Caller must hold the session via acquire_session."""
        history = [DialogTurn(t.question, _answer_text(t.report)) for t in session.turns]
        state, rep, sink, _ = self.run_research(
            question, history, event_cb=event_cb, session_id=session.session_id
        )
        session.turns.append(
            SessionTurn(
                question=question,
                report=report_to_dict(rep) if rep else {},
                state=_state_snapshot(state),
            )
        )
        self._save_session(session)
        return session, rep

    # -- evaluation ---------------------------------------------------------

    def run_benchmark_item(self, item: BenchmarkItem) -> ItemOutcome:
        llm = self._require_chat()
        sink = EventSink()
        state = ResearchState(
            session_id=f"eval-{item.qid}", question=item.question, history=list(item.history)
        )
        runtime = self._runtime(llm, doc_scope=item.candidate_doc_ids)
        state = research_loop(state, self._loop_config(), runtime, sink)
        rep = None
        error = state.error
        if state.status is ResearchStatus.REPORTING:
            try:
                rep = report(item.question, state.evidence, llm, prompts_dir=self.config.prompts_dir)
                sink.emit("report_ready", report=report_to_dict(rep))
            except Exception as exc:  # recorded, run continues
                error = f"{type(exc).__name__}: {exc}"
        return ItemOutcome(
            plan_doc_ids=state.plan.filtered_doc_ids if state.plan else None,
            evidence_hits=[i.hit for i in state.evidence.items],
            report=rep,
            events=sink.events,
            transcript=llm.transcript,
            error=error,
        )

    def evaluate(self, bench_path: str | Path, out_dir: str | Path | None = None) -> RunResult:
        items = load_benchmark(bench_path)
        return run_benchmark(
            items,
            self,
            judge_llm=self._require_chat(),
            overlap_threshold=self.config.overlap_threshold,
            out_dir=out_dir,
            prompts_dir=self.config.prompts_dir,
        )


def _answer_text(report_dict: dict) -> str:
    blocks = report_dict.get("blocks", [])
    return "\n\n".join(b["text"] for b in blocks if b.get("type") == "text")
