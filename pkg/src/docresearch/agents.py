"""Multi-agent deep-research loop.

One research run is: Planner (document filtering, granularity selection,
sub-query decomposition) followed by turns of Searcher + Refiner over the
active sub-queries, a sufficiency Evaluator after each turn, sub-query
updates while evidence is insufficient, and finally the Reporter, which
writes a citation-grounded answer interleaving text and evidence images.

Model I/O uses a strict tagged-field envelope with one repair re-prompt;
after that the stated defaults apply. Progress is emitted as an ordered
event stream: plan_ready, search_started, candidates_found,
evidence_accepted, sufficiency, report_ready.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence

from . import prompts
from .chunking import GranularityLevel, Modality
from .index import SearchFilter, VectorIndex
from .retrieval import (
    EvidenceHit,
    Paradigm,
    RankedEvidence,
    RetrievalRequest,
    RetrieverSetup,
    retrieve,
)

DEFAULT_TAU = 0.8
DEFAULT_T_MAX = 3
MAX_SUBQUERIES = 6


class ChatModel(Protocol):
    def chat(self, messages: Sequence[tuple[str, object]]) -> str: ...


class PlanError(RuntimeError):
    pass


class ResearchStatus(str, Enum):
    PLANNING = "planning"
    SEARCHING = "searching"
    REFINING = "refining"
    EVALUATING = "evaluating"
    REPORTING = "reporting"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class DialogTurn:
    question: str
    answer: str


@dataclass(frozen=True)
class PlannerDecision:
    filtered_doc_ids: frozenset[str]
    granularity: GranularityLevel
    subqueries: tuple[str, ...]
    rationale: str = ""

    def __post_init__(self):
        if not self.subqueries:
            raise ValueError("planner decision needs at least one sub-query")


@dataclass(frozen=True)
class EvidenceItem:
    hit: EvidenceHit
    source_subquery: str
    accepted_turn: int

    @property
    def chunk_id(self) -> str:
        return self.hit.chunk_id

    @property
    def doc_id(self) -> str:
        return self.hit.doc_id


class EvidenceSet:
    """Accepted evidence, deduplicated by chunk_id, insertion-ordered."""

    def __init__(self):
        self.items: list[EvidenceItem] = []
        self._ids: set[str] = set()

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._ids

    def add(self, item: EvidenceItem) -> bool:
        if item.chunk_id in self._ids:
            return False
        self._ids.add(item.chunk_id)
        self.items.append(item)
        return True

    def get(self, chunk_id: str) -> EvidenceItem | None:
        for item in self.items:
            if item.chunk_id == chunk_id:
                return item
        return None

    def doc_ids(self) -> set[str]:
        return {item.doc_id for item in self.items}


@dataclass
class ResearchState:
    session_id: str
    question: str
    history: list[DialogTurn] = field(default_factory=list)
    plan: PlannerDecision | None = None
    turn: int = 0
    subqueries: list[str] = field(default_factory=list)
    evidence: EvidenceSet = field(default_factory=EvidenceSet)
    sufficiency: float = 0.0
    status: ResearchStatus = ResearchStatus.PLANNING
    insufficient: bool = False
    warnings: list[str] = field(default_factory=list)
    error: str = ""


@dataclass(frozen=True)
class Citation:
    doc_id: str
    page_no: int | None
    bbox: tuple[float, float, float, float] | None
    chunk_id: str


@dataclass(frozen=True)
class TextBlock:
    text: str
    citations: tuple[Citation, ...] = ()
    unverified: bool = False


@dataclass(frozen=True)
class ImageBlock:
    chunk_id: str
    image_ref: str
    citation: Citation | None = None


@dataclass
class Report:
    question_echo: str
    answer_blocks: list = field(default_factory=list)
    citations: list[Citation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def text(self) -> str:
        return "\n\n".join(b.text for b in self.answer_blocks if isinstance(b, TextBlock))


def report_to_dict(report: Report) -> dict:
    from dataclasses import asdict

    blocks = []
    for b in report.answer_blocks:
        if isinstance(b, TextBlock):
            blocks.append(
                {
                    "type": "text",
                    "text": b.text,
                    "citations": [asdict(c) for c in b.citations],
                    "unverified": b.unverified,
                }
            )
        else:
            blocks.append(
                {
                    "type": "image",
                    "chunk_id": b.chunk_id,
                    "image_ref": b.image_ref,
                    "citation": asdict(b.citation) if b.citation else None,
                }
            )
    return {
        "question": report.question_echo,
        "blocks": blocks,
        "citations": [asdict(c) for c in report.citations],
        "warnings": list(report.warnings),
    }


@dataclass(frozen=True)
class Event:
    seq: int
    type: str
    data: dict


class EventSink:
    def __init__(self, callback: Callable[[Event], None] | None = None):
        self._seq = 0
        self._callback = callback
        self.events: list[Event] = []

    def emit(self, type_: str, **data):
        ev = Event(self._seq, type_, data)
        self._seq += 1
        self.events.append(ev)
        if self._callback:
            self._callback(ev)


@dataclass
class LoopConfig:
    paradigm: Paradigm = Paradigm.HYBRID
    tau: float = DEFAULT_TAU
    t_max: int = DEFAULT_T_MAX
    k: int = 10
    context_budget: int = 24_000
    workers: int = 4
    use_planner: bool = True  # off = the no-planner ablation (all docs, chunk, [question])


@dataclass
class AgentRuntime:
    """Shared services one research run needs."""

    llm: ChatModel
    index: VectorIndex
    gateway: object
    chunks: object  # .get(chunk_id) and .for_doc(doc_id, granularity)
    setup: RetrieverSetup
    corpus_summaries: dict[str, str]
    extractor: Callable[[str, str], str] | None = None  # (image_ref, query) -> text
    prompts_dir: str | None = None


# -- envelope parsing --------------------------------------------------------


def _tag(text: str, name: str) -> str | None:
    m = re.search(rf"<{name}>(.*?)</{name}>", text, re.DOTALL | re.IGNORECASE)
    return m.group(1).strip() if m else None


def _bullets(block: str | None) -> list[str]:
    if not block:
        return []
    out = []
    for line in block.splitlines():
        line = line.strip()
        if line.startswith("- ") and line[2:].strip():
            out.append(line[2:].strip())
    return out


def _format_history(history: Sequence[DialogTurn]) -> str:
    if not history:
        return "(none)"
    return "\n".join(f"user: {t.question}\nassistant: {t.answer}" for t in history)


def _parse_plan(reply: str, known_docs: set[str], warnings: list[str]) -> PlannerDecision | None:
    docs_raw = _tag(reply, "docs")
    gran_raw = _tag(reply, "granularity")
    subqueries = _bullets(_tag(reply, "subqueries"))[:MAX_SUBQUERIES]
    if docs_raw is None or gran_raw is None or not subqueries:
        return None
    try:
        granularity = GranularityLevel(gran_raw.strip().lower())
    except ValueError:
        return None
    if docs_raw.strip() in ("*", "all"):
        doc_ids = frozenset(known_docs)
    else:
        requested = [d.strip() for d in docs_raw.split(",") if d.strip()]
        unknown = [d for d in requested if d not in known_docs]
        if unknown:
            warnings.append(f"planner named unknown documents, dropped: {sorted(unknown)}")
        kept = frozenset(d for d in requested if d in known_docs)
        doc_ids = kept if kept else frozenset(known_docs)
    return PlannerDecision(
        filtered_doc_ids=doc_ids,
        granularity=granularity,
        subqueries=tuple(subqueries),
        rationale=_tag(reply, "rationale") or "",
    )


def default_plan(question: str, known_docs: set[str]) -> PlannerDecision:
    return PlannerDecision(
        filtered_doc_ids=frozenset(known_docs),
        granularity=GranularityLevel.CHUNK,
        subqueries=(question,),
        rationale="default plan",
    )


# -- agent operations --------------------------------------------------------


def plan(
    question: str,
    history: Sequence[DialogTurn],
    corpus_summaries: dict[str, str],
    llm: ChatModel,
    warnings: list[str] | None = None,
    prompts_dir: str | None = None,
) -> PlannerDecision:
    """Pick the document subset, retrieval granularity, and initial
    sub-queries. Malformed output gets one repair re-prompt, then the
    defaults (all documents, chunk granularity, the question itself)."""
    warnings = warnings if warnings is not None else []
    known = set(corpus_summaries)
    summaries = "\n".join(f"- {doc_id}: {summary}" for doc_id, summary in sorted(corpus_summaries.items()))
    prompt = prompts.render(
        "planner",
        override_dir=prompts_dir,
        history=_format_history(history),
        question=question,
        summaries=summaries or "(empty corpus)",
    )
    try:
        reply = llm.chat([("user", prompt)])
        decision = _parse_plan(reply, known, warnings)
        if decision is None:
            warnings.append("planner reply unparseable; re-prompting once")
            reply = llm.chat(
                [
                    ("user", prompt),
                    ("assistant", reply),
                    ("user", "Your reply did not follow the required tags. Reply again using exactly the <docs>, <granularity>, <subqueries>, <rationale> structure."),
                ]
            )
            decision = _parse_plan(reply, known, warnings)
    except Exception as exc:
        raise PlanError(str(exc)) from exc
    if decision is None:
        warnings.append("planner reply unparseable twice; using default plan")
        decision = default_plan(question, known)
    return decision


def search_step(
    subquery: str,
    decision: PlannerDecision,
    paradigm: Paradigm,
    runtime: AgentRuntime,
    k: int,
    context_budget: int = 24_000,
) -> RankedEvidence:
    """One retrieval pass for one sub-query under the plan's document
    filter and granularity. Full/summary granularity bypasses vector
    search and returns those chunks for the filtered documents directly."""
    if decision.granularity in (GranularityLevel.FULL, GranularityLevel.SUMMARY):
        hits = []
        total_tokens = 0
        for doc_id in sorted(decision.filtered_doc_ids):
            for chunk in runtime.chunks.for_doc(doc_id, decision.granularity):
                total_tokens += chunk.token_count
                hits.append(chunk)
        ev = RankedEvidence(
            hits=[
                EvidenceHit(
                    chunk_id=c.chunk_id,
                    doc_id=c.doc_id,
                    granularity=c.granularity,
                    modality=c.modality,
                    text=c.text,
                    image_ref=c.image_ref,
                    provenance=c.provenance,
                    score=0.0,
                    rank=i + 1,
                )
                for i, c in enumerate(hits)
            ]
        )
        if decision.granularity is GranularityLevel.FULL and total_tokens > context_budget:
            ev.warnings.append(
                f"oversized: {total_tokens} tokens of full text exceed context budget {context_budget}"
            )
        return ev
    req = RetrievalRequest(
        queries=(subquery,),
        paradigm=paradigm,
        granularity=decision.granularity,
        filter=SearchFilter(doc_ids=frozenset(decision.filtered_doc_ids)),
        k=k,
    )
    return retrieve(req, runtime.index, runtime.gateway, runtime.chunks, runtime.setup)


def refine(
    candidates: RankedEvidence,
    subquery: str,
    evidence: EvidenceSet,
    llm: ChatModel,
    turn: int,
    extractor: Callable[[str, str], str] | None = None,
    workers: int = 4,
    warnings: list[str] | None = None,
    prompts_dir: str | None = None,
) -> list[EvidenceItem]:
    """Judge each candidate's relevance to the sub-query; duplicates
    against the existing evidence are removed before judging. Unparseable
    verdicts reject the item with a recorded warning."""
    warnings = warnings if warnings is not None else []
    fresh = [h for h in candidates.hits if h.chunk_id not in evidence]
    if not fresh:
        return []
    if extractor is not None:
        extracted = []
        for h in fresh:
            if h.modality is Modality.PAGE_IMAGE and not h.text and h.image_ref:
                from dataclasses import replace

                h = replace(h, text=extractor(h.image_ref, subquery))
            extracted.append(h)
        fresh = extracted

    def judge(hit: EvidenceHit) -> str:
        prompt = prompts.render(
            "refiner",
            override_dir=prompts_dir,
            subquery=subquery,
            modality=hit.modality.value,
            doc_id=hit.doc_id,
            text=hit.text or "(no text)",
        )
        return llm.chat([("user", prompt)])

    if workers > 1 and len(fresh) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            replies = list(pool.map(judge, fresh))
    else:
        replies = [judge(h) for h in fresh]
    accepted = []
    for hit, reply in zip(fresh, replies):
        verdict = _tag(reply, "verdict")
        if verdict is None:
            warnings.append(f"unparseable refine verdict for {hit.chunk_id}; rejected")
            continue
        if verdict.strip().lower() == "relevant":
            accepted.append(EvidenceItem(hit=hit, source_subquery=subquery, accepted_turn=turn))
    return accepted


_FLOAT_RE = re.compile(r"-?\d+(?:\.\d+)?")


def evaluate_sufficiency(
    evidence: EvidenceSet,
    question: str,
    llm: ChatModel,
    warnings: list[str] | None = None,
    prompts_dir: str | None = None,
) -> float:
    """Judged sufficiency in [0,1]; empty evidence is 0 without a model
    call, and an unparseable verdict maps to 0 (keep searching)."""
    warnings = warnings if warnings is not None else []
    if len(evidence) == 0:
        return 0.0
    digest = "\n".join(
        f"- [{item.chunk_id}] ({item.hit.modality.value}) {item.hit.text[:400]}"
        for item in evidence.items
    )
    reply = llm.chat(
        [("user", prompts.render("evaluator", override_dir=prompts_dir, question=question, evidence=digest))]
    )
    source = _tag(reply, "sufficiency") or reply
    m = _FLOAT_RE.search(source)
    if not m:
        warnings.append(f"unparseable sufficiency verdict: {reply[:80]!r}; treating as 0.0")
        return 0.0
    return min(1.0, max(0.0, float(m.group(0))))


def propose_followups(
    state: ResearchState, llm: ChatModel, prompts_dir: str | None = None
) -> tuple[list[str], list[str]]:
    """Ask for new search directions and for sub-queries now answered."""
    digest = "\n".join(f"- {item.hit.text[:300]}" for item in state.evidence.items)
    reply = llm.chat(
        [
            (
                "user",
                prompts.render(
                    "followup",
                    override_dir=prompts_dir,
                    question=state.question,
                    subqueries="\n".join(f"- {q}" for q in state.subqueries),
                    evidence=digest or "(none)",
                ),
            )
        ]
    )
    return _bullets(_tag(reply, "subqueries")), _bullets(_tag(reply, "answered"))


def research_loop(
    state: ResearchState,
    config: LoopConfig,
    runtime: AgentRuntime,
    sink: EventSink | None = None,
) -> ResearchState:
    """Run the plan once, then search-refine turns until the sufficiency
    threshold or the turn cap; leaves the state ready for reporting. Any
    agent hard-failure flips status to failed with the error preserved."""
    sink = sink or EventSink()
    if state.status is not ResearchStatus.PLANNING:
        raise ValueError(f"research_loop needs a fresh state, got status {state.status}")
    try:
        if config.use_planner:
            decision = plan(
                state.question,
                state.history,
                runtime.corpus_summaries,
                runtime.llm,
                warnings=state.warnings,
                prompts_dir=runtime.prompts_dir,
            )
        else:
            decision = default_plan(state.question, set(runtime.corpus_summaries))
        state.plan = decision
        state.subqueries = list(decision.subqueries)
        sink.emit(
            "plan_ready",
            doc_ids=sorted(decision.filtered_doc_ids),
            granularity=decision.granularity.value,
            subqueries=list(decision.subqueries),
            rationale=decision.rationale,
        )
        while True:
            state.turn += 1
            state.status = ResearchStatus.SEARCHING
            queries = list(state.subqueries)
            for q in queries:
                sink.emit("search_started", subquery=q, turn=state.turn)

            def run_search(q: str) -> RankedEvidence:
                return search_step(
                    q, decision, config.paradigm, runtime, config.k, config.context_budget
                )

            if config.workers > 1 and len(queries) > 1:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = list(pool.map(run_search, queries))
            else:
                results = [run_search(q) for q in queries]
            state.status = ResearchStatus.REFINING
            for q, ev in zip(queries, results):
                state.warnings.extend(ev.warnings)
                sink.emit("candidates_found", subquery=q, count=len(ev.hits), turn=state.turn)
                accepted = refine(
                    ev,
                    q,
                    state.evidence,
                    runtime.llm,
                    state.turn,
                    extractor=runtime.extractor if config.paradigm is Paradigm.VISION_ONLY else None,
                    workers=config.workers,
                    warnings=state.warnings,
                    prompts_dir=runtime.prompts_dir,
                )
                for item in accepted:
                    state.evidence.add(item)
                sink.emit(
                    "evidence_accepted",
                    subquery=q,
                    chunk_ids=[i.chunk_id for i in accepted],
                    total=len(state.evidence),
                    turn=state.turn,
                )
            state.status = ResearchStatus.EVALUATING
            state.sufficiency = evaluate_sufficiency(
                state.evidence,
                state.question,
                runtime.llm,
                warnings=state.warnings,
                prompts_dir=runtime.prompts_dir,
            )
            sink.emit("sufficiency", score=state.sufficiency, turn=state.turn)
            if state.sufficiency >= config.tau or state.turn >= config.t_max:
                break
            new, answered = propose_followups(state, runtime.llm, prompts_dir=runtime.prompts_dir)
            kept = [q for q in state.subqueries if q not in set(answered)]
            merged = kept + [q for q in new if q not in kept]
            state.subqueries = merged[:MAX_SUBQUERIES] if merged else list(state.subqueries)
        state.insufficient = len(state.evidence) == 0
        state.status = ResearchStatus.REPORTING
    except Exception as exc:
        state.status = ResearchStatus.FAILED
        state.error = f"{type(exc).__name__}: {exc}"
    return state


_IMG_RE = re.compile(r"^\[IMG:([^\]\s]+)\]$")
_CITE_RE = re.compile(r"\[CITE:([^\]\s]+)\]")


def _citation_for(item: EvidenceItem) -> Citation:
    prov = item.hit.provenance
    if prov and prov[0].bbox is not None:
        return Citation(item.doc_id, prov[0].page_no, prov[0].bbox, item.chunk_id)
    if prov:
        return Citation(item.doc_id, prov[0].page_no, None, item.chunk_id)
    return Citation(item.doc_id, None, None, item.chunk_id)


def report(
    question: str,
    evidence: EvidenceSet,
    llm: ChatModel,
    prompts_dir: str | None = None,
) -> Report:
    """Synthesize the final interleaved text-image answer.

    ``[CITE:chunk_id]`` markers become citations; ``[IMG:chunk_id]`` lines
    become image blocks. Markers naming chunks outside the evidence are
    dropped and the enclosing block is flagged unverified."""
    digest = "\n".join(
        f"- chunk_id={item.chunk_id} doc={item.doc_id} ({item.hit.modality.value})"
        f"{' [has image]' if item.hit.image_ref else ''}: {item.hit.text[:500]}"
        for item in evidence.items
    )
    reply = llm.chat(
        [
            (
                "user",
                prompts.render(
                    "reporter",
                    override_dir=prompts_dir,
                    question=question,
                    evidence=digest or "(no evidence found)",
                ),
            )
        ]
    )
    rep = Report(question_echo=question)
    paragraph: list[str] = []

    def flush_paragraph():
        if not paragraph:
            return
        raw = "\n".join(paragraph).strip()
        paragraph.clear()
        if not raw:
            return
        citations = []
        unverified = False
        for cid in _CITE_RE.findall(raw):
            item = evidence.get(cid)
            if item is None:
                rep.warnings.append(f"citation to unknown chunk {cid} dropped")
                unverified = True
                continue
            citations.append(_citation_for(item))
        text = _CITE_RE.sub("", raw)
        text = re.sub(r"[ \t]+", " ", text).strip()
        block = TextBlock(text=text, citations=tuple(citations), unverified=unverified)
        rep.answer_blocks.append(block)
        rep.citations.extend(citations)

    for line in reply.splitlines():
        img = _IMG_RE.match(line.strip())
        if img:
            flush_paragraph()
            cid = img.group(1)
            item = evidence.get(cid)
            if item is None or not item.hit.image_ref:
                rep.warnings.append(f"image marker for unknown or textual chunk {cid} dropped")
                continue
            citation = _citation_for(item)
            rep.answer_blocks.append(
                ImageBlock(chunk_id=cid, image_ref=item.hit.image_ref, citation=citation)
            )
            rep.citations.append(citation)
            continue
        if not line.strip():
            flush_paragraph()
            continue
        paragraph.append(line)
    flush_paragraph()
    return rep
