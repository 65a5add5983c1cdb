"""Benchmark loading and the evaluation metric suite.

Retrieval recall@k at three granularities (document and page by exact id
matching, layout by bounding-box overlap against gold layouts),
document-selection precision/recall/F1, and checklist-based answer
accuracy where an answer counts as correct only when every checklist
item is judged satisfied. Benchmark files are line-delimited JSON, one
file per domain.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .agents import ChatModel, DialogTurn, Report, report_to_dict
from .chunking import GranularityLevel
from .retrieval import EvidenceHit
from . import prompts

DEFAULT_OVERLAP_THRESHOLD = 0.5


class EvalError(ValueError):
    pass


class NotApplicable(Exception):
    """The metric cannot be computed for these hits (e.g. layout recall
    over page-granularity hits that carry no bounding boxes)."""


@dataclass(frozen=True)
class BenchmarkItem:
    qid: str
    question: str
    candidate_doc_ids: frozenset[str]
    gold_doc_ids: frozenset[str]
    gold_pages: frozenset[tuple[str, int]]
    gold_layouts: tuple[tuple[str, int, tuple[float, float, float, float]], ...]
    checklist: tuple[str, ...]
    history: tuple[DialogTurn, ...] = ()
    gold_granularity: GranularityLevel = GranularityLevel.CHUNK
    gold_subqueries: tuple[str, ...] = ()
    reference_short: str = ""
    reference_long: str = ""
    language: str = "en"
    domain: str = ""

    def __post_init__(self):
        if not self.gold_doc_ids <= self.candidate_doc_ids:
            raise EvalError(f"{self.qid}: gold docs not within candidate docs")
        if any(doc not in self.gold_doc_ids for doc, _ in self.gold_pages):
            raise EvalError(f"{self.qid}: gold page outside gold docs")
        if any((doc, page) not in self.gold_pages for doc, page, _ in self.gold_layouts):
            raise EvalError(f"{self.qid}: gold layout outside gold pages")


def benchmark_item_from_dict(raw: dict, default_domain: str = "") -> BenchmarkItem:
    ref = raw.get("reference_answers", {})
    return BenchmarkItem(
        qid=raw["qid"],
        question=raw["question"],
        history=tuple(DialogTurn(q, a) for q, a in raw.get("history", [])),
        candidate_doc_ids=frozenset(raw["candidate_doc_ids"]),
        gold_doc_ids=frozenset(raw["gold_doc_ids"]),
        gold_pages=frozenset((d, int(p)) for d, p in raw.get("gold_pages", [])),
        gold_layouts=tuple(
            (d, int(p), tuple(float(v) for v in bbox)) for d, p, bbox in raw.get("gold_layouts", [])
        ),
        gold_granularity=GranularityLevel(raw.get("gold_granularity", "chunk")),
        gold_subqueries=tuple(raw.get("gold_subqueries", [])),
        checklist=tuple(raw.get("checklist", [])),
        reference_short=ref.get("short", ""),
        reference_long=ref.get("long", ""),
        language=raw.get("language", "en"),
        domain=raw.get("domain", default_domain),
    )


def load_benchmark(path: str | Path) -> list[BenchmarkItem]:
    """One line-delimited JSON record per item; domain defaults to the
    file stem."""
    path = Path(path)
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                items.append(benchmark_item_from_dict(json.loads(line), default_domain=path.stem))
            except (KeyError, ValueError) as exc:
                raise EvalError(f"{path}:{line_no}: {exc}") from exc
    return items


# -- metrics -----------------------------------------------------------------


def _bbox_intersection(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0.0, w) * max(0.0, h)


def _bbox_area(b) -> float:
    return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])


def recall_at_k(
    hits: Sequence[EvidenceHit],
    item: BenchmarkItem,
    k: int,
    level: str,
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> float:
    """Fraction of gold annotations recalled by the top-k hits.

    doc/page match by exact ids over the hits' provenance; a gold layout
    is recalled when a same-page provenance bbox covers at least
    ``overlap_threshold`` of its area. Raises NotApplicable for layout
    recall when no top-k hit carries any bounding box.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < overlap_threshold <= 1:
        raise ValueError("overlap_threshold must be in (0, 1]")
    top = list(hits)[:k]
    if level == "doc":
        if not item.gold_doc_ids:
            return 1.0
        got = {h.doc_id for h in top}
        return len(item.gold_doc_ids & got) / len(item.gold_doc_ids)
    if level == "page":
        if not item.gold_pages:
            return 1.0
        got_pages = {(h.doc_id, p.page_no) for h in top for p in h.provenance}
        return len(item.gold_pages & got_pages) / len(item.gold_pages)
    if level == "layout":
        if not any(p.bbox is not None for h in top for p in h.provenance):
            raise NotApplicable("no top-k hit carries bounding boxes")
        if not item.gold_layouts:
            return 1.0
        recalled = 0
        for doc_id, page_no, gold_bbox in item.gold_layouts:
            area = _bbox_area(gold_bbox)
            if area <= 0:
                continue
            hit_it = any(
                h.doc_id == doc_id
                and p.page_no == page_no
                and p.bbox is not None
                and _bbox_intersection(p.bbox, gold_bbox) / area >= overlap_threshold
                for h in top
                for p in h.provenance
            )
            recalled += int(hit_it)
        return recalled / len(item.gold_layouts)
    raise ValueError(f"unknown level {level!r}")


def doc_selection_prf(predicted: set[str] | frozenset[str], gold: set[str] | frozenset[str]):
    """Standard set precision/recall/F1. Empty predicted scores 0 unless
    gold is also empty, which scores perfect."""
    inter = len(set(predicted) & set(gold))
    if not predicted:
        precision = 1.0 if not gold else 0.0
    else:
        precision = inter / len(predicted)
    if not gold:
        recall = 1.0 if not predicted else 0.0
    else:
        recall = inter / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def judge_answer(
    report: Report,
    item: BenchmarkItem,
    llm: ChatModel,
    prompts_dir: str | None = None,
) -> tuple[list[bool], int]:
    """One verdict per checklist entry; accuracy is 1 only when every
    entry is satisfied. Unparseable verdicts count as unsatisfied."""
    if not item.checklist:
        raise EvalError(f"{item.qid}: empty checklist")
    answer = report.text()
    verdicts = []
    for entry in item.checklist:
        reply = llm.chat(
            [
                (
                    "user",
                    prompts.render(
                        "judge",
                        override_dir=prompts_dir,
                        question=item.question,
                        item=entry,
                        answer=answer or "(empty answer)",
                    ),
                )
            ]
        )
        verdict = _judge_verdict(reply)
        verdicts.append(verdict)
    return verdicts, int(all(verdicts))


def _judge_verdict(reply: str) -> bool:
    import re

    m = re.search(r"<verdict>(.*?)</verdict>", reply, re.DOTALL | re.IGNORECASE)
    if not m:
        return False
    return m.group(1).strip().lower() == "satisfied"


# -- benchmark runner ---------------------------------------------------------


@dataclass
class ItemOutcome:
    """What the engine hands back for one benchmark question."""

    plan_doc_ids: frozenset[str] | None
    evidence_hits: list[EvidenceHit]
    report: Report | None
    events: list = field(default_factory=list)
    transcript: list = field(default_factory=list)
    error: str = ""


@dataclass
class ItemResult:
    qid: str
    language: str
    domain: str
    accuracy: int
    verdicts: list[bool]
    doc_precision: float
    doc_recall: float
    doc_f1: float
    recall_doc: float | None
    recall_page: float | None
    recall_layout: float | None
    passage_count: int
    error: str = ""


@dataclass
class EvalMetrics:
    accuracy: float = 0.0
    doc_precision: float = 0.0
    doc_recall: float = 0.0
    doc_f1: float = 0.0
    recall_doc: float = 0.0
    recall_page: float = 0.0
    recall_layout: float | None = None
    passage_count: float = 0.0
    n_items: int = 0


@dataclass
class RunResult:
    overall: EvalMetrics
    by_language: dict[str, EvalMetrics]
    by_domain: dict[str, EvalMetrics]
    items: list[ItemResult]


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _aggregate(results: list[ItemResult]) -> EvalMetrics:
    layout_vals = [r.recall_layout for r in results if r.recall_layout is not None]
    return EvalMetrics(
        accuracy=_mean([float(r.accuracy) for r in results]),
        doc_precision=_mean([r.doc_precision for r in results]),
        doc_recall=_mean([r.doc_recall for r in results]),
        doc_f1=_mean([r.doc_f1 for r in results]),
        recall_doc=_mean([r.recall_doc for r in results if r.recall_doc is not None]),
        recall_page=_mean([r.recall_page for r in results if r.recall_page is not None]),
        recall_layout=_mean(layout_vals) if layout_vals else None,
        passage_count=_mean([float(r.passage_count) for r in results]),
        n_items=len(results),
    )


def run_benchmark(
    items: Sequence[BenchmarkItem],
    engine,
    judge_llm: ChatModel,
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
    out_dir: str | Path | None = None,
    prompts_dir: str | None = None,
) -> RunResult:
    """Drive the full pipeline per item and aggregate metrics overall and
    by language/domain. Per-item failures are recorded and the run
    continues; the optional ledger directory gets one replayable JSON
    record per item (prompts, verdicts, hits)."""
    results: list[ItemResult] = []
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    for item in items:
        outcome: ItemOutcome = engine.run_benchmark_item(item)
        verdicts: list[bool] = []
        accuracy = 0
        if outcome.report is not None and not outcome.error:
            try:
                verdicts, accuracy = judge_answer(outcome.report, item, judge_llm, prompts_dir)
            except EvalError as exc:
                outcome.error = str(exc)
        if outcome.plan_doc_ids is not None:
            p, r, f1 = doc_selection_prf(outcome.plan_doc_ids, item.gold_doc_ids)
        else:
            p = r = f1 = 0.0
        hits = outcome.evidence_hits
        n_psg = len(hits)
        recalls: dict[str, float | None] = {}
        for level in ("doc", "page", "layout"):
            if not hits:
                recalls[level] = 0.0
                continue
            try:
                recalls[level] = recall_at_k(hits, item, max(n_psg, 1), level, overlap_threshold)
            except NotApplicable:
                recalls[level] = None
        result = ItemResult(
            qid=item.qid,
            language=item.language,
            domain=item.domain,
            accuracy=accuracy,
            verdicts=verdicts,
            doc_precision=p,
            doc_recall=r,
            doc_f1=f1,
            recall_doc=recalls["doc"],
            recall_page=recalls["page"],
            recall_layout=recalls["layout"],
            passage_count=n_psg,
            error=outcome.error,
        )
        results.append(result)
        if out_path:
            ledger = {
                "qid": item.qid,
                "result": asdict(result),
                "plan_doc_ids": sorted(outcome.plan_doc_ids) if outcome.plan_doc_ids else None,
                "hits": [
                    {"chunk_id": h.chunk_id, "doc_id": h.doc_id, "rank": h.rank, "score": h.score}
                    for h in hits
                ],
                "verdicts": verdicts,
                "report": report_to_dict(outcome.report) if outcome.report else None,
                "events": [
                    {"seq": e.seq, "type": e.type, "data": e.data} for e in outcome.events
                ],
                "transcript": outcome.transcript,
                "error": outcome.error,
            }
            with open(out_path / f"{item.qid}.json", "w", encoding="utf-8") as fh:
                json.dump(ledger, fh, ensure_ascii=False, indent=2, sort_keys=True)
    by_language: dict[str, list[ItemResult]] = {}
    by_domain: dict[str, list[ItemResult]] = {}
    for r in results:
        by_language.setdefault(r.language, []).append(r)
        by_domain.setdefault(r.domain, []).append(r)
    return RunResult(
        overall=_aggregate(results),
        by_language={k: _aggregate(v) for k, v in sorted(by_language.items())},
        by_domain={k: _aggregate(v) for k, v in sorted(by_domain.items())},
        items=results,
    )


