"""Independent brute-force reimplementation of the retrieval metrics and
randomized gold/hit fixture generators. Kept free of any imports from the
metric implementations it checks (only the data types are shared)."""

from __future__ import annotations

import numpy as np

from docresearch.chunking import GranularityLevel, Modality, Provenance
from docresearch.evalkit import BenchmarkItem
from docresearch.retrieval import EvidenceHit


def oracle_recall(hits, item: BenchmarkItem, k: int, level: str, threshold: float):
    """Literal restatement of the recall definitions."""
    top = list(hits)[:k]
    if level == "doc":
        gold = item.gold_doc_ids
        if not gold:
            return 1.0
        count = 0
        for doc in gold:
            if any(h.doc_id == doc for h in top):
                count += 1
        return count / len(gold)
    if level == "page":
        gold = item.gold_pages
        if not gold:
            return 1.0
        count = 0
        for doc, page in gold:
            found = False
            for h in top:
                if h.doc_id != doc:
                    continue
                for p in h.provenance:
                    if p.page_no == page:
                        found = True
            if found:
                count += 1
        return count / len(gold)
    if level == "layout":
        has_bbox = False
        for h in top:
            for p in h.provenance:
                if p.bbox is not None:
                    has_bbox = True
        if not has_bbox:
            return None  # oracle's NotApplicable
        if not item.gold_layouts:
            return 1.0
        count = 0
        for doc, page, gold_bbox in item.gold_layouts:
            gx0, gy0, gx1, gy1 = gold_bbox
            gold_area = (gx1 - gx0) * (gy1 - gy0)
            if gold_area <= 0:
                continue
            found = False
            for h in top:
                if h.doc_id != doc:
                    continue
                for p in h.provenance:
                    if p.page_no != page or p.bbox is None:
                        continue
                    x0, y0, x1, y1 = p.bbox
                    iw = min(x1, gx1) - max(x0, gx0)
                    ih = min(y1, gy1) - max(y0, gy0)
                    inter = max(0.0, iw) * max(0.0, ih)
                    if inter / gold_area >= threshold:
                        found = True
            if found:
                count += 1
        return count / len(item.gold_layouts)
    raise ValueError(level)


def oracle_prf(predicted: set, gold: set):
    tp = len(predicted & gold)
    if len(predicted) == 0:
        p = 1.0 if len(gold) == 0 else 0.0
    else:
        p = tp / len(predicted)
    if len(gold) == 0:
        r = 1.0 if len(predicted) == 0 else 0.0
    else:
        r = tp / len(gold)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def _rand_bbox(rng, span=100.0):
    x0 = rng.uniform(0, span - 2)
    y0 = rng.uniform(0, span - 2)
    return (x0, y0, x0 + rng.uniform(1, span - x0), y0 + rng.uniform(1, span - y0))


def random_fixture(rng: np.random.Generator, balanced: bool = True):
    """One random (item, hits) pair.

    Balanced fixtures give every gold doc the same page count and every
    gold page the same layout count, which makes the doc >= page >= layout
    containment chain a structural theorem.
    """
    n_gold_docs = int(rng.integers(1, 4))
    pages_per_doc = int(rng.integers(1, 4)) if balanced else None
    layouts_per_page = int(rng.integers(1, 3)) if balanced else None
    gold_docs = [f"g{i}" for i in range(n_gold_docs)]
    negatives = [f"n{i}" for i in range(int(rng.integers(0, 4)))]
    gold_pages = []
    gold_layouts = []
    for doc in gold_docs:
        n_pages = pages_per_doc if balanced else int(rng.integers(1, 4))
        for page in range(1, n_pages + 1):
            gold_pages.append((doc, page))
            n_lay = layouts_per_page if balanced else int(rng.integers(1, 3))
            for _ in range(n_lay):
                gold_layouts.append((doc, page, _rand_bbox(rng)))
    item = BenchmarkItem(
        qid=f"q{rng.integers(1e6)}",
        question="q",
        candidate_doc_ids=frozenset(gold_docs + negatives),
        gold_doc_ids=frozenset(gold_docs),
        gold_pages=frozenset(gold_pages),
        gold_layouts=tuple(gold_layouts),
        checklist=("fact",),
    )
    all_docs = gold_docs + negatives
    hits = []
    for i in range(int(rng.integers(1, 25))):
        doc = all_docs[int(rng.integers(len(all_docs)))]
        prov = tuple(
            Provenance(int(rng.integers(1, 5)), _rand_bbox(rng), f"e{i}-{j}")
            for j in range(int(rng.integers(1, 3)))
        )
        hits.append(
            EvidenceHit(
                chunk_id=f"h{i}",
                doc_id=doc,
                granularity=GranularityLevel.CHUNK,
                modality=Modality.TEXT,
                text="",
                image_ref=None,
                provenance=prov,
                score=float(rng.uniform()),
                rank=i + 1,
            )
        )
    return item, hits
