"""Canonical document model: typed layout trees with ingestion validation.

A document is an ordered list of pages, each an ordered list of layout
elements (text, title, table, figure, equation) with pixel bounding boxes.
Documents are immutable after ingestion except for the enrichment fields
(per-element visual descriptions and the document summary), which are
rewritten wholesale by `enrich_document`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

SCHEMA_ID = "docresearch/v1"

# Joins element texts within a page; form-feed separates pages so offsets
# can be mapped back to pages.
ELEMENT_SEP = "\n"
PAGE_SEP = "\f"


class Language(str, Enum):
    EN = "en"
    ZH = "zh"
    OTHER = "other"


class ElementKind(str, Enum):
    TEXT = "text"
    TITLE = "title"
    TABLE = "table"
    FIGURE = "figure"
    EQUATION = "equation"


VISUAL_KINDS = frozenset({ElementKind.TABLE, ElementKind.FIGURE})

BBox = tuple[float, float, float, float]


class IngestError(ValueError):
    """Raised when an ingestion record violates the document schema."""

    def __init__(self, field_name: str, reason: str):
        self.field = field_name
        self.reason = reason
        super().__init__(f"{field_name}: {reason}")


class EnrichError(RuntimeError):
    """Raised when enrichment fails permanently for one element.

    Carries the partially enriched document so completed work is not lost.
    """

    def __init__(self, element_id: str, partial: "Document", cause: Exception | None = None):
        self.element_id = element_id
        self.partial = partial
        self.cause = cause
        super().__init__(f"enrichment failed for element {element_id}: {cause}")


@dataclass(frozen=True)
class LayoutElement:
    element_id: str
    kind: ElementKind
    bbox: BBox
    text: str = ""
    crop_ref: str | None = None
    coarse_summary: str = ""
    fine_description: str = ""
    section_path: tuple[str, ...] = ()
    enriched: bool = False  # completion flag for partial enrichment


@dataclass(frozen=True)
class PageRecord:
    page_no: int
    width_px: int
    height_px: int
    screenshot_ref: str | None = None
    elements: tuple[LayoutElement, ...] = ()


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    language: Language
    pages: tuple[PageRecord, ...]
    full_text: str
    summary: str = ""
    source_path: str = field(default="", compare=False)

    def iter_elements(self) -> Iterable[tuple[PageRecord, LayoutElement]]:
        for page in self.pages:
            for el in page.elements:
                yield page, el

    def element_by_id(self, element_id: str) -> LayoutElement | None:
        for _, el in self.iter_elements():
            if el.element_id == element_id:
                return el
        return None

    def resolve_asset(self, ref: str) -> Path:
        """Resolve an asset reference relative to the source file's directory."""
        base = Path(self.source_path).parent if self.source_path else Path(".")
        return base / ref


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    avg_pages: float
    avg_words: float
    avg_figures: float
    avg_tables: float
    avg_equations: float


def build_full_text(pages: Sequence[PageRecord]) -> str:
    page_texts = [ELEMENT_SEP.join(el.text for el in page.elements) for page in pages]
    return PAGE_SEP.join(page_texts)


def _parse_bbox(raw, page: dict, element_id: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise IngestError("bbox", f"element {element_id}: expected [x0,y0,x1,y1]")
    try:
        x0, y0, x1, y1 = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise IngestError("bbox", f"element {element_id}: non-numeric corner")
    if not (x0 < x1 and y0 < y1):
        raise IngestError("bbox", "inverted corners")
    w, h = page.get("width_px"), page.get("height_px")
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise IngestError("bbox", f"element {element_id}: outside page bounds {w}x{h}")
    return (x0, y0, x1, y1)


def _parse_element(raw: dict, page: dict) -> LayoutElement:
    element_id = raw.get("element_id")
    if not element_id or not isinstance(element_id, str):
        raise IngestError("element_id", "missing or empty")
    try:
        kind = ElementKind(raw.get("kind"))
    except ValueError:
        raise IngestError("kind", f"element {element_id}: unknown kind {raw.get('kind')!r}")
    bbox = _parse_bbox(raw.get("bbox"), page, element_id)
    text = raw.get("text") or ""
    if kind is ElementKind.TEXT and not text:
        raise IngestError("text", f"element {element_id}: text element with empty text")
    crop = raw.get("crop")
    if kind in VISUAL_KINDS and not crop:
        raise IngestError("crop", f"element {element_id}: {kind.value} without crop asset")
    section_path = raw.get("section_path") or []
    if not isinstance(section_path, list) or not all(isinstance(s, str) for s in section_path):
        raise IngestError("section_path", f"element {element_id}: expected list of strings")
    return LayoutElement(
        element_id=element_id,
        kind=kind,
        bbox=bbox,
        text=text,
        crop_ref=crop,
        coarse_summary=raw.get("coarse_summary", ""),
        fine_description=raw.get("fine_description", ""),
        section_path=tuple(section_path),
        enriched=bool(raw.get("enriched", False)),
    )


def _parse_page(raw: dict) -> PageRecord:
    page_no = raw.get("page_no")
    if not isinstance(page_no, int) or page_no < 1:
        raise IngestError("page_no", f"expected positive integer, got {page_no!r}")
    for dim in ("width_px", "height_px"):
        v = raw.get(dim)
        if not isinstance(v, int) or v <= 0:
            raise IngestError(dim, f"page {page_no}: expected positive integer, got {v!r}")
    elements = tuple(_parse_element(e, raw) for e in raw.get("elements", []))
    return PageRecord(
        page_no=page_no,
        width_px=raw["width_px"],
        height_px=raw["height_px"],
        screenshot_ref=raw.get("screenshot"),
        elements=elements,
    )


def ingest_document(raw: dict, source_path: str | Path = "") -> Document:
    """Validate and normalize one ingestion record into a Document.

    Pages are re-sorted by ascending page number; per-page reading order is
    preserved as given. Asset references stay relative; they resolve against
    ``source_path``'s directory. Raises IngestError on any schema violation.
    """
    if raw.get("schema") != SCHEMA_ID:
        raise IngestError("schema", f"expected {SCHEMA_ID!r}, got {raw.get('schema')!r}")
    doc_id = raw.get("doc_id")
    if not doc_id or not isinstance(doc_id, str):
        raise IngestError("doc_id", "missing or empty")
    try:
        language = Language(raw.get("language", "other"))
    except ValueError:
        raise IngestError("language", f"unknown language {raw.get('language')!r}")
    pages_raw = raw.get("pages")
    if not isinstance(pages_raw, list):
        raise IngestError("pages", "expected a list")

    pages = sorted((_parse_page(p) for p in pages_raw), key=lambda p: p.page_no)
    seen_pages: set[int] = set()
    seen_elements: set[str] = set()
    for page in pages:
        if page.page_no in seen_pages:
            raise IngestError("page_no", f"duplicate page {page.page_no}")
        seen_pages.add(page.page_no)
        for el in page.elements:
            if el.element_id in seen_elements:
                raise IngestError("element_id", f"duplicate element_id {el.element_id}")
            seen_elements.add(el.element_id)

    pages_t = tuple(pages)
    return Document(
        doc_id=doc_id,
        title=raw.get("title", ""),
        language=language,
        pages=pages_t,
        full_text=build_full_text(pages_t),
        summary=raw.get("summary", ""),
        source_path=str(source_path),
    )


def load_document(path: str | Path) -> Document:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return ingest_document(raw, source_path=path)


def serialize_document(doc: Document) -> dict:
    """Serialize to the ingestion schema plus enrichment fields."""
    pages = []
    for page in doc.pages:
        elements = []
        for el in page.elements:
            rec = {
                "element_id": el.element_id,
                "kind": el.kind.value,
                "bbox": list(el.bbox),
                "text": el.text,
                "crop": el.crop_ref,
                "section_path": list(el.section_path),
            }
            if el.enriched:
                rec["coarse_summary"] = el.coarse_summary
                rec["fine_description"] = el.fine_description
                rec["enriched"] = True
            elements.append(rec)
        pages.append(
            {
                "page_no": page.page_no,
                "width_px": page.width_px,
                "height_px": page.height_px,
                "screenshot": page.screenshot_ref,
                "elements": elements,
            }
        )
    rec = {
        "schema": SCHEMA_ID,
        "doc_id": doc.doc_id,
        "title": doc.title,
        "language": doc.language.value,
        "pages": pages,
    }
    if doc.summary:
        rec["summary"] = doc.summary
    return rec


def enrich_document(doc: Document, gateway) -> Document:
    """Fill visual descriptions and the document summary via model calls.

    Every table/figure element gets a coarse summary and a fine description
    from its crop; the document gains a summary of its full text. Re-running
    overwrites previous values. On a permanent per-element failure, raises
    EnrichError carrying the partially enriched document (elements completed
    so far keep their ``enriched`` flag).
    """
    new_pages: list[PageRecord] = []
    partial_pages = list(doc.pages)
    for pi, page in enumerate(doc.pages):
        new_elements: list[LayoutElement] = []
        for ei, el in enumerate(page.elements):
            if el.kind in VISUAL_KINDS:
                crop = str(doc.resolve_asset(el.crop_ref)) if el.crop_ref else ""
                try:
                    coarse = gateway.describe(crop, "coarse")
                    fine = gateway.describe(crop, "fine")
                except Exception as exc:
                    partial_pages[pi] = replace(
                        page, elements=tuple(new_elements) + page.elements[ei:]
                    )
                    partial = replace(doc, pages=tuple(partial_pages[: pi + 1]) + doc.pages[pi + 1 :])
                    raise EnrichError(el.element_id, partial, exc)
                el = replace(el, coarse_summary=coarse, fine_description=fine, enriched=True)
            new_elements.append(el)
        new_page = replace(page, elements=tuple(new_elements))
        new_pages.append(new_page)
        partial_pages[pi] = new_page
    summary = gateway.summarize(doc.full_text)
    return replace(doc, pages=tuple(new_pages), summary=summary)


def corpus_stats(corpus: Sequence[Document]) -> CorpusStats:
    """Per-document averages over a collection; zeros for an empty corpus."""
    n = len(corpus)
    if n == 0:
        return CorpusStats(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    pages = words = figures = tables = equations = 0
    for doc in corpus:
        pages += len(doc.pages)
        words += len(doc.full_text.split())
        for _, el in doc.iter_elements():
            if el.kind is ElementKind.FIGURE:
                figures += 1
            elif el.kind is ElementKind.TABLE:
                tables += 1
            elif el.kind is ElementKind.EQUATION:
                equations += 1
    return CorpusStats(
        doc_count=n,
        avg_pages=pages / n,
        avg_words=words / n,
        avg_figures=figures / n,
        avg_tables=tables / n,
        avg_equations=equations / n,
    )
