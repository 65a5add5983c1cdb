"""Layout-aware chunking and the four retrieval granularities.

Deep chunking merges text elements greedily in reading order, closing a
chunk at the token cap, a page boundary, or a section change; every
table/figure/equation becomes an independent chunk with its crop image.
Shallow chunking is the fixed-width character baseline over OCR full text.
On top of element chunks, each document also gets page-level, full-text,
and summary chunks.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

from .corpus import (
    ELEMENT_SEP,
    PAGE_SEP,
    BBox,
    Document,
    ElementKind,
    LayoutElement,
    PageRecord,
)

DEFAULT_MAX_CHUNK_TOKENS = 300
DEFAULT_MIN_IMAGE_BYTES = 10_240
DEFAULT_CHUNK_CHARS = 140


class GranularityLevel(str, Enum):
    CHUNK = "chunk"
    PAGE = "page"
    FULL = "full"
    SUMMARY = "summary"


class Modality(str, Enum):
    TEXT = "text"
    TABLE = "table"
    FIGURE = "figure"
    EQUATION = "equation"
    PAGE_IMAGE = "page_image"


_ELEMENT_MODALITY = {
    ElementKind.TEXT: Modality.TEXT,
    ElementKind.TITLE: Modality.TEXT,
    ElementKind.TABLE: Modality.TABLE,
    ElementKind.FIGURE: Modality.FIGURE,
    ElementKind.EQUATION: Modality.EQUATION,
}


class ChunkError(RuntimeError):
    def __init__(self, element_id: str, reason: str):
        self.element_id = element_id
        super().__init__(f"element {element_id}: {reason}")


class GranularityError(ValueError):
    def __init__(self, doc_id: str, reason: str):
        self.doc_id = doc_id
        super().__init__(f"{doc_id}: {reason}")


@dataclass(frozen=True)
class Provenance:
    page_no: int
    bbox: BBox | None
    element_id: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    granularity: GranularityLevel
    modality: Modality
    text: str
    image_ref: str | None = None
    provenance: tuple[Provenance, ...] = ()
    token_count: int = 0


# CJK unified ideographs plus extension A and compatibility block.
_CJK_RE = re.compile(r"[㐀-䶿一-鿿豈-﫿]")


def count_tokens(text: str) -> int:
    """Whitespace-and-CJK-aware token count: each CJK codepoint is one
    token, remaining text is split on whitespace."""
    cjk = len(_CJK_RE.findall(text))
    rest = _CJK_RE.sub(" ", text)
    return cjk + len(rest.split())


def _chunk_id(doc_id: str, granularity: GranularityLevel, first: str, last: str) -> str:
    key = f"{doc_id}\x00{granularity.value}\x00{first}\x00{last}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def _visual_chunk_text(el: LayoutElement) -> str:
    parts = [p for p in (el.coarse_summary, el.fine_description) if p]
    if parts:
        return "\n".join(parts)
    return el.text


def _element_chunk(doc: Document, page: PageRecord, el: LayoutElement) -> Chunk:
    modality = _ELEMENT_MODALITY[el.kind]
    text = _visual_chunk_text(el) if modality in (Modality.TABLE, Modality.FIGURE) else el.text
    return Chunk(
        chunk_id=_chunk_id(doc.doc_id, GranularityLevel.CHUNK, el.element_id, el.element_id),
        doc_id=doc.doc_id,
        granularity=GranularityLevel.CHUNK,
        modality=modality,
        text=text,
        image_ref=el.crop_ref,
        provenance=(Provenance(page.page_no, el.bbox, el.element_id),),
        token_count=count_tokens(text),
    )


@dataclass
class _TextRun:
    page_no: int
    section: tuple[str, ...]
    elements: list[LayoutElement] = field(default_factory=list)
    tokens: int = 0

    def flush(self, doc: Document) -> Chunk:
        text = ELEMENT_SEP.join(el.text for el in self.elements)
        return Chunk(
            chunk_id=_chunk_id(
                doc.doc_id,
                GranularityLevel.CHUNK,
                self.elements[0].element_id,
                self.elements[-1].element_id,
            ),
            doc_id=doc.doc_id,
            granularity=GranularityLevel.CHUNK,
            modality=Modality.TEXT,
            text=text,
            provenance=tuple(
                Provenance(self.page_no, el.bbox, el.element_id) for el in self.elements
            ),
            token_count=count_tokens(text),
        )


def chunk_document_deep(
    doc: Document,
    max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS,
    min_image_bytes: int = DEFAULT_MIN_IMAGE_BYTES,
) -> list[Chunk]:
    """Layout-aware chunking of a parsed document.

    Text runs close at the token cap, page boundaries, and section changes;
    a single element over the cap is kept whole (bbox traceability beats
    the cap). Figure chunks whose crop asset is under ``min_image_bytes``
    are dropped. Raises ChunkError for a table/figure whose crop asset file
    is missing.
    """
    if max_chunk_tokens <= 0:
        raise ValueError("max_chunk_tokens must be positive")
    chunks: list[Chunk] = []
    run: _TextRun | None = None

    def close_run():
        nonlocal run
        if run is not None and run.elements:
            chunks.append(run.flush(doc))
        run = None

    for page in doc.pages:
        close_run()  # page boundary
        for el in page.elements:
            modality = _ELEMENT_MODALITY[el.kind]
            if modality is Modality.TEXT:
                tokens = count_tokens(el.text)
                if run is not None and (
                    run.section != el.section_path or run.tokens + tokens > max_chunk_tokens
                ):
                    close_run()
                if run is None:
                    run = _TextRun(page.page_no, el.section_path)
                run.elements.append(el)
                run.tokens += tokens
                if run.tokens >= max_chunk_tokens:
                    close_run()
                continue
            close_run()  # visual elements interrupt the run
            if el.kind in (ElementKind.TABLE, ElementKind.FIGURE):
                crop_path = doc.resolve_asset(el.crop_ref)
                if not crop_path.is_file():
                    raise ChunkError(el.element_id, f"missing crop asset {el.crop_ref}")
                if el.kind is ElementKind.FIGURE and crop_path.stat().st_size < min_image_bytes:
                    continue  # decorative / insignificant graphic
            chunks.append(_element_chunk(doc, page, el))
    close_run()
    return chunks


def _page_offsets(doc: Document) -> list[tuple[int, int, int]]:
    """(start, end, page_no) spans of each page's text inside full_text."""
    spans = []
    pos = 0
    for i, page in enumerate(doc.pages):
        text = ELEMENT_SEP.join(el.text for el in page.elements)
        end = pos + len(text)
        spans.append((pos, end, page.page_no))
        pos = end + len(PAGE_SEP)
    return spans


def chunk_document_shallow(doc: Document, chunk_chars: int = DEFAULT_CHUNK_CHARS) -> list[Chunk]:
    """Fixed-width character windows over full text (OCR baseline).

    Provenance is approximated to the page(s) each window spans, with
    full-page bboxes.
    """
    if chunk_chars <= 0:
        raise ValueError("chunk_chars must be positive")
    text = doc.full_text
    if not text:
        return []
    spans = _page_offsets(doc)
    sizes = {p.page_no: (p.width_px, p.height_px) for p in doc.pages}
    chunks = []
    for start in range(0, len(text), chunk_chars):
        window = text[start : start + chunk_chars]
        end = start + len(window)
        prov = []
        for s, e, page_no in spans:
            if s < end and start < max(e, s + 1):  # overlap, empty pages count at their start
                w, h = sizes[page_no]
                prov.append(Provenance(page_no, (0.0, 0.0, float(w), float(h)), f"page-{page_no}"))
        if not prov:
            # window sits entirely on a page separator: attribute to the page before it
            page_no = next(pn for s, e, pn in reversed(spans) if s <= start)
            w, h = sizes[page_no]
            prov.append(Provenance(page_no, (0.0, 0.0, float(w), float(h)), f"page-{page_no}"))
        chunks.append(
            Chunk(
                chunk_id=_chunk_id(doc.doc_id, GranularityLevel.CHUNK, str(start), str(end)),
                doc_id=doc.doc_id,
                granularity=GranularityLevel.CHUNK,
                modality=Modality.TEXT,
                text=window,
                provenance=tuple(prov),
                token_count=count_tokens(window),
            )
        )
    return chunks


def build_granularities(
    doc: Document,
    chunks: list[Chunk],
    levels: tuple[GranularityLevel, ...] = (
        GranularityLevel.PAGE,
        GranularityLevel.FULL,
        GranularityLevel.SUMMARY,
    ),
) -> list[Chunk]:
    """Page, full-text, and summary chunks for one document.

    Each page yields a text variant (its elements' text, with visual
    descriptions appended) and, when a screenshot exists, a page_image
    variant. Raises GranularityError when the summary level is requested
    but the document summary is absent.
    """
    if GranularityLevel.SUMMARY in levels and not doc.summary:
        raise GranularityError(doc.doc_id, "summary absent; enrich before building granularities")
    out: list[Chunk] = []
    if GranularityLevel.PAGE not in levels:
        pages: tuple[PageRecord, ...] = ()
    else:
        pages = doc.pages
    for page in pages:
        parts = [el.text for el in page.elements if el.text]
        parts += [
            desc
            for el in page.elements
            for desc in (el.coarse_summary, el.fine_description)
            if desc
        ]
        if page.elements:
            text = ELEMENT_SEP.join(parts)
            out.append(
                Chunk(
                    chunk_id=_chunk_id(
                        doc.doc_id,
                        GranularityLevel.PAGE,
                        page.elements[0].element_id,
                        page.elements[-1].element_id,
                    ),
                    doc_id=doc.doc_id,
                    granularity=GranularityLevel.PAGE,
                    modality=Modality.TEXT,
                    text=text,
                    provenance=tuple(
                        Provenance(page.page_no, el.bbox, el.element_id) for el in page.elements
                    ),
                    token_count=count_tokens(text),
                )
            )
        if page.screenshot_ref:
            out.append(
                Chunk(
                    chunk_id=_chunk_id(
                        doc.doc_id, GranularityLevel.PAGE, f"page-{page.page_no}", "image"
                    ),
                    doc_id=doc.doc_id,
                    granularity=GranularityLevel.PAGE,
                    modality=Modality.PAGE_IMAGE,
                    text="",
                    image_ref=page.screenshot_ref,
                    provenance=(Provenance(page.page_no, None, f"page-{page.page_no}"),),
                )
            )
    if GranularityLevel.FULL in levels:
        out.append(
            Chunk(
                chunk_id=_chunk_id(doc.doc_id, GranularityLevel.FULL, "full", "full"),
                doc_id=doc.doc_id,
                granularity=GranularityLevel.FULL,
                modality=Modality.TEXT,
                text=doc.full_text,
                token_count=count_tokens(doc.full_text),
            )
        )
    if GranularityLevel.SUMMARY in levels:
        out.append(
            Chunk(
                chunk_id=_chunk_id(doc.doc_id, GranularityLevel.SUMMARY, "summary", "summary"),
                doc_id=doc.doc_id,
                granularity=GranularityLevel.SUMMARY,
                modality=Modality.TEXT,
                text=doc.summary,
                token_count=count_tokens(doc.summary),
            )
        )
    return out


def chunk_to_dict(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "granularity": chunk.granularity.value,
        "modality": chunk.modality.value,
        "text": chunk.text,
        "image_ref": chunk.image_ref,
        "provenance": [
            [p.page_no, list(p.bbox) if p.bbox else None, p.element_id] for p in chunk.provenance
        ],
        "token_count": chunk.token_count,
    }


def chunk_from_dict(raw: dict) -> Chunk:
    return Chunk(
        chunk_id=raw["chunk_id"],
        doc_id=raw["doc_id"],
        granularity=GranularityLevel(raw["granularity"]),
        modality=Modality(raw["modality"]),
        text=raw["text"],
        image_ref=raw.get("image_ref"),
        provenance=tuple(
            Provenance(p[0], tuple(p[1]) if p[1] else None, p[2]) for p in raw["provenance"]
        ),
        token_count=raw.get("token_count", 0),
    )
