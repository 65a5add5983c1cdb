"""Shared fixtures: document builders and scripted model stubs."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from docresearch.corpus import (
    Document,
    ElementKind,
    Language,
    LayoutElement,
    PageRecord,
    build_full_text,
)


def raw_element(element_id, kind="text", bbox=(10, 10, 100, 40), text="body text", crop=None, section=None):
    return {
        "element_id": element_id,
        "kind": kind,
        "bbox": list(bbox),
        "text": text,
        "crop": crop,
        "section_path": section or [],
    }


def raw_page(page_no, elements, width=600, height=800, screenshot=None):
    return {
        "page_no": page_no,
        "width_px": width,
        "height_px": height,
        "screenshot": screenshot,
        "elements": elements,
    }


def raw_doc(doc_id="doc-1", pages=None, title="A Document", language="en"):
    return {
        "schema": "docresearch/v1",
        "doc_id": doc_id,
        "title": title,
        "language": language,
        "pages": pages if pages is not None else [raw_page(1, [raw_element("e1")])],
    }


def make_element(element_id, kind=ElementKind.TEXT, bbox=(10.0, 10.0, 100.0, 40.0), text="body",
                 crop_ref=None, section=(), coarse="", fine="", enriched=False):
    return LayoutElement(
        element_id=element_id,
        kind=kind,
        bbox=bbox,
        text=text,
        crop_ref=crop_ref,
        coarse_summary=coarse,
        fine_description=fine,
        section_path=tuple(section),
        enriched=enriched,
    )


def make_doc(doc_id="doc-1", pages=(), summary="", language=Language.EN, source_path=""):
    pages = tuple(pages)
    return Document(
        doc_id=doc_id,
        title=doc_id,
        language=language,
        pages=pages,
        full_text=build_full_text(pages),
        summary=summary,
        source_path=source_path,
    )


def make_page(page_no, elements=(), width=600, height=800, screenshot_ref=None):
    return PageRecord(
        page_no=page_no,
        width_px=width,
        height_px=height,
        screenshot_ref=screenshot_ref,
        elements=tuple(elements),
    )


class ScriptedChat:
    """Chat stub driven by substring rules, a reply queue, or a callable."""

    def __init__(self, rules=None, replies=None, fn=None, default=""):
        self.rules = rules or []
        self.replies = list(replies or [])
        self.fn = fn
        self.default = default
        self.prompts: list[str] = []
        self.transcript: list = []

    def chat(self, messages):
        text = "\n".join(
            c if isinstance(c, str) else json.dumps([str(p) for p in c], sort_keys=True)
            for _, c in messages
        )
        self.prompts.append(text)
        if self.fn is not None:
            reply = self.fn(text)
        elif self.replies:
            reply = self.replies.pop(0)
        else:
            reply = self.default
            for needle, out in self.rules:
                if needle in text:
                    reply = out
                    break
        self.transcript.append({"prompt": text, "reply": reply})
        return reply


class StubEnrichment:
    """Enrichment facade stub: DESC(<ref>) descriptions, SUM() summaries."""

    def __init__(self, fail_on=None):
        self.fail_on = fail_on
        self.describe_calls: list[tuple[str, str]] = []
        self.summarize_calls: list[str] = []

    def describe(self, crop_ref, mode):
        self.describe_calls.append((crop_ref, mode))
        if self.fail_on and self.fail_on in str(crop_ref):
            raise RuntimeError(f"permanent failure on {crop_ref}")
        return f"DESC({Path(crop_ref).name}:{mode})"

    def summarize(self, text):
        self.summarize_calls.append(text)
        return f"SUM({len(text)})"


@pytest.fixture
def asset_dir(tmp_path):
    """Directory with crop/screenshot files of controlled sizes."""

    def write(name: str, size: int = 12_000) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"\x89PNG" + b"\x00" * max(0, size - 4))
        return path

    write.base = tmp_path  # type: ignore[attr-defined]
    return write
