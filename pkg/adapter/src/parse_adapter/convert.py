"""Convert parser output bundles into the canonical ingestion format.

A bundle is one directory per document holding pre-rendered page rasters
plus, depending on the mode, the external parser's export:

    <doc>/page_1.png, page_2.png, ...   page rasters (all modes)
    <doc>/layout.json                   deep: layout-analysis export
    <doc>/ocr.json                      shallow: OCR line export
    <doc>/meta.json                     optional: {"title", "language",
                                        "source_dpi"}

Layout export schema (MinerU-class block types are mapped onto the
canonical kinds): ``{"pages": [{"page_no", "blocks": [{"type", "bbox":
[x0,y0,x1,y1], "text", "level"?}]}]}`` with bboxes in raster pixels,
blocks in reading order. OCR export: ``{"pages": [{"page_no", "lines":
[{"text", "bbox"}]}]}``.

Free mode emits screenshot-only documents. Crops for table/figure
elements are cut from the page rasters; when the requested dpi differs
from the bundle's source dpi, rasters and all geometry are rescaled.
This adapter is the only component that touches parser/OCR ecosystems;
the engine only ever sees the emitted files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

SCHEMA_ID = "docresearch/v1"
DEFAULT_DPI = 144

# External layout-analysis type names -> canonical element kinds.
KIND_MAP = {
    "text": "text",
    "plain_text": "text",
    "paragraph": "text",
    "list": "text",
    "title": "title",
    "heading": "title",
    "table": "table",
    "table_body": "table",
    "figure": "figure",
    "image": "figure",
    "img": "figure",
    "chart": "figure",
    "equation": "equation",
    "interline_equation": "equation",
    "isolate_formula": "equation",
}

VISUAL_KINDS = ("table", "figure")
MODES = ("deep", "shallow", "free")


class AdapterError(RuntimeError):
    pass


@dataclass
class AdapterJob:
    input_dirs: list[Path]
    mode: str
    output_dir: Path
    dpi: int = DEFAULT_DPI

    def __post_init__(self):
        if self.mode not in MODES:
            raise AdapterError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.dpi < 36 or self.dpi > 600:
            raise AdapterError(f"dpi {self.dpi} out of range 36..600")


@dataclass
class ConvertResult:
    converted: list[str] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)


def _page_rasters(bundle: Path) -> dict[int, Path]:
    rasters = {}
    for path in sorted(bundle.glob("page_*.png")) + sorted(bundle.glob("pages/page_*.png")):
        stem = path.stem.split("_", 1)[1]
        try:
            rasters[int(stem)] = path
        except ValueError:
            continue
    if not rasters:
        raise AdapterError(f"{bundle.name}: no page rasters (page_<n>.png)")
    return rasters


def _load_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _meta(bundle: Path) -> dict:
    meta_path = bundle / "meta.json"
    return _load_json(meta_path) if meta_path.is_file() else {}


def _scale_bbox(bbox, scale: float):
    return [round(float(v) * scale, 2) for v in bbox]


def _reading_order(blocks: list[dict]) -> list[dict]:
    # parser order wins when present; otherwise top-to-bottom, left-to-right
    if any("order" in b for b in blocks):
        return sorted(blocks, key=lambda b: b.get("order", 0))
    return sorted(blocks, key=lambda b: (float(b["bbox"][1]), float(b["bbox"][0])))


def _clamp_bbox(bbox, width: int, height: int):
    x0 = min(max(bbox[0], 0.0), width - 1.0)
    y0 = min(max(bbox[1], 0.0), height - 1.0)
    x1 = max(min(bbox[2], float(width)), x0 + 1.0)
    y1 = max(min(bbox[3], float(height)), y0 + 1.0)
    return [x0, y0, x1, y1]


class _SectionTracker:
    """Best-effort section paths from title blocks and their levels."""

    def __init__(self):
        self.stack: list[tuple[int, str]] = []

    def observe_title(self, text: str, level: int):
        self.stack = [(lv, t) for lv, t in self.stack if lv < level]
        self.stack.append((level, text))

    def path(self) -> list[str]:
        return [t for _, t in self.stack]


def _convert_one(bundle: Path, mode: str, out_dir: Path, dpi: int) -> str:
    doc_id = bundle.name
    meta = _meta(bundle)
    source_dpi = int(meta.get("source_dpi", DEFAULT_DPI))
    scale = dpi / source_dpi
    rasters = _page_rasters(bundle)
    dest = out_dir / doc_id
    assets = dest / "assets"
    assets.mkdir(parents=True, exist_ok=True)

    pages_out = []
    images: dict[int, Image.Image] = {}

    def raster(page_no: int) -> Image.Image:
        if page_no not in images:
            img = Image.open(rasters[page_no]).convert("RGB")
            if scale != 1.0:
                img = img.resize(
                    (max(1, round(img.width * scale)), max(1, round(img.height * scale))),
                    Image.LANCZOS,
                )
            images[page_no] = img
        return images[page_no]

    def screenshot_ref(page_no: int) -> str:
        ref = f"assets/page{page_no}.png"
        raster(page_no).save(dest / ref, format="PNG")
        return ref

    if mode == "free":
        for page_no in sorted(rasters):
            img = raster(page_no)
            pages_out.append(
                {
                    "page_no": page_no,
                    "width_px": img.width,
                    "height_px": img.height,
                    "screenshot": screenshot_ref(page_no),
                    "elements": [],
                }
            )
    elif mode == "shallow":
        export = _load_json(bundle / "ocr.json")
        by_no = {int(p["page_no"]): p for p in export.get("pages", [])}
        for page_no in sorted(rasters):
            img = raster(page_no)
            elements = []
            for li, line in enumerate(by_no.get(page_no, {}).get("lines", [])):
                text = (line.get("text") or "").strip()
                if not text:
                    continue
                bbox = _clamp_bbox(_scale_bbox(line["bbox"], scale), img.width, img.height)
                elements.append(
                    {
                        "element_id": f"{doc_id}-p{page_no}-l{li:03d}",
                        "kind": "text",
                        "bbox": bbox,
                        "text": text,
                        "crop": None,
                        "section_path": [],
                    }
                )
            pages_out.append(
                {
                    "page_no": page_no,
                    "width_px": img.width,
                    "height_px": img.height,
                    "screenshot": screenshot_ref(page_no),
                    "elements": elements,
                }
            )
    else:  # deep
        export = _load_json(bundle / "layout.json")
        by_no = {int(p["page_no"]): p for p in export.get("pages", [])}
        sections = _SectionTracker()
        for page_no in sorted(rasters):
            img = raster(page_no)
            elements = []
            blocks = _reading_order(by_no.get(page_no, {}).get("blocks", []))
            for bi, block in enumerate(blocks):
                raw_kind = str(block.get("type", "text")).lower()
                kind = KIND_MAP.get(raw_kind)
                if kind is None:
                    continue  # decorations (headers, footers, page numbers)
                element_id = f"{doc_id}-p{page_no}-b{bi:03d}"
                bbox = _clamp_bbox(_scale_bbox(block["bbox"], scale), img.width, img.height)
                text = (block.get("text") or "").strip()
                if kind == "title":
                    sections.observe_title(text, int(block.get("level", 1)))
                section_path = block.get("section") or sections.path()
                if kind == "title" and section_path and section_path[-1] == text:
                    section_path = section_path[:-1]
                crop = None
                if kind in VISUAL_KINDS:
                    crop = f"assets/{element_id}.png"
                    region = img.crop(tuple(int(round(v)) for v in bbox))
                    region.save(dest / crop, format="PNG")
                if kind == "text" and not text:
                    continue
                elements.append(
                    {
                        "element_id": element_id,
                        "kind": kind,
                        "bbox": bbox,
                        "text": text,
                        "crop": crop,
                        "section_path": list(section_path),
                    }
                )
            pages_out.append(
                {
                    "page_no": page_no,
                    "width_px": img.width,
                    "height_px": img.height,
                    "screenshot": screenshot_ref(page_no),
                    "elements": elements,
                }
            )

    record = {
        "schema": SCHEMA_ID,
        "doc_id": doc_id,
        "title": meta.get("title", doc_id),
        "language": meta.get("language", "other"),
        "pages": pages_out,
    }
    with open(dest / "doc.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, ensure_ascii=False, indent=1, sort_keys=True)
    return doc_id


def convert(job: AdapterJob) -> ConvertResult:
    """Convert every bundle; per-document failures are recorded and the
    batch continues."""
    result = ConvertResult()
    bundles = []
    for input_dir in job.input_dirs:
        input_dir = Path(input_dir)
        if (input_dir / "doc.json").is_file() or list(input_dir.glob("page_*.png")):
            bundles.append(input_dir)
        else:
            bundles.extend(sorted(p for p in input_dir.iterdir() if p.is_dir()))
    if not bundles:
        raise AdapterError("no input bundles found")
    for bundle in bundles:
        try:
            result.converted.append(_convert_one(bundle, job.mode, Path(job.output_dir), job.dpi))
        except Exception as exc:
            result.failures[bundle.name] = f"{type(exc).__name__}: {exc}"
    return result
