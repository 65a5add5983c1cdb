"""On-disk corpus layout and chunk lookup.

Each ingested document lives under ``corpus/<doc_id>/`` as ``doc.json``
(ingestion schema plus enrichment fields), ``chunks.json``, and the
copied raster assets in ``assets/``. Documents are single-writer: a save
replaces the whole per-document directory contents.
"""

from __future__ import annotations

import json
import shutil
import threading
from pathlib import Path

from .chunking import Chunk, GranularityLevel, chunk_from_dict, chunk_to_dict
from .corpus import Document, ingest_document, serialize_document


def _safe_dir(doc_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in doc_id)


class CorpusStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "corpus").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, doc_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(doc_id, threading.Lock())

    def doc_dir(self, doc_id: str) -> Path:
        return self.root / "corpus" / _safe_dir(doc_id)

    def list_doc_ids(self) -> list[str]:
        out = []
        base = self.root / "corpus"
        for entry in sorted(base.iterdir()) if base.is_dir() else []:
            if (entry / "doc.json").is_file():
                with open(entry / "doc.json", encoding="utf-8") as fh:
                    out.append(json.load(fh)["doc_id"])
        return sorted(out)

    def save_document(self, doc: Document) -> Document:
        """Persist the document, copying referenced assets under
        ``assets/`` with normalized names; returns the stored revision
        whose refs point at the copies."""
        with self._lock(doc.doc_id):
            dest = self.doc_dir(doc.doc_id)
            assets = dest / "assets"
            assets.mkdir(parents=True, exist_ok=True)
            record = serialize_document(doc)
            for page in record["pages"]:
                if page["screenshot"]:
                    page["screenshot"] = self._copy_asset(
                        doc, page["screenshot"], assets, f"page{page['page_no']}"
                    )
                for el in page["elements"]:
                    if el["crop"]:
                        el["crop"] = self._copy_asset(
                            doc, el["crop"], assets, _safe_dir(el["element_id"])
                        )
            path = dest / "doc.json"
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False, indent=1, sort_keys=True)
            return ingest_document(record, source_path=path)

    @staticmethod
    def _copy_asset(doc: Document, ref: str, assets: Path, stem: str) -> str:
        src = doc.resolve_asset(ref)
        suffix = Path(ref).suffix or ".bin"
        dest = assets / f"{stem}{suffix}"
        if src.is_file() and src.resolve() != dest.resolve():
            shutil.copyfile(src, dest)
        return f"assets/{dest.name}"

    def load_document(self, doc_id: str) -> Document:
        path = self.doc_dir(doc_id) / "doc.json"
        with open(path, encoding="utf-8") as fh:
            return ingest_document(json.load(fh), source_path=path)

    def save_chunks(self, doc_id: str, chunks: list[Chunk]) -> None:
        with self._lock(doc_id):
            path = self.doc_dir(doc_id) / "chunks.json"
            with open(path, "w", encoding="utf-8") as fh:
                json.dump([chunk_to_dict(c) for c in chunks], fh, ensure_ascii=False, indent=1)

    def load_chunks(self, doc_id: str) -> list[Chunk]:
        path = self.doc_dir(doc_id) / "chunks.json"
        if not path.is_file():
            return []
        with open(path, encoding="utf-8") as fh:
            return [chunk_from_dict(c) for c in json.load(fh)]

    def asset_path(self, doc_id: str, name: str) -> Path:
        # flat namespace under assets/; reject traversal
        if "/" in name or "\\" in name or name.startswith("."):
            raise FileNotFoundError(name)
        return self.doc_dir(doc_id) / "assets" / name


class ChunkMap:
    """In-memory chunk lookup over one or more documents' chunk lists.

    Image refs are resolved to absolute paths on load so consumers can
    open them without knowing the corpus layout.
    """

    def __init__(self):
        self._by_id: dict[str, Chunk] = {}
        self._by_doc: dict[tuple[str, GranularityLevel], list[Chunk]] = {}

    @classmethod
    def from_store(cls, store: CorpusStore, doc_ids: list[str] | None = None) -> "ChunkMap":
        cm = cls()
        for doc_id in doc_ids if doc_ids is not None else store.list_doc_ids():
            base = store.doc_dir(doc_id)
            for chunk in store.load_chunks(doc_id):
                if chunk.image_ref:
                    from dataclasses import replace

                    chunk = replace(chunk, image_ref=str(base / chunk.image_ref))
                cm.add(chunk)
        return cm

    def add(self, chunk: Chunk) -> None:
        self._by_id[chunk.chunk_id] = chunk
        self._by_doc.setdefault((chunk.doc_id, chunk.granularity), []).append(chunk)

    def get(self, chunk_id: str) -> Chunk | None:
        return self._by_id.get(chunk_id)

    def for_doc(self, doc_id: str, granularity: GranularityLevel) -> list[Chunk]:
        return list(self._by_doc.get((doc_id, granularity), []))

    def all(self) -> list[Chunk]:
        return list(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)
