"""HTTP API over the engine.

The query endpoint streams the research loop's ordered events as
server-sent events and closes after the final ``report_ready`` (or
``failed``) frame. The assets endpoint serves page screenshots and crops
so a client can overlay citation bounding boxes.
"""

from __future__ import annotations

import json
import queue
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, StreamingResponse
from pydantic import BaseModel

from .engine import Engine, UnknownSession
from .retrieval import Paradigm

_CONTENT_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg", ".webp": "image/webp"}


class IngestBody(BaseModel):
    paths: list[str]


class IndexBody(BaseModel):
    paradigm: str | None = None


class QueryBody(BaseModel):
    question: str


class EvalBody(BaseModel):
    bench: str
    out_dir: str | None = None


def _sse_frame(event_type: str, data: dict) -> str:
    return f"event: {event_type}\ndata: {json.dumps(data, sort_keys=True, ensure_ascii=False)}\n\n"


def create_app(engine: Engine, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="docresearch")

    @app.post("/ingest")
    def ingest(body: IngestBody):
        seen = len(engine.warnings)
        doc_ids = engine.ingest(body.paths)
        return {"doc_ids": doc_ids, "warnings": engine.warnings[seen:]}

    @app.post("/index")
    def build_index(body: IndexBody):
        paradigm = Paradigm(body.paradigm) if body.paradigm else None
        return {"entries": engine.build_index(paradigm)}

    @app.get("/documents")
    def documents():
        out = []
        for doc_id in engine.store.list_doc_ids():
            doc = engine.document(doc_id)
            out.append(
                {
                    "doc_id": doc.doc_id,
                    "title": doc.title,
                    "language": doc.language.value,
                    "pages": len(doc.pages),
                    "has_summary": bool(doc.summary),
                }
            )
        return out

    @app.get("/stats")
    def stats():
        s = engine.stats()
        return {
            "doc_count": s.doc_count,
            "avg_pages": s.avg_pages,
            "avg_words": s.avg_words,
            "avg_figures": s.avg_figures,
            "avg_tables": s.avg_tables,
            "avg_equations": s.avg_equations,
        }

    @app.post("/sessions")
    def create_session():
        return {"session_id": engine.create_session().session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return engine.get_session(session_id).to_dict()
        except UnknownSession:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.post("/sessions/{session_id}/query")
    def query(session_id: str, body: QueryBody):
        try:
            session = engine.get_session(session_id)
        except UnknownSession:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        if not engine.acquire_session(session_id):
            raise HTTPException(status_code=409, detail="a query is already running on this session")
        frames: queue.Queue = queue.Queue()

        def on_event(ev):
            frames.put(_sse_frame(ev.type, {"seq": ev.seq, **ev.data}))

        def run():
            try:
                engine.query_session_unguarded(session, body.question, event_cb=on_event)
            except Exception as exc:
                frames.put(_sse_frame("failed", {"error": f"{type(exc).__name__}: {exc}"}))
            finally:
                engine.release_session(session_id)
                frames.put(None)

        threading.Thread(target=run, daemon=True).start()

        def stream():
            while True:
                frame = frames.get()
                if frame is None:
                    break
                yield frame

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/assets/{doc_id}/{asset}")
    def asset(doc_id: str, asset: str):
        try:
            path = engine.store.asset_path(doc_id, asset)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail="bad asset name")
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no asset {asset} for {doc_id}")
        media = _CONTENT_TYPES.get(path.suffix.lower(), "application/octet-stream")
        return FileResponse(path, media_type=media)

    @app.post("/eval")
    def evaluate(body: EvalBody):
        result = engine.evaluate(body.bench, out_dir=body.out_dir)
        from dataclasses import asdict

        return {
            "overall": asdict(result.overall),
            "by_language": {k: asdict(v) for k, v in result.by_language.items()},
            "by_domain": {k: asdict(v) for k, v in result.by_domain.items()},
            "items": [asdict(r) for r in result.items],
        }

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
