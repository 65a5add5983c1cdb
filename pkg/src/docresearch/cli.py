"""Command-line interface.

All subcommands read the engine configuration from a TOML file
(``--config``); flags mirror the config fields they override. The
``research`` command prints the loop's event stream as JSON lines
followed by the report, with stable key order so runs against stub
endpoints are byte-reproducible.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict

import click

from .agents import report_to_dict
from .chunking import GranularityLevel
from .config import load_config
from .engine import Engine
from .retrieval import Paradigm


def _engine(config_path: str, **overrides) -> Engine:
    cfg = load_config(config_path)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return Engine(cfg)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


@click.group()
def main():
    """Deep research over local multimodal document collections."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--no-enrich", is_flag=True, help="Skip model-based enrichment.")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
def ingest(config_path, no_enrich, paths):
    """Ingest document files in the canonical format."""
    engine = _engine(config_path)
    doc_ids = engine.ingest(list(paths), enrich=False if no_enrich else None)
    for doc_id in doc_ids:
        click.echo(doc_id)
    for warning in engine.warnings:
        click.echo(f"warning: {warning}", err=True)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--paradigm", type=click.Choice([p.value for p in Paradigm]), default=None)
def index(config_path, paradigm):
    """Embed chunks and build the vector index."""
    engine = _engine(config_path)
    count = engine.build_index(Paradigm(paradigm) if paradigm else None)
    click.echo(f"indexed entries: {count}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("-k", type=int, default=None)
@click.option("--paradigm", type=click.Choice([p.value for p in Paradigm]), default=None)
@click.option(
    "--granularity", type=click.Choice([g.value for g in GranularityLevel]), default="chunk"
)
@click.argument("queries", nargs=-1, required=True)
def search(config_path, k, paradigm, granularity, queries):
    """Search the index; prints one JSON hit per line with fusion trace."""
    engine = _engine(config_path)
    evidence = engine.search(
        list(queries),
        k=k,
        paradigm=Paradigm(paradigm) if paradigm else None,
        granularity=GranularityLevel(granularity),
    )
    for warning in evidence.warnings:
        click.echo(f"warning: {warning}", err=True)
    for hit in evidence.hits:
        click.echo(
            _dump(
                {
                    "rank": hit.rank,
                    "chunk_id": hit.chunk_id,
                    "doc_id": hit.doc_id,
                    "granularity": hit.granularity.value,
                    "modality": hit.modality.value,
                    "score": round(hit.score, 6),
                    "text": hit.text[:200],
                    "provenance": [
                        {"page_no": p.page_no, "bbox": list(p.bbox) if p.bbox else None}
                        for p in hit.provenance
                    ],
                    "fusion_trace": [
                        {
                            "retriever": t.retriever_name,
                            "raw": round(t.raw_score, 6),
                            "normalized": round(t.normalized_score, 6),
                            "query": t.source_query,
                        }
                        for t in hit.trace
                    ],
                }
            )
        )


def _print_turn(engine: Engine, session_id: str, question: str, show_events: bool):
    def on_event(ev):
        if show_events:
            click.echo(_dump({"seq": ev.seq, "type": ev.type, "data": ev.data}))

    session, rep = engine.query_session(session_id, question, event_cb=on_event)
    click.echo("REPORT")
    click.echo(json.dumps(report_to_dict(rep) if rep else {}, sort_keys=True, ensure_ascii=False, indent=2))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--session", "session_id", default=None, help="Existing session id; REPL when no question given.")
@click.option("--events/--no-events", "show_events", default=True)
@click.argument("question", required=False)
def research(config_path, session_id, show_events, question):
    """Run the deep-research loop for one question (or a session REPL)."""
    engine = _engine(config_path)
    if session_id is None:
        session_id = engine.create_session().session_id
        click.echo(f"session: {session_id}", err=True)
    if question:
        _print_turn(engine, session_id, question, show_events)
        return
    # REPL over a session: one research turn per input line
    click.echo(f"research REPL on session {session_id}; empty line exits", err=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            break
        _print_turn(engine, session_id, line, show_events)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--bench", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
def eval(config_path, bench, out_dir):
    """Run a benchmark file and print aggregate metrics."""
    engine = _engine(config_path)
    result = engine.evaluate(bench, out_dir=out_dir)
    click.echo(
        json.dumps(
            {
                "overall": asdict(result.overall),
                "by_language": {k: asdict(v) for k, v in result.by_language.items()},
                "by_domain": {k: asdict(v) for k, v in result.by_domain.items()},
            },
            sort_keys=True,
            indent=2,
        )
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def stats(config_path):
    """Corpus statistics."""
    engine = _engine(config_path)
    click.echo(json.dumps(asdict(engine.stats()), sort_keys=True, indent=2))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--ui", "ui_dir", default=None, type=click.Path(), help="Static UI directory to serve.")
def serve(config_path, host, port, ui_dir):
    """Serve the HTTP API (and optionally the web UI)."""
    import uvicorn

    from .api import create_app

    engine = _engine(config_path)
    uvicorn.run(create_app(engine, static_dir=ui_dir), host=host, port=port)


if __name__ == "__main__":
    main()
