#!/usr/bin/env python3
"""End-to-end demo on a synthetic planted-fact corpus with stub models.

Builds a 12-document corpus (2 relevant, 10 lookalike negatives) in a
work directory, ingests and indexes it with deterministic stub endpoints,
then runs the deep-research loop on a two-hop question and prints the
event stream and the final report. No model servers required.

    python scripts/planted_demo.py --workdir /tmp/demo
"""

import argparse
import json
import shutil
from pathlib import Path

from docresearch.agents import report_to_dict
from docresearch.config import load_config
from docresearch.engine import Engine

QUESTION = "What throughput does the ALPHA protocol reach according to the BETA chart?"
ALPHA_SUBQUERY = "find the ALPHA protocol details"
BETA_SUBQUERY = "find the BETA chart values"

PLAN_REPLY = f"""<docs>rel-alpha, rel-beta</docs>
<granularity>chunk</granularity>
<subqueries>
- {ALPHA_SUBQUERY}
</subqueries>
<rationale>summaries point at the protocol study and its companion report</rationale>"""

CHAT_RULES = {
    "rules": [
        {"when": "planning stage", "reply": PLAN_REPLY},
        {"when_all": ["judge whether a retrieved passage", ALPHA_SUBQUERY, "protocol scales"],
         "reply": "<verdict>relevant</verdict>"},
        {"when_all": ["judge whether a retrieved passage", BETA_SUBQUERY, "chart shows throughput"],
         "reply": "<verdict>relevant</verdict>"},
        {"when": "judge whether a retrieved passage", "reply": "<verdict>irrelevant</verdict>"},
        {"when_all": ["accumulated evidence is sufficient", "42 units"],
         "reply": "<sufficiency>0.9</sufficiency>"},
        {"when": "accumulated evidence is sufficient", "reply": "<sufficiency>0.2</sufficiency>"},
        {"when": "not yet sufficient",
         "reply": f"<subqueries>\n- {BETA_SUBQUERY}\n</subqueries>\n<answered>\n- {ALPHA_SUBQUERY}\n</answered>"},
        {"when_all": ["Describe this image in detail", "fig-BETA"],
         "reply": "The BETA chart shows throughput of 42 units at batch size 8."},
        {"when_all": ["one-sentence summary of this image", "fig-BETA"],
         "reply": "A BETA throughput chart."},
        {"when": "Describe this image in detail", "reply": "An unremarkable image."},
        {"when": "one-sentence summary of this image", "reply": "An image."},
        {"when_all": ["Summarize the following document", "ALPHA"],
         "reply": "Study of the ALPHA protocol."},
        {"when_all": ["Summarize the following document", "Companion"],
         "reply": "Companion report with charts."},
        {"when": "Summarize the following document", "reply": "Notes on protocols."},
        {"when": "grounded answer",
         "reply": "The ALPHA protocol reaches a throughput of 42 units per the BETA chart."},
        {"when_all": ["one atomic fact requirement", "42"],
         "reply": "<verdict>satisfied</verdict>"},
        {"when": "one atomic fact requirement", "reply": "<verdict>unsatisfied</verdict>"},
    ],
    "default": "",
}

CONFIG_TEMPLATE = """
data_dir = "data"
paradigm = "hybrid"
parsing_level = "deep"
tau = 0.8
t_max = 3
k = 10
workers = 1

[[endpoints]]
name = "text-embed"
kind = "embed_text"
base_url = "stub://embed?mode=marker&markers=ALPHA,BETA&dim=8&seed=1"

[[endpoints]]
name = "vision-embed"
kind = "embed_vision_dense"
base_url = "stub://embed?mode=marker&markers=ALPHA,BETA&dim=8&seed=2"

[[endpoints]]
name = "chat-main"
kind = "chat"
base_url = "stub://chat?script={script}"

[roles]
chat = "chat-main"
text_retrievers = ["text-embed"]
vision_retrievers = ["vision-embed"]
"""


def png_bytes(size: int = 12_000) -> bytes:
    return b"\x89PNG\r\n\x1a\n" + b"\x00" * (size - 8)


def write_doc(root: Path, doc_id: str, pages: list[dict]) -> Path:
    doc_dir = root / doc_id
    (doc_dir / "assets").mkdir(parents=True, exist_ok=True)
    record = {"schema": "docresearch/v1", "doc_id": doc_id, "title": doc_id,
              "language": "en", "pages": pages}
    for page in pages:
        if page.get("screenshot"):
            (doc_dir / page["screenshot"]).write_bytes(png_bytes(11_000))
        for el in page["elements"]:
            if el.get("crop"):
                (doc_dir / el["crop"]).write_bytes(png_bytes())
    path = doc_dir / "doc.json"
    path.write_text(json.dumps(record, indent=1), encoding="utf-8")
    return path


def element(eid, text, bbox, kind="text", crop=None, section=()):
    return {"element_id": eid, "kind": kind, "bbox": list(bbox), "text": text,
            "crop": crop, "section_path": list(section)}


def page(no, elements, screenshot=None):
    return {"page_no": no, "width_px": 600, "height_px": 800,
            "screenshot": screenshot, "elements": elements}


def build_corpus(root: Path) -> list[Path]:
    paths = [
        write_doc(root, "rel-alpha", [
            page(1, [
                element("a-title", "Protocol study", (10, 10, 400, 40), kind="title",
                        section=("intro",)),
                element("a-alpha",
                        "The ALPHA protocol scales with batch size; throughput numbers appear"
                        " in the BETA chart of the companion report.", (10, 60, 400, 120),
                        section=("results",)),
            ], screenshot="assets/page1.png"),
        ]),
        write_doc(root, "rel-beta", [
            page(1, [
                element("b-intro", "Companion measurement report.", (10, 10, 400, 40)),
                element("fig-BETA", "", (10, 60, 400, 300), kind="figure",
                        crop="assets/fig-BETA.png"),
            ], screenshot="assets/page1.png"),
        ]),
    ]
    for i in range(10):
        paths.append(write_doc(root, f"neg{i:02d}", [
            page(1, [element(f"n{i}-t",
                             f"Protocol notes volume {i}: throughput of unrelated systems.",
                             (10, 10, 400, 60))]),
        ]))
    return paths


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="/tmp/docresearch-demo")
    parser.add_argument("--keep", action="store_true", help="do not wipe an existing workdir")
    args = parser.parse_args()
    workdir = Path(args.workdir)
    if workdir.exists() and not args.keep:
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    script = workdir / "chat_rules.json"
    script.write_text(json.dumps(CHAT_RULES, indent=1), encoding="utf-8")
    config_path = workdir / "engine.toml"
    config_path.write_text(CONFIG_TEMPLATE.format(script=script), encoding="utf-8")

    doc_paths = build_corpus(workdir / "docs")
    engine = Engine(load_config(config_path))
    print(f"ingesting {len(doc_paths)} documents ...")
    engine.ingest(doc_paths)
    print(f"indexing ... {engine.build_index()} entries")

    session = engine.create_session()
    print(f"session {session.session_id}; question: {QUESTION}\n")
    _, report = engine.query_session(
        session.session_id, QUESTION,
        event_cb=lambda ev: print(f"  [{ev.seq:02d}] {ev.type}: {json.dumps(ev.data)[:110]}"),
    )
    print("\nREPORT")
    print(json.dumps(report_to_dict(report), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
