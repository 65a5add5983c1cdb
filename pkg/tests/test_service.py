import json

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from docresearch.api import create_app
from docresearch.chunking import GranularityLevel, Modality
from docresearch.cli import main as cli_main
from docresearch.config import ConfigError, config_from_dict, load_config
from docresearch.engine import Engine, EngineBusy, UnknownSession
from docresearch.retrieval import Paradigm

from world import write_two_hop_world, TWO_HOP_QUESTION


@pytest.fixture
def world(tmp_path):
    paths, config_path = write_two_hop_world(tmp_path)
    return {"paths": paths, "config": config_path, "root": tmp_path}


@pytest.fixture
def engine(world):
    eng = Engine(load_config(world["config"]))
    eng.ingest(world["paths"])
    eng.build_index()
    return eng


class TestConfig:
    def test_loads_world_config(self, world):
        cfg = load_config(world["config"])
        assert cfg.paradigm is Paradigm.HYBRID
        assert cfg.tau == 0.8
        assert cfg.data_dir == world["root"] / "data"
        assert set(cfg.endpoints) == {"text-embed", "vision-embed", "chat-main"}

    def test_invalid_tau_named_in_error(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"data_dir": "d", "tau": 1.5})
        assert "tau" in str(err.value)

    def test_unknown_role_endpoint(self):
        raw = {"data_dir": "d", "roles": {"chat": "ghost"}}
        with pytest.raises(ConfigError) as err:
            config_from_dict(raw)
        assert "ghost" in str(err.value)

    def test_role_kind_mismatch(self):
        raw = {
            "data_dir": "d",
            "endpoints": [{"name": "e", "kind": "chat", "base_url": "stub://chat"}],
            "roles": {"text_retrievers": ["e"]},
        }
        with pytest.raises(ConfigError):
            config_from_dict(raw)


class TestEngineIngest:
    def test_ingest_enriches_and_chunks(self, engine):
        assert sorted(engine.store.list_doc_ids())[:2] == ["neg00", "neg01"]
        doc = engine.document("rel-beta")
        assert doc.summary == "Companion report with charts."
        fig = doc.element_by_id("fig-BETA")
        assert "42 units" in fig.fine_description
        chunks = engine.store.load_chunks("rel-beta")
        fig_chunks = [c for c in chunks if c.modality is Modality.FIGURE]
        assert len(fig_chunks) == 1
        assert "42 units" in fig_chunks[0].text

    def test_granularity_chunks_present(self, engine):
        kinds = {(c.granularity, c.modality) for c in engine.store.load_chunks("rel-alpha")}
        assert (GranularityLevel.PAGE, Modality.PAGE_IMAGE) in kinds
        assert (GranularityLevel.FULL, Modality.TEXT) in kinds
        assert (GranularityLevel.SUMMARY, Modality.TEXT) in kinds

    def test_stats(self, engine):
        stats = engine.stats()
        assert stats.doc_count == 12
        assert stats.avg_figures == pytest.approx(1 / 12)


class TestEngineSearch:
    def test_marker_search_hits_planted_chunk(self, engine):
        out = engine.search(["find the ALPHA protocol"], k=5, paradigm=Paradigm.TEXT_ONLY)
        assert out.hits[0].doc_id == "rel-alpha"
        assert "ALPHA" in out.hits[0].text

    def test_hybrid_search_finds_figure_by_filename_marker(self, engine):
        out = engine.search(["show the BETA chart"], k=5, paradigm=Paradigm.HYBRID)
        assert any(h.modality is Modality.FIGURE and h.doc_id == "rel-beta" for h in out.hits)


class TestSessions:
    def test_two_turns_in_order_and_restart(self, world, engine):
        session = engine.create_session()
        sid = session.session_id
        engine.query_session(sid, TWO_HOP_QUESTION)
        engine.query_session(sid, "And what batch size was used?")
        loaded = engine.get_session(sid)
        assert [t.question for t in loaded.turns] == [
            TWO_HOP_QUESTION,
            "And what batch size was used?",
        ]
        # restart: a fresh engine over the same data_dir sees identical turns
        engine2 = Engine(load_config(world["config"]))
        replay = engine2.get_session(sid)
        assert replay.to_dict() == loaded.to_dict()

    def test_history_reaches_planner(self, engine):
        from world import ChatFnGateway, two_hop_chat_fn

        engine.gateway = ChatFnGateway(two_hop_chat_fn)
        sid = engine.create_session().session_id
        engine.query_session(sid, TWO_HOP_QUESTION)
        engine.query_session(sid, "a follow-up question")
        planner_prompts = [p for p in engine.gateway.chat_prompts if "planning stage" in p]
        assert len(planner_prompts) == 2
        # the second turn's planner prompt carries the first turn's Q and A
        assert TWO_HOP_QUESTION in planner_prompts[1]
        assert "42 units" in planner_prompts[1]
        assert len(engine.get_session(sid).turns) == 2

    def test_unknown_session(self, engine):
        with pytest.raises(UnknownSession):
            engine.get_session("nope")

    def test_busy_session_rejected(self, engine):
        sid = engine.create_session().session_id
        assert engine.acquire_session(sid)
        with pytest.raises(EngineBusy):
            engine.query_session(sid, "q")
        engine.release_session(sid)


def parse_sse(body: str):
    frames = []
    for raw in body.strip().split("\n\n"):
        lines = raw.strip().splitlines()
        event = next(l.split(": ", 1)[1] for l in lines if l.startswith("event: "))
        data = json.loads(next(l.split(": ", 1)[1] for l in lines if l.startswith("data: ")))
        frames.append((event, data))
    return frames


class TestApi:
    @pytest.fixture
    def client(self, world):
        eng = Engine(load_config(world["config"]))
        app = create_app(eng)
        return TestClient(app), eng, world

    def test_full_flow(self, client):
        tc, eng, world = client
        paths = [str(p) for p in world["paths"]]
        r = tc.post("/ingest", json={"paths": paths})
        assert r.status_code == 200
        assert len(r.json()["doc_ids"]) == 12
        r = tc.post("/index", json={})
        assert r.status_code == 200 and r.json()["entries"] > 0
        docs = tc.get("/documents").json()
        assert len(docs) == 12 and all(d["has_summary"] for d in docs)
        sid = tc.post("/sessions").json()["session_id"]
        r = tc.post(f"/sessions/{sid}/query", json={"question": TWO_HOP_QUESTION})
        assert r.status_code == 200
        frames = parse_sse(r.text)
        types = [t for t, _ in frames]
        assert types[0] == "plan_ready"
        assert types.count("report_ready") == 1
        assert types[-1] == "report_ready"
        assert types.index("search_started") < types.index("candidates_found")
        session = tc.get(f"/sessions/{sid}").json()
        assert len(session["turns"]) == 1
        # asset serving with image content type
        r = tc.get("/assets/rel-beta/fig-BETA.png")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content.startswith(b"\x89PNG")

    def test_unknown_session_404(self, client):
        tc, _, _ = client
        assert tc.get("/sessions/ghost").status_code == 404
        assert tc.post("/sessions/ghost/query", json={"question": "q"}).status_code == 404

    def test_busy_session_409(self, client):
        tc, eng, world = client
        sid = tc.post("/sessions").json()["session_id"]
        assert eng.acquire_session(sid)
        try:
            r = tc.post(f"/sessions/{sid}/query", json={"question": "q"})
            assert r.status_code == 409
        finally:
            eng.release_session(sid)

    def test_missing_asset_404(self, client):
        tc, _, _ = client
        assert tc.get("/assets/nodoc/nope.png").status_code == 404


class TestCli:
    def test_ingest_index_search_stats(self, world):
        runner = CliRunner()
        cfg = str(world["config"])
        paths = [str(p) for p in world["paths"]]
        r = runner.invoke(cli_main, ["ingest", "--config", cfg, *paths])
        assert r.exit_code == 0, r.output
        assert "rel-alpha" in r.output
        r = runner.invoke(cli_main, ["index", "--config", cfg])
        assert r.exit_code == 0 and "indexed entries" in r.output
        r = runner.invoke(cli_main, ["search", "--config", cfg, "find the ALPHA protocol", "-k", "3"])
        assert r.exit_code == 0, r.output
        first = json.loads(r.output.strip().splitlines()[0])
        assert first["doc_id"] == "rel-alpha"
        r = runner.invoke(cli_main, ["stats", "--config", cfg])
        assert r.exit_code == 0
        assert json.loads(r.output)["doc_count"] == 12

    def test_research_single_shot(self, world):
        runner = CliRunner()
        cfg = str(world["config"])
        paths = [str(p) for p in world["paths"]]
        runner.invoke(cli_main, ["ingest", "--config", cfg, *paths])
        runner.invoke(cli_main, ["index", "--config", cfg])
        r = runner.invoke(cli_main, ["research", "--config", cfg, TWO_HOP_QUESTION])
        assert r.exit_code == 0, r.output
        assert "REPORT" in r.stdout
        events = [json.loads(l) for l in r.stdout.split("REPORT")[0].strip().splitlines()]
        assert events[0]["type"] == "plan_ready"
        assert events[-1]["type"] == "report_ready"
