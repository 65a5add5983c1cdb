import json

import numpy as np
import pytest

from docresearch.agents import Report, TextBlock
from docresearch.chunking import GranularityLevel, Modality, Provenance
from docresearch.evalkit import (
    BenchmarkItem,
    EvalError,
    ItemOutcome,
    NotApplicable,
    doc_selection_prf,
    judge_answer,
    load_benchmark,
    recall_at_k,
    run_benchmark,
)
from docresearch.retrieval import EvidenceHit

from conftest import ScriptedChat
from metric_oracle import oracle_prf, oracle_recall, random_fixture


def item(**kw):
    base = dict(
        qid="q1",
        question="what?",
        candidate_doc_ids=frozenset({"A", "B", "N"}),
        gold_doc_ids=frozenset({"A", "B"}),
        gold_pages=frozenset({("A", 1), ("B", 2)}),
        gold_layouts=(("A", 1, (0.0, 0.0, 10.0, 10.0)),),
        checklist=("has fact 1", "has fact 2", "has fact 3"),
    )
    base.update(kw)
    return BenchmarkItem(**base)


def hit(cid, doc, page=1, bbox=(0.0, 0.0, 10.0, 10.0), rank=1):
    prov = (Provenance(page, bbox, f"{cid}-el"),) if bbox is not None else (
        Provenance(page, None, f"{cid}-el"),
    )
    return EvidenceHit(
        chunk_id=cid, doc_id=doc, granularity=GranularityLevel.CHUNK, modality=Modality.TEXT,
        text="", image_ref=None, provenance=prov, score=1.0, rank=rank,
    )


class TestRecallAtK:
    def test_identical_bbox_full_recall(self):
        assert recall_at_k([hit("h1", "A")], item(), 5, "layout") == 1.0

    def test_partial_overlap_below_threshold(self):
        # gold 10x10 at origin; hit covers x in [0,4] -> 40% of gold area
        h = hit("h1", "A", bbox=(0.0, 0.0, 4.0, 10.0))
        assert recall_at_k([h], item(), 5, "layout", overlap_threshold=0.5) == 0.0
        assert recall_at_k([h], item(), 5, "layout", overlap_threshold=0.4) == 1.0

    def test_half_the_gold_pages(self):
        hits = [hit("h1", "A", page=1)]
        assert recall_at_k(hits, item(), 5, "page") == 0.5

    def test_doc_recall(self):
        hits = [hit("h1", "A"), hit("h2", "N")]
        assert recall_at_k(hits, item(), 5, "doc") == 0.5

    def test_k_truncates(self):
        hits = [hit("h1", "N", rank=1), hit("h2", "A", rank=2)]
        assert recall_at_k(hits, item(), 1, "doc") == 0.0
        assert recall_at_k(hits, item(), 2, "doc") == 0.5

    def test_layout_not_applicable_without_bboxes(self):
        hits = [hit("h1", "A", bbox=None)]
        with pytest.raises(NotApplicable):
            recall_at_k(hits, item(), 5, "layout")

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            recall_at_k([hit("h1", "A")], item(), 5, "layout", overlap_threshold=0.0)


class TestMetricOracle:
    def test_matches_oracle_on_random_fixtures(self):
        rng = np.random.default_rng(123)
        for _ in range(150):
            bench, hits = random_fixture(rng, balanced=bool(rng.integers(2)))
            k = int(rng.integers(1, len(hits) + 1))
            thr = float(rng.uniform(0.1, 1.0))
            for level in ("doc", "page", "layout"):
                expected = oracle_recall(hits, bench, k, level, thr)
                if expected is None:
                    with pytest.raises(NotApplicable):
                        recall_at_k(hits, bench, k, level, thr)
                    continue
                got = recall_at_k(hits, bench, k, level, thr)
                assert got == pytest.approx(expected, abs=1e-9)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            bench, hits = random_fixture(rng)
            for level in ("doc", "page"):
                values = [recall_at_k(hits, bench, k, level) for k in range(1, len(hits) + 1)]
                assert values == sorted(values)

    def test_containment_chain_on_balanced_fixtures(self):
        rng = np.random.default_rng(99)
        for _ in range(80):
            bench, hits = random_fixture(rng, balanced=True)
            k = len(hits)
            doc = recall_at_k(hits, bench, k, "doc")
            page = recall_at_k(hits, bench, k, "page")
            layout = recall_at_k(hits, bench, k, "layout")
            assert doc >= page >= layout


class TestDocSelection:
    def test_exact_match(self):
        assert doc_selection_prf({"a", "b"}, {"a", "b"}) == (1.0, 1.0, 1.0)

    def test_half_overlap(self):
        assert doc_selection_prf({"a", "b"}, {"a", "c"}) == (0.5, 0.5, 0.5)

    def test_empty_predicted(self):
        assert doc_selection_prf(set(), {"a"}) == (0.0, 0.0, 0.0)

    def test_both_empty(self):
        assert doc_selection_prf(set(), set()) == (1.0, 1.0, 1.0)

    def test_matches_oracle_on_random_sets(self):
        rng = np.random.default_rng(5)
        universe = [f"d{i}" for i in range(8)]
        for _ in range(200):
            pred = {d for d in universe if rng.uniform() < 0.4}
            gold = {d for d in universe if rng.uniform() < 0.4}
            assert doc_selection_prf(pred, gold) == pytest.approx(oracle_prf(pred, gold))


def text_report(text):
    return Report(question_echo="q", answer_blocks=[TextBlock(text=text)])


class TestJudge:
    def test_all_satisfied(self):
        llm = ScriptedChat(default="<verdict>satisfied</verdict>")
        verdicts, acc = judge_answer(text_report("covers all"), item(), llm)
        assert verdicts == [True, True, True]
        assert acc == 1

    def test_two_of_three_fails(self):
        llm = ScriptedChat(
            fn=lambda p: "<verdict>unsatisfied</verdict>" if "fact 3" in p
            else "<verdict>satisfied</verdict>"
        )
        verdicts, acc = judge_answer(text_report("partial"), item(), llm)
        assert verdicts == [True, True, False]
        assert acc == 0  # every checklist entry must be satisfied

    def test_empty_checklist_rejected(self):
        with pytest.raises(EvalError):
            judge_answer(text_report("x"), item(checklist=()), ScriptedChat())

    def test_unparseable_counts_unsatisfied(self):
        llm = ScriptedChat(default="probably fine")
        verdicts, acc = judge_answer(text_report("x"), item(), llm)
        assert verdicts == [False, False, False] and acc == 0


class TestBenchmarkLoading:
    def test_roundtrip(self, tmp_path):
        record = {
            "qid": "q1",
            "question": "what?",
            "candidate_doc_ids": ["A", "N"],
            "gold_doc_ids": ["A"],
            "gold_pages": [["A", 1]],
            "gold_layouts": [["A", 1, [0, 0, 5, 5]]],
            "checklist": ["k1"],
            "history": [["prior q", "prior a"]],
            "gold_granularity": "page",
            "language": "zh",
        }
        path = tmp_path / "finance.jsonl"
        path.write_text(json.dumps(record) + "\n\n", encoding="utf-8")
        [loaded] = load_benchmark(path)
        assert loaded.qid == "q1"
        assert loaded.domain == "finance"  # from the file stem
        assert loaded.gold_granularity is GranularityLevel.PAGE
        assert loaded.history[0].question == "prior q"

    def test_invariant_violation_rejected(self, tmp_path):
        record = {
            "qid": "q1",
            "question": "w",
            "candidate_doc_ids": ["A"],
            "gold_doc_ids": ["A", "B"],
            "gold_pages": [],
            "gold_layouts": [],
            "checklist": ["k"],
        }
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(EvalError):
            load_benchmark(path)


class FakeEngine:
    """Scripted engine: perfect on q1/q2, failing on q-fail."""

    def run_benchmark_item(self, bench_item):
        if bench_item.qid == "q-fail":
            return ItemOutcome(plan_doc_ids=None, evidence_hits=[], report=None,
                               error="PlanError: model down")
        hits = [hit(f"h-{d}", d, page=p) for d, p in sorted(bench_item.gold_pages)]
        return ItemOutcome(
            plan_doc_ids=bench_item.gold_doc_ids,
            evidence_hits=hits,
            report=text_report("a perfect answer"),
            transcript=[{"prompt": "p", "reply": "r"}],
        )


class TestRunBenchmark:
    def _items(self):
        return [
            item(qid="q1", gold_layouts=(), language="en", domain="research"),
            item(qid="q2", gold_layouts=(), language="zh", domain="finance"),
        ]

    def test_perfect_stubs_score_one(self, tmp_path):
        judge = ScriptedChat(default="<verdict>satisfied</verdict>")
        result = run_benchmark(self._items(), FakeEngine(), judge, out_dir=tmp_path / "ledger")
        assert result.overall.accuracy == 1.0
        assert result.overall.doc_f1 == 1.0
        assert result.overall.recall_doc == 1.0
        assert result.overall.recall_page == 1.0
        assert result.overall.n_items == 2
        assert set(result.by_language) == {"en", "zh"}
        assert set(result.by_domain) == {"research", "finance"}
        assert (tmp_path / "ledger" / "q1.json").is_file()

    def test_failing_item_recorded_run_continues(self):
        items = self._items() + [item(qid="q-fail", gold_layouts=())]
        judge = ScriptedChat(default="<verdict>satisfied</verdict>")
        result = run_benchmark(items, FakeEngine(), judge)
        failed = [r for r in result.items if r.qid == "q-fail"][0]
        assert failed.accuracy == 0
        assert "PlanError" in failed.error
        assert result.overall.n_items == 3
        assert result.overall.accuracy == pytest.approx(2 / 3)

    def test_replay_identical_ledger(self, tmp_path):
        judge = ScriptedChat(default="<verdict>satisfied</verdict>")
        run_benchmark(self._items(), FakeEngine(), judge, out_dir=tmp_path / "a")
        run_benchmark(self._items(), FakeEngine(), judge, out_dir=tmp_path / "b")
        for name in ("q1.json", "q2.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
