import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docresearch.corpus import (
    CorpusStats,
    ElementKind,
    EnrichError,
    IngestError,
    corpus_stats,
    enrich_document,
    ingest_document,
    serialize_document,
)

from conftest import (
    StubEnrichment,
    make_doc,
    make_element,
    make_page,
    raw_doc,
    raw_element,
    raw_page,
)


class TestIngest:
    def test_minimal_document(self):
        doc = ingest_document(raw_doc())
        assert len(doc.pages) == 1
        assert len(doc.pages[0].elements) == 1
        assert doc.full_text == "body text"

    def test_inverted_bbox_rejected(self):
        raw = raw_doc(pages=[raw_page(1, [raw_element("e1", bbox=(100, 40, 10, 10))])])
        with pytest.raises(IngestError) as err:
            ingest_document(raw)
        assert err.value.field == "bbox"
        assert "inverted" in err.value.reason

    def test_pages_resorted_ascending(self):
        pages = [
            raw_page(2, [raw_element("p2a", text="two-a"), raw_element("p2b", text="two-b")]),
            raw_page(1, [raw_element("p1a", text="one-a")]),
            raw_page(3, [raw_element("p3a", text="three-a")]),
        ]
        # oracle: plain sort of the input page list by page_no
        expected_order = sorted([p["page_no"] for p in pages])
        doc = ingest_document(raw_doc(pages=pages))
        assert [p.page_no for p in doc.pages] == expected_order
        assert [e.element_id for e in doc.pages[0].elements] == ["p1a"]
        assert [e.element_id for e in doc.pages[1].elements] == ["p2a", "p2b"]

    def test_bbox_out_of_bounds(self):
        raw = raw_doc(pages=[raw_page(1, [raw_element("e1", bbox=(10, 10, 700, 40))], width=600)])
        with pytest.raises(IngestError) as err:
            ingest_document(raw)
        assert err.value.field == "bbox"

    def test_duplicate_element_id(self):
        raw = raw_doc(
            pages=[raw_page(1, [raw_element("dup")]), raw_page(2, [raw_element("dup")])]
        )
        with pytest.raises(IngestError) as err:
            ingest_document(raw)
        assert err.value.field == "element_id"

    def test_empty_text_element(self):
        raw = raw_doc(pages=[raw_page(1, [raw_element("e1", text="")])])
        with pytest.raises(IngestError):
            ingest_document(raw)

    def test_visual_without_crop(self):
        raw = raw_doc(pages=[raw_page(1, [raw_element("f1", kind="figure", text="")])])
        with pytest.raises(IngestError) as err:
            ingest_document(raw)
        assert err.value.field == "crop"

    def test_unknown_schema(self):
        raw = raw_doc()
        raw["schema"] = "other/v9"
        with pytest.raises(IngestError):
            ingest_document(raw)

    def test_full_text_separators(self):
        pages = [
            raw_page(1, [raw_element("a", text="A"), raw_element("b", text="B")]),
            raw_page(2, [raw_element("c", text="C")]),
        ]
        doc = ingest_document(raw_doc(pages=pages))
        assert doc.full_text == "A\nB\fC"


# -- generated-document properties -------------------------------------------

_ids = st.integers(min_value=0, max_value=10**6).map(lambda n: f"el{n}")


@st.composite
def raw_documents(draw):
    n_pages = draw(st.integers(min_value=1, max_value=4))
    used = set()
    pages = []
    for page_no in range(1, n_pages + 1):
        n_el = draw(st.integers(min_value=0, max_value=4))
        elements = []
        for _ in range(n_el):
            element_id = draw(_ids.filter(lambda i: i not in used))
            used.add(element_id)
            kind = draw(st.sampled_from(["text", "title", "table", "figure", "equation"]))
            x0 = draw(st.integers(min_value=0, max_value=500))
            y0 = draw(st.integers(min_value=0, max_value=700))
            x1 = draw(st.integers(min_value=x0 + 1, max_value=600))
            y1 = draw(st.integers(min_value=y0 + 1, max_value=800))
            text = draw(st.text(min_size=1, max_size=20)) if kind in ("text", "title") else ""
            crop = f"assets/{element_id}.png" if kind in ("table", "figure") else None
            section = draw(st.lists(st.sampled_from(["s1", "s2"]), max_size=2))
            elements.append(
                raw_element(element_id, kind=kind, bbox=(x0, y0, x1, y1), text=text, crop=crop, section=section)
            )
        pages.append(raw_page(page_no, elements))
    return raw_doc(doc_id=draw(st.sampled_from(["d1", "d2"])), pages=pages)


@given(raw_documents())
@settings(max_examples=60, deadline=None)
def test_roundtrip_reingest_equal(raw):
    doc = ingest_document(raw)
    again = ingest_document(serialize_document(doc))
    assert doc == again


@given(raw_documents())
@settings(max_examples=60, deadline=None)
def test_reading_order_and_full_text(raw):
    doc = ingest_document(raw)
    by_no = {p["page_no"]: p for p in raw["pages"]}
    for page in doc.pages:
        assert [e.element_id for e in page.elements] == [
            e["element_id"] for e in by_no[page.page_no]["elements"]
        ]
    assert len(doc.full_text) >= sum(len(e.text) for _, e in doc.iter_elements())


# -- enrichment ---------------------------------------------------------------


def _doc_with_figures(n_figures):
    elements = [make_element("t1", text="intro text")]
    for i in range(n_figures):
        elements.append(
            make_element(f"f{i + 1}", kind=ElementKind.FIGURE, text="", crop_ref=f"assets/f{i + 1}.png")
        )
    return make_doc(pages=[make_page(1, elements)])


class TestEnrich:
    def test_no_visual_elements_only_summary(self):
        doc = make_doc(pages=[make_page(1, [make_element("t1")])])
        stub = StubEnrichment()
        out = enrich_document(doc, stub)
        assert stub.describe_calls == []
        assert len(stub.summarize_calls) == 1
        assert out.summary == f"SUM({len(doc.full_text)})"
        assert out.pages[0].elements[0] == doc.pages[0].elements[0]

    def test_two_figures_described(self):
        doc = _doc_with_figures(2)
        out = enrich_document(doc, StubEnrichment())
        for el in out.pages[0].elements[1:]:
            assert el.coarse_summary == f"DESC({el.element_id}.png:coarse)"
            assert el.fine_description == f"DESC({el.element_id}.png:fine)"
            assert el.enriched

    def test_idempotent_overwrite(self):
        doc = _doc_with_figures(1)
        once = enrich_document(doc, StubEnrichment())
        twice = enrich_document(once, StubEnrichment())
        assert once == twice

    def test_partial_failure_keeps_completed(self):
        doc = _doc_with_figures(2)
        stub = StubEnrichment(fail_on="f2.png")
        with pytest.raises(EnrichError) as err:
            enrich_document(doc, stub)
        assert err.value.element_id == "f2"
        partial = err.value.partial
        f1 = partial.element_by_id("f1")
        assert f1.enriched and f1.coarse_summary.startswith("DESC")
        assert not partial.element_by_id("f2").enriched


# -- corpus statistics ----------------------------------------------------------


class TestCorpusStats:
    def test_empty_corpus(self):
        assert corpus_stats([]) == CorpusStats(0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_single_doc(self):
        doc = make_doc(
            pages=[make_page(1, [make_element("f1", kind=ElementKind.FIGURE, text="", crop_ref="c.png")])]
        )
        stats = corpus_stats([doc])
        assert stats.avg_pages == 1.0
        assert stats.avg_figures == 1.0

    def test_mean_pages(self):
        docs = [
            make_doc("a", pages=[make_page(i) for i in range(1, 3)]),
            make_doc("b", pages=[make_page(i) for i in range(1, 5)]),
        ]
        assert corpus_stats(docs).avg_pages == 3.0

    def test_research_domain_shape(self):
        # Synthetic corpus quantized to the published research-domain
        # statistics: 166 docs, totals chosen so the per-document averages
        # round to 26.7 pages, 17.3 figures, 11.5 tables, 2.1 equations.
        n_docs, total_pages = 166, 4432
        total_figures, total_tables, total_equations = 2872, 1909, 349
        filler_elements = []
        for i in range(total_figures):
            filler_elements.append(
                make_element(f"fig{i}", kind=ElementKind.FIGURE, text="", crop_ref="c.png")
            )
        for i in range(total_tables):
            filler_elements.append(
                make_element(f"tab{i}", kind=ElementKind.TABLE, text="", crop_ref="c.png")
            )
        for i in range(total_equations):
            filler_elements.append(make_element(f"eq{i}", kind=ElementKind.EQUATION, text="x=y"))
        pages_doc0 = [make_page(1, filler_elements)]
        pages_doc0 += [make_page(i) for i in range(2, total_pages - (n_docs - 1) + 1)]
        docs = [make_doc("doc0", pages=pages_doc0)]
        docs += [make_doc(f"doc{i}", pages=[make_page(1)]) for i in range(1, n_docs)]
        stats = corpus_stats(docs)
        assert stats.doc_count == 166
        assert round(stats.avg_pages, 1) == 26.7
        assert round(stats.avg_figures, 1) == 17.3
        assert round(stats.avg_tables, 1) == 11.5
        assert round(stats.avg_equations, 1) == 2.1

    @given(st.lists(raw_documents(), max_size=5))
    @settings(max_examples=30, deadline=None)
    def test_matches_brute_force_fold(self, raws):
        docs = []
        seen = set()
        for raw in raws:
            if raw["doc_id"] in seen:
                continue
            seen.add(raw["doc_id"])
            docs.append(ingest_document(raw))
        stats = corpus_stats(docs)
        # independent fold
        n = len(docs)
        if n == 0:
            assert stats.doc_count == 0
            return
        kinds = [e.kind.value for d in docs for _, e in d.iter_elements()]
        assert stats.doc_count == n
        assert stats.avg_pages == pytest.approx(sum(len(d.pages) for d in docs) / n)
        assert stats.avg_words == pytest.approx(sum(len(d.full_text.split()) for d in docs) / n)
        assert stats.avg_figures == pytest.approx(kinds.count("figure") / n)
        assert stats.avg_tables == pytest.approx(kinds.count("table") / n)
        assert stats.avg_equations == pytest.approx(kinds.count("equation") / n)
