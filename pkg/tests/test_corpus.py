import numpy as np
import pytest

from unweaver import (
    Document,
    EmptyDocument,
    IoError,
    SegmentConfig,
    load_corpus,
    segment,
    segment_corpus,
)
from unweaver.corpus import token_spans


def words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


def test_short_document_is_one_chunk():
    doc = Document("a", words(5))
    chunks = segment(doc, SegmentConfig(target_tokens=8, overlap_tokens=2))
    assert len(chunks) == 1
    assert chunks[0].chunk_id == 0
    assert chunks[0].token_count == 5
    assert chunks[0].text == doc.text.strip()


def test_window_positions_and_overlap():
    doc = Document("a", words(10))
    chunks = segment(doc, SegmentConfig(target_tokens=8, overlap_tokens=4))
    assert [c.token_count for c in chunks] == [8, 6]
    assert chunks[0].text.split() == [f"w{i}" for i in range(8)]
    assert chunks[1].text.split() == [f"w{i}" for i in range(4, 10)]
    # consecutive chunks share exactly the configured overlap
    assert chunks[0].text.split()[-4:] == chunks[1].text.split()[:4]


def test_token_reconstruction():
    doc = Document("a", words(100))
    cfg = SegmentConfig(target_tokens=16, overlap_tokens=3)
    chunks = segment(doc, cfg)
    rebuilt = chunks[0].text.split()
    for chunk in chunks[1:]:
        rebuilt.extend(chunk.text.split()[cfg.overlap_tokens :])
    assert rebuilt == doc.text.split()


def test_chunk_text_is_source_substring():
    doc = Document("a", "alpha   beta\n\tgamma  delta epsilon zeta eta theta iota")
    chunks = segment(doc, SegmentConfig(target_tokens=8, overlap_tokens=1))
    for chunk in chunks:
        assert chunk.text in doc.text


def test_empty_document_raises():
    with pytest.raises(EmptyDocument):
        segment(Document("a", "   \n\t  "))


def test_segment_config_validation():
    with pytest.raises(ValueError):
        SegmentConfig(target_tokens=4)
    with pytest.raises(ValueError):
        SegmentConfig(target_tokens=16, overlap_tokens=16)
    with pytest.raises(ValueError):
        SegmentConfig(target_tokens=16, overlap_tokens=-1)


def test_token_spans_positions():
    text = " one  two\nthree "
    spans = token_spans(text)
    assert [text[a:b] for a, b in spans] == ["one", "two", "three"]


def test_random_documents_invariants():
    rng = np.random.default_rng(1234)
    for _ in range(25):
        n_tokens = int(rng.integers(1, 400))
        target = int(rng.integers(8, 40))
        overlap = int(rng.integers(0, target))
        doc = Document("d", words(n_tokens))
        chunks = segment(doc, SegmentConfig(target_tokens=target, overlap_tokens=overlap))
        assert [c.chunk_id for c in chunks] == list(range(len(chunks)))
        assert all(1 <= c.token_count <= target for c in chunks)
        assert all(c.text in doc.text for c in chunks)
        rebuilt = chunks[0].text.split()
        for chunk in chunks[1:]:
            rebuilt.extend(chunk.text.split()[overlap:])
        assert rebuilt == doc.text.split()


def test_load_corpus_sorted_and_filtered(tmp_path):
    (tmp_path / "b.txt").write_text("beta text", encoding="utf-8")
    (tmp_path / "a.md").write_text("alpha text", encoding="utf-8")
    (tmp_path / "ignored.bin").write_text("binary-ish", encoding="utf-8")
    (tmp_path / "empty.txt").write_text("   ", encoding="utf-8")
    sub = tmp_path / "sub"
    sub.mkdir()
    (sub / "c.txt").write_text("nested text", encoding="utf-8")

    docs = load_corpus(tmp_path)
    assert [d.source_id for d in docs] == ["a.md", "b.txt", "sub/c.txt"]
    assert docs[0].text == "alpha text"


def test_load_corpus_errors(tmp_path):
    with pytest.raises(IoError):
        load_corpus(tmp_path / "missing")
    (tmp_path / "only_empty.txt").write_text("", encoding="utf-8")
    with pytest.raises(EmptyDocument):
        load_corpus(tmp_path)


def test_segment_corpus_renumbers_densely():
    docs = [Document("a", words(20, "a")), Document("b", words(20, "b"))]
    chunks = segment_corpus(docs, SegmentConfig(target_tokens=8, overlap_tokens=0))
    assert [c.chunk_id for c in chunks] == list(range(len(chunks)))
    assert {c.source_id for c in chunks} == {"a", "b"}
    # document order is preserved
    sources = [c.source_id for c in chunks]
    assert sources == sorted(sources)
