import dataclasses
import json

import numpy as np
import pytest

from unweaver import (
    ChunkIdOutOfRange,
    Document,
    EntityMention,
    EquivalenceClass,
    IndexEmpty,
    IoError,
    SchemaVersionMismatch,
    build_classes,
    build_incidence,
    build_index,
    load_index,
    normalize_name,
    save_index,
)
from oracles import incidence_via_sign


def mention(name, chunk_id, description="d"):
    return EntityMention(name=name, description=description, chunk_id=chunk_id)


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("Marie Curie", "marie curie"),
        ("  Marie   Curie ", "marie curie"),
        ("RADIUM", "radium"),
        ("Pierre\tCurie\n", "pierre curie"),
        ("Straße", "strasse"),
    ],
)
def test_normalize_name(raw, expected):
    assert normalize_name(raw) == expected


def test_build_classes_groups_by_normalized_name():
    classes = build_classes(
        [
            mention("Radium", 0, "first"),
            mention("Curie", 0, "who"),
            mention("RADIUM", 2, "second"),
            mention("radium", 1, "third"),
        ]
    )
    assert [c.class_id for c in classes] == [0, 1]
    radium, curie = classes
    assert radium.name == "Radium"  # surface form of the first mention
    assert radium.normalized_name == "radium"
    assert radium.chunk_ids == (0, 1, 2)
    assert radium.description == "first\nsecond\nthird"
    assert curie.name == "Curie"
    assert curie.chunk_ids == (0,)


def test_build_classes_first_appearance_order():
    classes = build_classes([mention("B", 0), mention("A", 0), mention("B", 1)])
    assert [c.name for c in classes] == ["B", "A"]


def test_build_classes_drops_blank_names():
    classes = build_classes([mention("   ", 0), mention("A", 0)])
    assert [c.name for c in classes] == ["A"]


def test_build_incidence_values_and_lookups():
    classes = build_classes(
        [mention("A", 0), mention("B", 1), mention("A", 2), mention("C", 2)]
    )
    inc = build_incidence(classes, 3)
    assert inc.matrix.shape == (3, 3)
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    assert np.array_equal(inc.matrix, expected)
    assert inc.n_chunks == 3 and inc.n_classes == 3
    assert inc.classes_in_chunk(2) == [0, 2]
    assert inc.chunks_with_class(0) == [0, 2]


def test_build_incidence_rejects_out_of_range_chunk():
    classes = [EquivalenceClass(0, "A", "a", (3,), "d")]
    with pytest.raises(ChunkIdOutOfRange):
        build_incidence(classes, 3)
    classes = [EquivalenceClass(0, "A", "a", (-1,), "d")]
    with pytest.raises(ChunkIdOutOfRange):
        build_incidence(classes, 3)


def test_incidence_matches_mention_routing_oracle():
    rng = np.random.default_rng(7)
    names = ["Ada", "Bohr", "Curie", "Dirac", "Euler"]
    for _ in range(50):
        n_chunks = int(rng.integers(1, 6))
        mentions = [
            mention(str(rng.choice(names)), int(rng.integers(0, n_chunks)))
            for _ in range(int(rng.integers(1, 12)))
        ]
        classes = build_classes(mentions)
        got = build_incidence(classes, n_chunks).matrix
        want = incidence_via_sign(mentions, classes, n_chunks)
        assert np.array_equal(got, want)


def test_build_index_on_fixture_corpus(fixture_index):
    assert fixture_index.n_chunks == 3
    assert [c.name for c in fixture_index.classes] == [
        "Marie Curie",
        "Radium",
        "Paris",
        "Europe",
        "Quartz",
        "Feldspar",
        "Collectors",
        "Pierre Curie",
    ]
    assert fixture_index.embeddings.shape == (64, 8)
    norms = np.linalg.norm(fixture_index.embeddings, axis=0)
    assert np.allclose(norms, 1.0)
    inc = fixture_index.incidence()
    assert inc.chunks_with_class(1) == [0, 2]  # Radium spans both Curie documents
    assert fixture_index.token_usage.as_dict() == {
        "index_prompt": 0,
        "index_completion": 0,
        "query_prompt": 0,
        "query_completion": 0,
        "index_embed": 0,
        "query_embed": 0,
    }


def test_build_index_requires_entities():
    docs = [Document(source_id="a.txt", text="nothing but lowercase words here.")]
    with pytest.raises(IndexEmpty):
        build_index(docs)


def test_save_load_round_trip(fixture_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(fixture_index, path)
    loaded = load_index(path)
    assert loaded.config == fixture_index.config
    assert loaded.chunks == fixture_index.chunks
    assert loaded.classes == fixture_index.classes
    assert np.array_equal(loaded.embeddings, fixture_index.embeddings)
    assert loaded.token_usage.as_dict() == fixture_index.token_usage.as_dict()


def test_save_creates_parent_directories(fixture_index, tmp_path):
    path = tmp_path / "deep" / "nest" / "index.json"
    save_index(fixture_index, path)
    assert load_index(path).n_classes == fixture_index.n_classes


def test_load_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_index(tmp_path / "absent.json")


def test_load_truncated_file(fixture_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(fixture_index, path)
    blob = path.read_text(encoding="utf-8")
    path.write_text(blob[: len(blob) // 2], encoding="utf-8")
    with pytest.raises(IoError):
        load_index(path)


def test_load_schema_version_mismatch(fixture_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(fixture_index, path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["schema_version"] = 99
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(SchemaVersionMismatch):
        load_index(path)


def test_load_rejects_corrupt_chunk_ids(fixture_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(fixture_index, path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["classes"][0]["chunk_ids"] = [99]
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ChunkIdOutOfRange):
        load_index(path)


def test_chunks_survive_round_trip_as_dataclasses(fixture_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(fixture_index, path)
    loaded = load_index(path)
    for chunk in loaded.chunks:
        assert dataclasses.is_dataclass(chunk)
        assert chunk.token_count == len(chunk.text.split())
