import json

import numpy as np
import pytest

from motive.dataset import (
    DataError,
    build_examples,
    load_dataset,
    make_split,
    read_features,
    read_split,
    select,
    write_annotations,
    write_features,
    write_split,
)
from motive.graph import Configuration
from motive.knowledge import Vocabulary


@pytest.fixture
def vocabs():
    return {
        "motivation": Vocabulary.from_strings("motivation", ["watch television", "eat dinner", "relax"]),
        "action": Vocabulary.from_strings("action", ["sitting", "eating"]),
        "object": Vocabulary.from_strings("object", ["couch", "plate"]),
        "scene": Vocabulary.from_strings("scene", ["living room", "kitchen"]),
    }


def record(image_id, m="relax", a="sitting", o="couch", s="kitchen"):
    return {"image_id": image_id, "motivation": m, "action": a, "object": o, "scene": s}


class TestFeatures:
    def test_round_trip(self, tmp_path, rng):
        X = rng.standard_normal((5, 3))
        ids = ["a", "b", "c", "d", "e"]
        write_features(tmp_path / "f.bin", ids, X)
        got_ids, got = read_features(tmp_path / "f.bin")
        assert got_ids == ids
        assert got.tobytes() == X.tobytes()
        assert (tmp_path / "f.bin.ids").read_text() == "a\nb\nc\nd\ne\n"

    def test_missing_sidecar(self, tmp_path):
        write_features(tmp_path / "f.bin", ["a"], np.zeros((1, 2)))
        (tmp_path / "f.bin.ids").unlink()
        with pytest.raises(DataError, match="sidecar"):
            read_features(tmp_path / "f.bin")

    def test_truncated(self, tmp_path):
        write_features(tmp_path / "f.bin", ["a", "b"], np.zeros((2, 2)))
        blob = (tmp_path / "f.bin").read_bytes()
        (tmp_path / "f.bin").write_bytes(blob[:-8])
        with pytest.raises(DataError, match="payload"):
            read_features(tmp_path / "f.bin")

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(DataError):
            write_features(tmp_path / "f.bin", ["a"], np.zeros((2, 2)))


class TestExamples:
    def test_labels_resolve_case_insensitively(self, vocabs):
        ex = build_examples([record("x", m="Watch  Television", s="Living Room")], ["x"], np.ones((1, 2)), vocabs)
        assert ex[0].truth == Configuration(0, 0, 0, 0)
        assert ex[0].image_id == "x"

    def test_unknown_term_suggests_a_match(self, vocabs):
        with pytest.raises(DataError) as err:
            build_examples([record("x", m="watch televison")], ["x"], np.ones((1, 2)), vocabs)
        msg = str(err.value)
        assert "image x" in msg and "motivation" in msg
        assert "did you mean 'watch television'" in msg

    def test_duplicate_image(self, vocabs):
        with pytest.raises(DataError, match="duplicate"):
            build_examples([record("x"), record("x")], ["x"], np.ones((1, 2)), vocabs)

    def test_image_without_features(self, vocabs):
        with pytest.raises(DataError, match="no feature row"):
            build_examples([record("y")], ["x"], np.ones((1, 2)), vocabs)

    def test_annotation_file_round_trip(self, tmp_path, vocabs, rng):
        X = rng.standard_normal((2, 3))
        exs = build_examples([record("p", m="eat dinner", a="eating", o="plate"), record("q")],
                             ["p", "q"], X, vocabs)
        write_annotations(tmp_path / "a.jsonl", exs, vocabs)
        write_features(tmp_path / "f.bin", ["p", "q"], X)
        back = load_dataset(tmp_path / "a.jsonl", tmp_path / "f.bin", vocabs)
        assert [e.truth for e in back] == [e.truth for e in exs]

    def test_bad_annotation_lines(self, tmp_path, vocabs):
        (tmp_path / "a.jsonl").write_text('{"image_id": "p"}\n')
        write_features(tmp_path / "f.bin", ["p"], np.zeros((1, 1)))
        with pytest.raises(DataError, match="line 1: missing"):
            load_dataset(tmp_path / "a.jsonl", tmp_path / "f.bin", vocabs)
        (tmp_path / "a.jsonl").write_text("\n{not json\n")
        with pytest.raises(DataError, match="line 2"):
            load_dataset(tmp_path / "a.jsonl", tmp_path / "f.bin", vocabs)


class TestSplit:
    def test_deterministic_and_disjoint(self):
        ids = ["img%03d" % i for i in range(11)]
        a, b = make_split(ids, 4), make_split(ids, 4)
        assert a == b
        assert len(a.train) == 6 and len(a.test) == 5
        assert sorted(a.train + a.test) == ids
        assert make_split(ids, 5) != a

    def test_file_round_trip_is_byte_identical(self, tmp_path):
        ids = [str(i) for i in range(20)]
        write_split(make_split(ids, 1), tmp_path / "s1.json")
        write_split(make_split(ids, 1), tmp_path / "s2.json")
        assert (tmp_path / "s1.json").read_bytes() == (tmp_path / "s2.json").read_bytes()
        assert read_split(tmp_path / "s1.json") == make_split(ids, 1)

    def test_overlap_rejected(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"seed": 0, "train": ["a"], "test": ["a"]}))
        with pytest.raises(DataError, match="overlap"):
            read_split(tmp_path / "s.json")

    def test_bad_inputs(self):
        with pytest.raises(DataError):
            make_split(["a"], 0)
        with pytest.raises(DataError):
            make_split(["a", "a"], 0)

    def test_select(self, vocabs):
        exs = build_examples([record("p"), record("q")], ["p", "q"], np.zeros((2, 1)), vocabs)
        assert [e.image_id for e in select(exs, ["q", "p"])] == ["q", "p"]
        with pytest.raises(DataError, match="unknown image ids: z"):
            select(exs, ["z"])
