import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from motive.cli import main
from motive.knowledge import KINDS, SLOTS, read_container, read_templates, read_vocabularies


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out-dir", str(d), "--n", "80", "--n-features", "8", "--seed", "3"]) == 0
    return d


def unigram_arpa(path, vocab_dir, seed=0):
    words = {"<unk>"}
    for v in read_vocabularies(vocab_dir).values():
        for term in v.terms:
            words.update(term)
    for tset in read_templates().values():
        for tpl in tset.templates:
            words.update(t.lower() for t in tpl if t not in SLOTS and t != "PRONOUN")
    words.update(["he", "she"])
    rng = np.random.default_rng(seed)
    words = sorted(words)
    lines = ["\\data\\", "ngram 1=%d" % len(words), "", "\\1-grams:"]
    lines += ["%.4f\t%s" % (rng.uniform(-4, -1), w) for w in words]
    lines += ["", "\\end\\", ""]
    path.write_text("\n".join(lines))


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    out = capsys.readouterr().out
    assert "(default: 10)" in out and "--C-grid" in out and "(default: 0)" in out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "motive", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_build_potentials(capsys, synth, tmp_path):
    unigram_arpa(tmp_path / "lm.arpa", synth / "vocab")
    code, out, _ = run(capsys, "build-potentials", "--arpa", tmp_path / "lm.arpa",
                       "--vocab-dir", synth / "vocab", "--out", tmp_path / "t.bin", "--workers", "2")
    assert code == 0
    assert "m+a+o" in out and "wrote 13 tensors" in out
    tensors = read_container(tmp_path / "t.bin", read_vocabularies(synth / "vocab"))
    assert len(tensors) == 13
    for t in tensors:
        assert t.values.std() == pytest.approx(1.0) or np.all(t.values == t.values.flat[0])


def test_pipeline(capsys, caplog, synth, tmp_path):
    caplog.set_level(logging.INFO, logger="motive")
    common = ["--vocab-dir", synth / "vocab", "--annotations", synth / "annotations.jsonl"]
    assert run(capsys, "split", "--annotations", synth / "annotations.jsonl", "--out", tmp_path / "s.json")[0] == 0
    code, out, _ = run(capsys, "pca-fit", "--features", synth / "features.bin", "--split", tmp_path / "s.json",
                       "--dim", 4, "--out", tmp_path / "pca.json")
    assert code == 0 and "fitted 4 components on 40 x 8" in out
    assert run(capsys, "pca-apply", "--pca", tmp_path / "pca.json", "--features", synth / "features.bin",
               "--out", tmp_path / "f4.bin")[0] == 0

    code, out, err = run(capsys, "train", *common, "--features", synth / "features.bin", "--pca", tmp_path / "pca.json",
                         "--tensors", synth / "tensors.bin", "--split", tmp_path / "s.json",
                         "--C-grid", "0.1,1", "--folds", 2, "--out", tmp_path / "m.json")
    assert code == 0, err
    assert "C=0.1 fold 0" in caplog.text and "C=1 fold 1" in caplog.text
    model = json.loads((tmp_path / "m.json").read_text())
    assert set(model["meta"]["cv"]) == {"0.1", "1.0"}
    assert model["pca"]["n_valid"] == 4

    code, out, err = run(capsys, "eval", *common, "--features", synth / "features.bin",
                         "--tensors", synth / "tensors.bin", "--split", tmp_path / "s.json",
                         "--model", tmp_path / "m.json", "--mode", "clamp:a+o+s", "--out", tmp_path / "r")
    assert code == 0, err
    assert "Action+Object+Scene" in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["n_images"] == 40 and len(report["accuracy_at_k"]) == 10

    code, out, err = run(capsys, "train-baseline", *common, "--features", tmp_path / "f4.bin",
                         "--split", tmp_path / "s.json", "--C", 1, "--oracle", "a+o+s", "--out", tmp_path / "b.json")
    assert code == 0, err
    code, out, err = run(capsys, "eval", *common, "--features", tmp_path / "f4.bin", "--split", tmp_path / "s.json",
                         "--baseline", tmp_path / "b.json", "--out", tmp_path / "rb")
    assert code == 0, err
    assert "Baseline (Action+Object+Scene)" in out

    ids = json.loads((tmp_path / "s.json").read_text())["test"][:2]
    code, out, err = run(capsys, "infer", "--vocab-dir", synth / "vocab", "--tensors", synth / "tensors.bin",
                         "--model", tmp_path / "m.json", "--features", synth / "features.bin", "--K", 3, *ids)
    assert code == 0, err
    assert out.count("image ") == 2 and len(out.strip().splitlines()) == 8


def test_no_trinary_needs_matching_model(capsys, synth, tmp_path):
    common = ["--vocab-dir", synth / "vocab", "--annotations", synth / "annotations.jsonl",
              "--features", synth / "features.bin", "--tensors", synth / "tensors.bin"]
    assert run(capsys, "train", *common, "--C", 1, "--out", tmp_path / "full.json")[0] == 0
    code, _, err = run(capsys, "eval", *common, "--model", tmp_path / "full.json", "--mode", "no-trinary",
                       "--out", tmp_path / "r")
    assert code == 2 and err.startswith("error: CONFIG:")
    assert run(capsys, "train", *common, "--C", 1, "--no-trinary", "--out", tmp_path / "abl.json")[0] == 0
    code, out, _ = run(capsys, "eval", *common, "--model", tmp_path / "abl.json", "--mode", "no-trinary",
                       "--out", tmp_path / "r")
    assert code == 0 and "no-trinary" in out


def test_training_is_idempotent(capsys, synth, tmp_path):
    common = ["--vocab-dir", synth / "vocab", "--annotations", synth / "annotations.jsonl",
              "--features", synth / "features.bin", "--tensors", synth / "tensors.bin", "--C", 0.5]
    assert run(capsys, "train", *common, "--out", tmp_path / "a.json")[0] == 0
    assert run(capsys, "train", *common, "--out", tmp_path / "b.json")[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_config_file_and_override(capsys, synth, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# training setup\nvocab-dir = %s\nannotations = %s\nfeatures = %s\ntensors = %s\n"
                   "C = 0.5\nmax_passes = 1\n" % (synth / "vocab", synth / "annotations.jsonl",
                                                 synth / "features.bin", synth / "tensors.bin"))
    code, out, _ = run(capsys, "train", "--config", cfg, "--out", tmp_path / "m.json")
    assert code == 0 and "C=0.5 (1 passes" in out
    code, out, _ = run(capsys, "train", "--config", cfg, "--C", 2, "--out", tmp_path / "m.json")
    assert code == 0 and "C=2 (1 passes" in out
    cfg.write_text("colour = red\n")
    code, _, err = run(capsys, "train", "--config", cfg)
    assert code == 2 and "error: CONFIG: " in err and "colour" in err


@pytest.mark.parametrize(
    "argv, category",
    [
        (["train"], "CONFIG"),
        (["pca-fit", "--features", "/nonexistent/f.bin"], "PATH_MISSING"),
        (["split", "--annotations", "EMPTY"], "DATA_EMPTY"),
        (["build-potentials", "--arpa", "BAD", "--vocab-dir", "VOCAB"], "ARPA_FORMAT"),
        (["eval", "--vocab-dir", "VOCAB", "--annotations", "ANN", "--features", "FEAT",
          "--tensors", "FEAT", "--model", "MODEL"], "FORMAT"),
    ],
)
def test_error_categories(capsys, synth, tmp_path, argv, category):
    (tmp_path / "empty.jsonl").write_text("")
    (tmp_path / "bad.arpa").write_text("not an arpa file\n")
    (tmp_path / "m.json").write_text(json.dumps({"version": "why-model/1", "W": {k: [[0.0]] for k in KINDS},
                                                 "u": [0.0] * 13}))
    subst = {"EMPTY": tmp_path / "empty.jsonl", "BAD": tmp_path / "bad.arpa", "VOCAB": synth / "vocab",
             "ANN": synth / "annotations.jsonl", "FEAT": synth / "features.bin", "MODEL": tmp_path / "m.json"}
    code, _, err = run(capsys, *[subst.get(a, a) for a in argv])
    assert code in (1, 2)
    last = err.strip().splitlines()[-1]
    assert last.startswith("error: %s: " % category), last


def test_empty_selection(capsys, synth, tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"seed": 0, "train": ["img00000"], "test": []}))
    code, _, err = run(capsys, "eval", "--vocab-dir", synth / "vocab", "--annotations", synth / "annotations.jsonl",
                       "--features", synth / "features.bin", "--split", tmp_path / "s.json",
                       "--baseline", tmp_path / "none.json")
    assert code == 1 and "error: PATH_MISSING" in err
