"""Annotated examples, feature matrices and train/test splits."""

import difflib
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .graph import Configuration
from .knowledge import KINDS, Vocabulary, normalize_label

FEATURE_MAGIC = b"WHYFEA1\0"


class DataError(ValueError):
    pass


@dataclass
class Example:
    image_id: str
    features: np.ndarray
    truth: Configuration
    reduced: bool = False


@dataclass
class Split:
    seed: int
    train: List[str]
    test: List[str]

    def to_json(self):
        return {"seed": self.seed, "train": list(self.train), "test": list(self.test)}


def write_features(path, ids: Sequence[str], X):
    """Binary matrix plus an ``.ids`` sidecar listing row ids in order."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2 or len(X) != len(ids):
        raise DataError("feature matrix must be 2-D with one row per id")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
        fh.write(X.tobytes())
    with open(str(path) + ".ids", "w", encoding="utf-8") as fh:
        for i in ids:
            fh.write("%s\n" % i)


def read_features(path):
    """Return ``(ids, X)`` from a feature matrix and its sidecar."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != FEATURE_MAGIC:
        raise DataError("%s: bad magic, not a feature matrix" % path)
    if len(blob) < 24:
        raise DataError("%s: truncated header" % path)
    rows, dim = struct.unpack("<QQ", blob[8:24])
    if len(blob) != 24 + 8 * rows * dim:
        raise DataError("%s: payload length does not match %d x %d" % (path, rows, dim))
    X = np.frombuffer(blob, dtype="<f8", offset=24).reshape(rows, dim).astype(np.float64)
    sidecar = str(path) + ".ids"
    if not os.path.exists(sidecar):
        raise DataError("%s: missing id sidecar %s" % (path, sidecar))
    with open(sidecar, encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh if line.strip()]
    if len(ids) != rows:
        raise DataError("%s: %d ids for %d rows" % (path, len(ids), rows))
    if len(set(ids)) != len(ids):
        raise DataError("%s: duplicate ids in sidecar" % path)
    return ids, X


def read_annotations(path) -> List[Dict[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError("%s line %d: %s" % (path, lineno, exc)) from None
            missing = [k for k in ("image_id",) + KINDS if k not in rec]
            if missing:
                raise DataError("%s line %d: missing %s" % (path, lineno, ", ".join(missing)))
            rows.append(rec)
    return rows


def write_annotations(path, examples: Sequence[Example], vocabs: Dict[str, Vocabulary]):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"image_id": ex.image_id}
            for k, i in zip(KINDS, ex.truth):
                rec[k] = vocabs[k].strings[i]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _resolve(vocab: Vocabulary, label, image_id):
    label = normalize_label(str(label))
    if label in vocab:
        return vocab.index(label)
    close = difflib.get_close_matches(label, vocab.strings, n=1)
    hint = " (did you mean %r?)" % close[0] if close else ""
    raise DataError("image %s: unknown %s term %r%s" % (image_id, vocab.kind, label, hint))


def build_examples(annotations, ids, X, vocabs, reduced=False) -> List[Example]:
    row = {i: r for r, i in enumerate(ids)}
    seen = set()
    out = []
    for rec in annotations:
        image_id = str(rec["image_id"])
        if image_id in seen:
            raise DataError("duplicate image_id %s" % image_id)
        seen.add(image_id)
        if image_id not in row:
            raise DataError("image %s has no feature row" % image_id)
        truth = Configuration(*(_resolve(vocabs[k], rec[k], image_id) for k in KINDS))
        out.append(Example(image_id, np.array(X[row[image_id]]), truth, reduced))
    return out


def load_dataset(annotation_path, feature_path, vocabs, reduced=False) -> List[Example]:
    """Join annotations with feature rows and resolve labels to indices."""
    ids, X = read_features(feature_path)
    return build_examples(read_annotations(annotation_path), ids, X, vocabs, reduced)


def make_split(ids: Sequence[str], seed: int) -> Split:
    """Shuffle by ``seed``; the first (larger) half trains."""
    ids = list(ids)
    if len(ids) < 2:
        raise DataError("need at least two ids to split")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ids")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    cut = (len(ids) + 1) // 2
    return Split(int(seed), shuffled[:cut], shuffled[cut:])


def write_split(split: Split, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=1)
        fh.write("\n")


def read_split(path) -> Split:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    split = Split(int(data["seed"]), list(data["train"]), list(data["test"]))
    if set(split.train) & set(split.test):
        raise DataError("%s: train and test overlap" % path)
    return split


def select(examples, ids):
    by_id = {ex.image_id: ex for ex in examples}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError("split references unknown image ids: %s" % ", ".join(missing[:5]))
    return [by_id[i] for i in ids]
