"""Language-derived potentials over concept vocabularies.

Template sentences such as ``ACTION the OBJECT in order to MOTIVATION`` are
instantiated with every combination of vocabulary terms and scored with an
n-gram model. Each cell of a potential tensor holds the mean per-token log10
score over a relation's templates.
"""

import hashlib
import io
import itertools
import json
import os
import re
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

KINDS = ("motivation", "action", "object", "scene")
SHORT = {"motivation": "m", "action": "a", "object": "o", "scene": "s"}
SLOTS = {"MOTIVATION": "motivation", "ACTION": "action", "OBJECT": "object", "SCENE": "scene"}
PRONOUN = "PRONOUN"
DEFAULT_PRONOUNS = ("he", "she")

CONTAINER_MAGIC = b"WHYPOT1\0"
CONTAINER_VERSION = 1

_TOKEN = re.compile(r"[A-Za-z0-9_'\-]+|[^\sA-Za-z0-9_'\-]")


class KnowledgeError(ValueError):
    pass


class ContainerError(KnowledgeError):
    pass


def canonical(relation) -> Tuple[str, ...]:
    """Order a set of concept kinds as (motivation, action, object, scene)."""
    kinds = set(relation)
    unknown = kinds - set(KINDS)
    if unknown:
        raise KnowledgeError("unknown concept kind(s): %s" % ", ".join(sorted(unknown)))
    return tuple(k for k in KINDS if k in kinds)


def relation_name(relation) -> str:
    return "+".join(SHORT[k] for k in relation)


def default_factor_list() -> List[Tuple[str, ...]]:
    """The 13 factors of the model: 4 unaries, 6 pairs, 3 triples.

    The object-scene-motivation triple is left out.
    """
    unaries = [(k,) for k in KINDS]
    pairs = [canonical(p) for p in itertools.combinations(KINDS, 2)]
    triples = [
        canonical(("action", "object", "motivation")),
        canonical(("action", "object", "scene")),
        canonical(("action", "scene", "motivation")),
    ]
    return unaries + pairs + triples


FACTORS = default_factor_list()


@dataclass(frozen=True)
class Vocabulary:
    kind: str
    terms: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KnowledgeError("unknown vocabulary kind %r" % self.kind)
        seen = set()
        for term in self.terms:
            if not term or any(not t for t in term):
                raise KnowledgeError("empty term in %s vocabulary" % self.kind)
            if term in seen:
                raise KnowledgeError("duplicate term %r in %s vocabulary" % (" ".join(term), self.kind))
            seen.add(term)

    @classmethod
    def from_strings(cls, kind, terms):
        return cls(kind, tuple(tuple(normalize_label(t).split(" ")) for t in terms))

    def __len__(self):
        return len(self.terms)

    @property
    def strings(self) -> List[str]:
        return [" ".join(t) for t in self.terms]

    def index(self, label: str) -> int:
        return self._lookup[tuple(normalize_label(label).split(" "))]

    def __contains__(self, label):
        return tuple(normalize_label(label).split(" ")) in self._lookup

    @property
    def _lookup(self):
        # frozen dataclass: build lazily and stash
        try:
            return self.__dict__["_lookup_cache"]
        except KeyError:
            table = {t: i for i, t in enumerate(self.terms)}
            object.__setattr__(self, "_lookup_cache", table)
            return table

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.encode())
        for term in self.terms:
            h.update(b"\n")
            h.update(" ".join(term).encode("utf-8"))
        return h.hexdigest()


def normalize_label(text: str) -> str:
    return " ".join(text.lower().split())


def read_vocabulary(path, kind) -> Vocabulary:
    """One term per line, tokens separated by spaces; line order is index order."""
    with open(path, encoding="utf-8") as fh:
        terms = [line.strip() for line in fh if line.strip()]
    return Vocabulary.from_strings(kind, terms)


def write_vocabulary(vocab: Vocabulary, path):
    with open(path, "w", encoding="utf-8") as fh:
        for term in vocab.strings:
            fh.write(term + "\n")


def read_vocabularies(directory) -> Dict[str, Vocabulary]:
    """Read ``motivation.txt``, ``action.txt``, ``object.txt``, ``scene.txt``."""
    return {k: read_vocabulary(os.path.join(directory, k + ".txt"), k) for k in KINDS}


def tokenize_template(text: str) -> Tuple[str, ...]:
    return tuple(_TOKEN.findall(text))


@dataclass(frozen=True)
class TemplateSet:
    relation: Tuple[str, ...]
    templates: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "relation", canonical(self.relation))
        if not self.templates:
            raise KnowledgeError("no templates for relation %s" % relation_name(self.relation))
        for tpl in self.templates:
            slots = {SLOTS[t] for t in tpl if t in SLOTS}
            if slots != set(self.relation):
                raise KnowledgeError(
                    "template %r does not mention exactly the slots of %s"
                    % (" ".join(tpl), relation_name(self.relation))
                )

    @classmethod
    def from_strings(cls, relation, templates):
        return cls(canonical(relation), tuple(tokenize_template(t) for t in templates))


def parse_templates(text: str) -> Dict[Tuple[str, ...], TemplateSet]:
    """Parse ``kinds: template`` lines; kinds are joined by ``,`` or ``+``."""
    grouped: Dict[Tuple[str, ...], List[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, body = line.partition(":")
        if not sep or not body.strip():
            raise KnowledgeError("templates line %d: expected 'kinds: template'" % lineno)
        kinds = [k.strip().lower() for k in re.split(r"[,+]", head) if k.strip()]
        try:
            rel = canonical(kinds)
        except KnowledgeError as exc:
            raise KnowledgeError("templates line %d: %s" % (lineno, exc)) from None
        if len(rel) != len(kinds):
            raise KnowledgeError("templates line %d: repeated kind" % lineno)
        grouped.setdefault(rel, []).append(body.strip())
    return {rel: TemplateSet.from_strings(rel, tpls) for rel, tpls in grouped.items()}


def read_templates(path=None) -> Dict[Tuple[str, ...], TemplateSet]:
    if path is None:
        text = resources.files("motive").joinpath("templates.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_templates(text)


@dataclass
class PotentialTensor:
    """Dense score table over one, two or three concepts.

    Axes follow the canonical concept order; the last axis varies fastest.
    ``normalization`` is the ``(mean, std)`` that was removed, if any, and
    ``vocab_hashes`` ties the tensor to the vocabularies it was built from.
    """

    relation: Tuple[str, ...]
    values: np.ndarray
    vocab_hashes: Dict[str, str] = field(default_factory=dict)
    normalization: Optional[Tuple[float, float]] = None
    queries: int = 0

    def __post_init__(self):
        self.relation = canonical(self.relation)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != len(self.relation):
            raise KnowledgeError("tensor rank does not match relation %s" % relation_name(self.relation))
        if not np.all(np.isfinite(self.values)):
            raise KnowledgeError("non-finite values in %s tensor" % relation_name(self.relation))

    @property
    def dims(self):
        return self.values.shape

    @property
    def name(self):
        return relation_name(self.relation)


def instantiate(template, assignment, pronoun=None) -> List[str]:
    """Fill slot markers with term tokens; everything is lowercased."""
    out: List[str] = []
    for tok in template:
        if tok in SLOTS:
            out.extend(assignment[SLOTS[tok]])
        elif tok == PRONOUN:
            out.append(pronoun)
        else:
            out.append(tok.lower())
    return [t.lower() for t in out]


def _expansions(template, pronouns):
    return list(pronouns) if PRONOUN in template else [None]


def build_tensor(
    model,
    vocabs: Dict[str, Vocabulary],
    tset: TemplateSet,
    pronouns: Sequence[str] = DEFAULT_PRONOUNS,
    boundary: bool = False,
    workers: int = 1,
) -> PotentialTensor:
    """Fill a potential tensor by template queries against ``model``.

    ``model`` only needs a ``score_sequence(tokens, boundary)`` method that
    returns ``(total, per_token)``. The cell value is the mean per-token score
    over all template and pronoun instantiations.
    """
    missing = [k for k in tset.relation if k not in vocabs]
    if missing:
        raise KnowledgeError(
            "relation %s references %s with no vocabulary"
            % (relation_name(tset.relation), ", ".join(missing))
        )
    if any(PRONOUN in t for t in tset.templates) and not pronouns:
        raise KnowledgeError("templates use PRONOUN but the pronoun list is empty")
    rel = tset.relation
    dims = tuple(len(vocabs[k]) for k in rel)
    jobs = [(tpl, p) for tpl in tset.templates for p in _expansions(tpl, pronouns)]
    cells = list(itertools.product(*(range(d) for d in dims)))

    def fill(chunk):
        out = []
        for idx in chunk:
            assignment = {k: vocabs[k].terms[i] for k, i in zip(rel, idx)}
            acc = 0.0
            for tpl, p in jobs:
                acc += model.score_sequence(instantiate(tpl, assignment, p), boundary)[1]
            out.append(acc / len(jobs))
        return out

    if workers > 1 and len(cells) > 1:
        size = -(-len(cells) // workers)
        chunks = [cells[i:i + size] for i in range(0, len(cells), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flat = [v for part in pool.map(fill, chunks) for v in part]
    else:
        flat = fill(cells)
    values = np.array(flat, dtype=np.float64).reshape(dims)
    return PotentialTensor(
        rel,
        values,
        vocab_hashes={k: vocabs[k].content_hash() for k in rel},
        queries=len(cells) * len(jobs),
    )


def standardize(t: PotentialTensor) -> PotentialTensor:
    """Shift to zero mean and scale to unit (population) standard deviation.

    A constant tensor passes through unchanged with std recorded as 1. The
    recorded normalization composes with any earlier one so it always maps
    back to the raw scores.
    """
    v = t.values
    mean = float(v.mean())
    std = float(v.std())
    if not std > 0 or not np.isfinite(std):
        mean, std = 0.0, 1.0
        out = v.copy()
    else:
        out = (v - mean) / std
    if t.normalization is not None:
        m0, s0 = t.normalization
        mean, std = m0 + s0 * mean, s0 * std
    return PotentialTensor(t.relation, out, dict(t.vocab_hashes), (mean, std), t.queries)


def build_potentials(model, vocabs, templates, factors=None, standardized=True, **kwargs):
    """Build one tensor per factor, in factor-list order."""
    factors = FACTORS if factors is None else factors
    out = []
    for rel in factors:
        rel = canonical(rel)
        if rel not in templates:
            raise KnowledgeError("no template for factor %s" % relation_name(rel))
        t = build_tensor(model, vocabs, templates[rel], **kwargs)
        out.append(standardize(t) if standardized else t)
    return out


def vocabulary_hashes(vocabs: Dict[str, Vocabulary]) -> Dict[str, str]:
    return {k: vocabs[k].content_hash() for k in KINDS if k in vocabs}


def write_container(tensors: Sequence[PotentialTensor], sink):
    """Serialize tensors to ``sink`` (a path or binary stream).

    Layout: magic, u32 manifest length, UTF-8 JSON manifest, float64 LE
    payloads in row-major order, u32 CRC-32 of the payload.
    """
    hashes: Dict[str, str] = {}
    for t in tensors:
        for k, h in t.vocab_hashes.items():
            if hashes.setdefault(k, h) != h:
                raise ContainerError("tensors were built against different %s vocabularies" % k)
    offset = 0
    entries = []
    payload = io.BytesIO()
    for t in tensors:
        raw = np.ascontiguousarray(t.values, dtype="<f8").tobytes()
        entries.append(
            {
                "relation": list(t.relation),
                "dims": list(t.dims),
                "offset": offset,
                "normalization": list(t.normalization) if t.normalization else None,
                "queries": t.queries,
            }
        )
        payload.write(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"version": CONTAINER_VERSION, "vocab_hashes": hashes, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = payload.getvalue()
    blob = (
        CONTAINER_MAGIC
        + struct.pack("<I", len(manifest))
        + manifest
        + body
        + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    )
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(blob)
    else:
        sink.write(blob)


def read_container(source, vocabs: Optional[Dict[str, Vocabulary]] = None) -> List[PotentialTensor]:
    """Inverse of :func:`write_container`.

    When ``vocabs`` is given, the stored vocabulary hashes must match.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            blob = fh.read()
    else:
        blob = source.read()
    if blob[:8] != CONTAINER_MAGIC:
        raise ContainerError("bad magic: not a potential container")
    if len(blob) < 12:
        raise ContainerError("truncated container header")
    (mlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + mlen + 4:
        raise ContainerError("truncated container")
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError("corrupt manifest: %s" % exc) from None
    if manifest.get("version") != CONTAINER_VERSION:
        raise ContainerError("unsupported container version %r" % manifest.get("version"))
    body = blob[12 + mlen:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    expected = sum(8 * int(np.prod(e["dims"])) for e in manifest["tensors"])
    if len(body) != expected:
        raise ContainerError("truncated payload: %d bytes, expected %d" % (len(body), expected))
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ContainerError("checksum mismatch: payload is corrupt")
    stored = manifest["vocab_hashes"]
    if vocabs is not None:
        for k, h in stored.items():
            if k in vocabs and vocabs[k].content_hash() != h:
                raise ContainerError("vocabulary hash mismatch for %s" % k)
    out = []
    for e in manifest["tensors"]:
        n = int(np.prod(e["dims"]))
        values = np.frombuffer(body, dtype="<f8", count=n, offset=e["offset"]).reshape(e["dims"])
        rel = tuple(e["relation"])
        norm = tuple(e["normalization"]) if e["normalization"] is not None else None
        out.append(
            PotentialTensor(
                rel,
                values.astype(np.float64),
                {k: stored[k] for k in rel},
                norm,
                e.get("queries", 0),
            )
        )
    return out
