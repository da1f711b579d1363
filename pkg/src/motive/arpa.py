"""ARPA backoff n-gram language models.

Reads the standard ARPA text format and scores token sequences with the
usual backoff recursion. Probabilities stay in log10 throughout.
"""

import io
import math
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"

DEFAULT_OOV_FLOOR = -7.0

_NGRAM_HEADER = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


class ArpaError(ValueError):
    """Malformed ARPA input. Carries the offending line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = "line %d: %s" % (lineno, message)
        super().__init__(message)


@dataclass(frozen=True)
class NGramModel:
    """Immutable backoff language model.

    ``entries`` maps a token tuple to ``(log10_prob, backoff)``; ``backoff``
    is ``None`` when the file gave none (always for highest-order entries).
    """

    order: int
    entries: Dict[Tuple[str, ...], Tuple[float, Optional[float]]]
    oov_floor: float = DEFAULT_OOV_FLOOR
    vocab: frozenset = field(init=False)
    has_unk: bool = field(init=False)

    def __post_init__(self):
        vocab = frozenset(k[0] for k in self.entries if len(k) == 1)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "has_unk", UNK in vocab)

    def with_oov_floor(self, floor):
        return NGramModel(self.order, self.entries, oov_floor=float(floor))

    def logprob_word(self, context: Sequence[str], word: str) -> float:
        return logprob_word(self, context, word)

    def score_sequence(self, tokens: Sequence[str], boundary: bool = False):
        return score_sequence(self, tokens, boundary)


def _parse_float(text, lineno, what):
    try:
        value = float(text)
    except ValueError:
        raise ArpaError("non-numeric %s %r" % (what, text), lineno) from None
    if not math.isfinite(value):
        raise ArpaError("non-finite %s %r" % (what, text), lineno)
    return value


def load_arpa(source, oov_floor: float = DEFAULT_OOV_FLOOR) -> NGramModel:
    """Parse an ARPA file.

    Parameters
    ----------
    source : str, os.PathLike or text stream
        A path or an open text stream.
    oov_floor : float
        log10 score assigned to out-of-vocabulary words when the model
        has no ``<unk>`` entry.

    Returns
    -------
    NGramModel

    Raises
    ------
    ArpaError
        On a malformed header, count mismatch, non-numeric field, missing
        ``\\end\\`` marker, an n-gram longer than the declared order, or an
        n-gram whose context is absent.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return _parse(fh, oov_floor)
    return _parse(source, oov_floor)


def loads_arpa(text: str, oov_floor: float = DEFAULT_OOV_FLOOR) -> NGramModel:
    return _parse(io.StringIO(text), oov_floor)


def _parse(stream: Iterable[str], oov_floor) -> NGramModel:
    lines = enumerate(stream, start=1)
    declared: Dict[int, int] = {}
    lineno = 0

    # skip any preamble before \data\
    for lineno, raw in lines:
        if raw.strip() == "\\data\\":
            break
    else:
        raise ArpaError("missing \\data\\ header", lineno or None)

    section = None
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            continue
        m = _NGRAM_HEADER.match(line)
        if m:
            n, count = int(m.group(1)), int(m.group(2))
            if n < 1 or n in declared:
                raise ArpaError("bad ngram declaration %r" % line, lineno)
            declared[n] = count
            continue
        m = _SECTION.match(line)
        if m:
            section = int(m.group(1))
            break
        raise ArpaError("malformed header line %r" % line, lineno)
    else:
        raise ArpaError("missing \\end\\ marker", lineno)

    if not declared:
        raise ArpaError("header declares no n-gram counts", lineno)
    order = max(declared)
    if sorted(declared) != list(range(1, order + 1)):
        raise ArpaError("header counts are not contiguous from 1", lineno)

    entries: Dict[Tuple[str, ...], Tuple[float, Optional[float]]] = {}
    counts = {n: 0 for n in declared}
    ended = False

    def check_section(n, at):
        if n not in declared:
            raise ArpaError("%d-gram section exceeds declared order %d" % (n, order), at)

    check_section(section, lineno)
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line == "\\end\\":
            ended = True
            break
        m = _SECTION.match(line)
        if m:
            section = int(m.group(1))
            check_section(section, lineno)
            continue
        fields = raw.rstrip("\r\n").split("\t")
        if len(fields) == 1:
            fields = line.split()
            prob, words, bo = fields[0], fields[1:1 + section], fields[1 + section:]
            if len(words) != section or len(bo) > 1:
                raise ArpaError("wrong token count for a %d-gram" % section, lineno)
            bo = bo[0] if bo else None
        else:
            if len(fields) not in (2, 3):
                raise ArpaError("expected 2 or 3 tab-separated fields", lineno)
            prob, words = fields[0], fields[1].split()
            bo = fields[2] if len(fields) == 3 else None
            if len(words) > order:
                raise ArpaError(
                    "%d-gram longer than declared order %d" % (len(words), order), lineno
                )
            if len(words) != section:
                raise ArpaError(
                    "%d tokens in the %d-grams section" % (len(words), section), lineno
                )
        logp = _parse_float(prob, lineno, "log10 probability")
        backoff = None
        if bo is not None and bo.strip():
            if section == order:
                raise ArpaError("backoff weight on a highest-order n-gram", lineno)
            backoff = _parse_float(bo, lineno, "backoff weight")
        key = tuple(words)
        if key in entries:
            raise ArpaError("duplicate n-gram %r" % " ".join(key), lineno)
        if section > 1 and key[:-1] not in entries:
            raise ArpaError("context of %r is missing" % " ".join(key), lineno)
        entries[key] = (logp, backoff)
        counts[section] += 1

    if not ended:
        raise ArpaError("missing \\end\\ marker", lineno)
    for n in sorted(declared):
        if counts[n] != declared[n]:
            raise ArpaError(
                "ngram %d declared %d entries, found %d" % (n, declared[n], counts[n]), lineno
            )
    return NGramModel(order, entries, oov_floor=float(oov_floor))


def logprob_word(model: NGramModel, context: Sequence[str], word: str) -> float:
    """log10 P(word | context) under backoff.

    A word outside the vocabulary is mapped to ``<unk>`` when the model has
    one, otherwise it scores ``model.oov_floor``. Context tokens outside the
    vocabulary are mapped the same way (or simply never match).
    """
    if word not in model.vocab:
        if not model.has_unk:
            return model.oov_floor
        word = UNK
    ctx = tuple(context)
    if len(ctx) > model.order - 1:
        ctx = ctx[len(ctx) - (model.order - 1):]
    if model.has_unk:
        ctx = tuple(t if t in model.vocab else UNK for t in ctx)
    entries = model.entries
    total = 0.0
    while True:
        hit = entries.get(ctx + (word,))
        if hit is not None:
            return total + hit[0]
        # ctx is nonempty here: the word itself is a unigram entry
        ctx_entry = entries.get(ctx)
        if ctx_entry is not None and ctx_entry[1] is not None:
            total += ctx_entry[1]
        ctx = ctx[1:]


def score_sequence(model: NGramModel, tokens: Sequence[str], boundary: bool = False):
    """Score a token sequence.

    Returns ``(total, per_token)`` in log10, where ``per_token`` divides by
    the number of scored tokens. With ``boundary`` set, ``<s>`` is used as
    initial context and ``</s>`` is scored at the end.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot score an empty token sequence")
    history = [BOS] if boundary else []
    targets = tokens + [EOS] if boundary else tokens
    keep = model.order - 1
    total = 0.0
    for tok in targets:
        ctx = history[len(history) - keep:] if keep > 0 else []
        total += logprob_word(model, ctx, tok)
        history.append(tok)
    return total, total / len(targets)
