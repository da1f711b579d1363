"""Ranking evaluation of motivation predictions.

Each test image contributes the rank of its true motivation among all
motivations sorted by max-marginal score. Reports summarize ranks with a
category-normalized median (per-category mean rank, then the lower median
over categories) and an accuracy-versus-retrievals curve.
"""

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .graph import AXIS, concept_kind, language_array, max_marginals, score_array
from .knowledge import KINDS

NORMALIZATION_NOTE = "per-category mean rank, lower median across categories"
_LABELS = {"action": "Action", "object": "Object", "scene": "Scene", "motivation": "Motivation"}


class RankRecord(NamedTuple):
    image_id: str
    truth: int
    rank: int


def motivation_rank(scores, truth: int) -> int:
    """1-based rank of ``truth`` in descending ``scores``; lower index wins ties."""
    scores = np.asarray(scores)
    t = scores[truth]
    return int(np.sum(scores > t) + np.sum(scores[:truth] == t) + 1)


def rank_motivation(spec, model, features, truth_m, clamp=None, image_id="", scores=None) -> RankRecord:
    mm = max_marginals(spec, model, features, "motivation", clamp=clamp, scores=scores)
    return RankRecord(image_id, int(truth_m), motivation_rank(mm, truth_m))


def normalized_median_rank(records: Sequence[RankRecord]) -> float:
    """Median over categories of the mean rank within each category."""
    if not records:
        raise ValueError("no rank records")
    means = sorted(category_means(records).values())
    return float(means[(len(means) - 1) // 2])


def category_means(records) -> Dict[int, float]:
    groups = defaultdict(list)
    for r in records:
        groups[r.truth].append(r.rank)
    return {c: float(np.mean(v)) for c, v in sorted(groups.items())}


def accuracy_curve(records, n_categories) -> np.ndarray:
    """Entry ``K-1`` is the fraction of records with rank <= K, K = 1..n."""
    if not records:
        raise ValueError("no rank records")
    ranks = np.array([r.rank for r in records])
    counts = np.bincount(ranks, minlength=n_categories + 1)[1:n_categories + 1]
    return np.cumsum(counts) / len(ranks)


def mode_label(mode: str) -> str:
    """Human-readable tag: ``automatic`` -> ``Fully Automatic`` and so on."""
    if mode == "automatic":
        return "Fully Automatic"
    if mode == "no-trinary":
        return "no-trinary"
    kinds = parse_clamp(mode)
    return "+".join(_LABELS[k] for k in KINDS[1:] + KINDS[:1] if k in kinds)


def parse_clamp(mode: str) -> List[str]:
    """``clamp:a+o+s`` or ``a+o+s`` -> ``["action", "object", "scene"]``."""
    body = mode.split(":", 1)[1] if mode.startswith("clamp") else mode
    kinds = [concept_kind(p) for p in body.replace(",", "+").split("+") if p]
    if not kinds or "motivation" in kinds or len(set(kinds)) != len(kinds):
        raise ValueError("bad clamp set %r: use a non-empty subset of a, o, s" % mode)
    return [k for k in KINDS if k in kinds]


@dataclass
class EvalReport:
    mode: str
    label: str
    normalized_median_rank: float
    mean_rank: float
    category_means: Dict[int, float]
    accuracy: List[float]
    records: List[RankRecord] = field(default_factory=list)
    normalization: str = NORMALIZATION_NOTE

    @classmethod
    def from_records(cls, records, n_categories, mode):
        if not records:
            raise ValueError("empty test set")
        return cls(
            mode,
            mode_label(mode) if mode != "baseline" else "Baseline",
            normalized_median_rank(records),
            float(np.mean([r.rank for r in records])),
            category_means(records),
            accuracy_curve(records, n_categories).tolist(),
            list(records),
        )

    def to_json(self):
        return {
            "mode": self.mode,
            "label": self.label,
            "normalized_median_rank": self.normalized_median_rank,
            "mean_rank": self.mean_rank,
            "normalization": self.normalization,
            "n_images": len(self.records),
            "category_mean_ranks": {str(k): v for k, v in self.category_means.items()},
            "accuracy_at_k": self.accuracy,
            "ranks": [r._asdict() for r in self.records],
        }

    def to_text(self):
        lines = [
            "mode                    %s" % self.label,
            "images                  %d" % len(self.records),
            "normalized median rank  %.2f" % self.normalized_median_rank,
            "mean rank               %.2f" % self.mean_rank,
            "",
            "%5s  %8s" % ("K", "accuracy"),
        ]
        lines += ["%5d  %8.4f" % (k, a) for k, a in enumerate(self.accuracy, start=1)]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["K", "accuracy"])
        for k, a in enumerate(self.accuracy, start=1):
            w.writerow([k, repr(a)])
        return buf.getvalue()

    def write(self, prefix):
        with open(prefix + ".json", "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(prefix + ".txt", "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(prefix + ".csv", "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def run_protocol(spec, model, examples, mode="automatic") -> EvalReport:
    """Rank every test image's motivation under ``mode``.

    ``automatic`` maximizes over all configurations; ``clamp:<set>`` fixes
    the listed concepts to ground truth; ``no-trinary`` drops the three-way
    factors at inference (the model should have been trained without them).
    """
    if not examples:
        raise ValueError("empty test set")
    clamp_kinds = []
    if mode == "no-trinary":
        spec = spec.without_trinaries()
    elif mode != "automatic":
        clamp_kinds = parse_clamp(mode)
        mode = "clamp:" + "+".join(_short(k) for k in clamp_kinds)
    lang = language_array(spec, model.u)
    records = []
    for ex in examples:
        scores = score_array(spec, model, ex.features, language=lang)
        clamp = {k: ex.truth[AXIS[k]] for k in clamp_kinds} or None
        records.append(rank_motivation(spec, model, ex.features, ex.truth.m, clamp=clamp,
                                       image_id=ex.image_id, scores=scores))
    return EvalReport.from_records(records, spec.dims[0], mode)


def _short(kind):
    return kind[0]


def baseline_features(clf, ex, dims):
    from .learn import augment_features_with_oracle

    x = ex.features
    if clf.oracle:
        x = augment_features_with_oracle(x, ex.truth, clf.oracle, dims)
    return x


def evaluate_baseline(clf, examples, dims, mode="baseline") -> EvalReport:
    """Rank the true motivation under a vision-only classifier's scores."""
    if not examples:
        raise ValueError("empty test set")
    records = []
    for ex in examples:
        s = clf.decision_function(baseline_features(clf, ex, dims))[0]
        records.append(RankRecord(ex.image_id, int(ex.truth.m), motivation_rank(s, ex.truth.m)))
    report = EvalReport.from_records(records, dims[0], "automatic")
    report.mode = mode
    report.label = "Baseline" + (" (" + mode_label("clamp:" + "+".join(clf.oracle)) + ")" if clf.oracle else "")
    return report


def kfold(n, folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[i::folds]) for i in range(folds)]


def cross_validate(
    examples,
    grid: Sequence[float],
    train: Callable,
    evaluate: Callable,
    folds: int = 5,
    seed: int = 0,
    logger: Optional[Callable] = None,
):
    """Pick the grid value with the lowest mean held-out score.

    ``train(examples, value)`` returns a fitted object and
    ``evaluate(fitted, examples)`` returns a score where lower is better.
    Ties go to the earlier grid value. Returns ``(best, table)`` where
    ``table[value]`` lists per-fold scores.
    """
    folds = max(2, min(folds, len(examples)))
    parts = kfold(len(examples), folds, seed)
    table = {}
    for value in grid:
        scores = []
        for f, held in enumerate(parts):
            held_set = set(held.tolist())
            tr = [ex for i, ex in enumerate(examples) if i not in held_set]
            te = [examples[i] for i in held]
            score = evaluate(train(tr, value), te)
            scores.append(score)
            if logger:
                logger("C=%g fold %d: normalized median rank %.3f" % (value, f, score))
        table[value] = scores
    best = min(grid, key=lambda v: (float(np.mean(table[v])), list(grid).index(v)))
    return best, table
