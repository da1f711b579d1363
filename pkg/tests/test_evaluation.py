import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motive.dataset import Example
from motive.evaluation import (
    EvalReport,
    RankRecord,
    accuracy_curve,
    cross_validate,
    evaluate_baseline,
    mode_label,
    motivation_rank,
    normalized_median_rank,
    parse_clamp,
    run_protocol,
)
from motive.graph import Configuration
from motive.learn import LinearClassifier

from conftest import random_instance
from oracles import brute_max_marginals, brute_rank, brute_scores

DIMS = (5, 3, 2, 3)


def recs(pairs):
    return [RankRecord(str(i), t, r) for i, (t, r) in enumerate(pairs)]


class TestRank:
    def test_ties_go_to_lower_index(self):
        s = [1.0, 3.0, 3.0, 2.0]
        assert motivation_rank(s, 1) == 1
        assert motivation_rank(s, 2) == 2
        assert motivation_rank(s, 3) == 3
        assert motivation_rank(s, 0) == 4

    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=12), st.data())
    def test_matches_oracle(self, values, data):
        t = data.draw(st.integers(0, len(values) - 1))
        assert motivation_rank(np.array(values, float), t) == brute_rank(values, t)


class TestSummaries:
    def test_lower_median_of_category_means(self):
        # category means: 0 -> 2, 1 -> 10
        assert normalized_median_rank(recs([(0, 1), (0, 3), (1, 10)])) == 2.0
        # three categories: means 4, 1, 7
        assert normalized_median_rank(recs([(0, 4), (1, 1), (2, 7)])) == 4.0

    def test_median_is_category_balanced(self):
        many = recs([(0, 1)] * 50 + [(1, 9), (2, 9)])
        assert normalized_median_rank(many) == 9.0

    def test_accuracy_curve(self):
        c = accuracy_curve(recs([(0, 1), (1, 2), (2, 2), (3, 4)]), 4)
        assert np.allclose(c, [0.25, 0.75, 0.75, 1.0])
        assert np.all(np.diff(c) >= 0)

    def test_empty(self):
        with pytest.raises(ValueError):
            normalized_median_rank([])
        with pytest.raises(ValueError):
            EvalReport.from_records([], 3, "automatic")


class TestModes:
    @pytest.mark.parametrize(
        "mode, label",
        [
            ("automatic", "Fully Automatic"),
            ("clamp:a", "Action"),
            ("clamp:s+o+a", "Action+Object+Scene"),
            ("clamp:o,s", "Object+Scene"),
            ("no-trinary", "no-trinary"),
        ],
    )
    def test_labels(self, mode, label):
        assert mode_label(mode) == label

    @pytest.mark.parametrize("bad", ["clamp:", "clamp:m", "clamp:a+a", "clamp:x"])
    def test_bad_clamp(self, bad):
        with pytest.raises(ValueError):
            parse_clamp(bad)


def examples_for(rng, n, D=3):
    return [
        Example(str(i), rng.standard_normal(D), Configuration(*(int(rng.integers(d)) for d in DIMS)))
        for i in range(n)
    ]


class TestProtocol:
    @pytest.mark.parametrize("mode, clamp_axes", [("automatic", ()), ("clamp:a", (1,)), ("clamp:a+o+s", (1, 2, 3))])
    def test_ranks_match_brute_force(self, rng, mode, clamp_axes):
        spec, model, _ = random_instance(rng, DIMS)
        exs = examples_for(rng, 12)
        report = run_protocol(spec, model, exs, mode)
        names = ["motivation", "action", "object", "scene"]
        for ex, r in zip(exs, report.records):
            scores = brute_scores(spec, model.W, model.u, ex.features)
            clamp = {names[a]: ex.truth[a] for a in clamp_axes} or None
            mm = brute_max_marginals(scores, DIMS, 0, clamp)
            assert r.rank == brute_rank(list(mm), ex.truth.m)

    def test_clamping_everything_but_motivation_equals_unaries_plus_factors(self, rng):
        # with a, o and s fixed, the rank depends only on the motivation scores of that slice
        spec, model, _ = random_instance(rng, DIMS)
        exs = examples_for(rng, 8)
        a = run_protocol(spec, model, exs, "clamp:a+o+s")
        b = run_protocol(spec, model, exs, "clamp:s+a+o")
        assert [r.rank for r in a.records] == [r.rank for r in b.records]
        assert a.mode == b.mode == "clamp:a+o+s"

    def test_invariant_to_score_shift_and_scale(self, rng):
        spec, model, _ = random_instance(rng, DIMS)
        exs = examples_for(rng, 10)
        base = run_protocol(spec, model, exs)
        scaled = model.with_u(model.u * 3.0)
        scaled.W = [w * 3.0 for w in model.W]
        assert [r.rank for r in run_protocol(spec, scaled, exs).records] == [r.rank for r in base.records]

    def test_no_trinary_mode(self, rng):
        spec, model, _ = random_instance(rng, DIMS)
        exs = examples_for(rng, 10)
        u = model.u.copy()
        u[10:] = 0.0
        want = run_protocol(spec, model.with_u(u), exs)
        got = run_protocol(spec, model, exs, "no-trinary")
        assert [r.rank for r in got.records] == [r.rank for r in want.records]

    def test_report_outputs(self, rng, tmp_path):
        spec, model, _ = random_instance(rng, DIMS)
        report = run_protocol(spec, model, examples_for(rng, 10), "clamp:a+o+s")
        report.write(str(tmp_path / "r"))
        text = (tmp_path / "r.txt").read_text()
        assert "Action+Object+Scene" in text
        csv = (tmp_path / "r.csv").read_text().splitlines()
        assert csv[0] == "K,accuracy" and len(csv) == DIMS[0] + 1
        assert float(csv[-1].split(",")[1]) == 1.0


def test_baseline_report(rng):
    W = rng.standard_normal((5, 3))
    clf = LinearClassifier(W, np.zeros(5), "one-vs-rest")
    exs = examples_for(rng, 10)
    report = evaluate_baseline(clf, exs, DIMS)
    assert report.label == "Baseline"
    for ex, r in zip(exs, report.records):
        assert r.rank == brute_rank(list(W @ ex.features), ex.truth.m)
    oracle = LinearClassifier(np.zeros((5, 3 + 3)), np.zeros(5), "one-vs-rest", ("action",))
    assert evaluate_baseline(oracle, exs, DIMS).label == "Baseline (Action)"


def test_cross_validate_picks_lowest_and_breaks_ties_early():
    items = list(range(10))
    logged = []
    best, table = cross_validate(items, [1.0, 2.0, 3.0], lambda tr, v: v,
                                 lambda v, te: abs(v - 2.5) // 1, folds=5, logger=logged.append)
    assert best == 2.0
    assert set(table) == {1.0, 2.0, 3.0} and all(len(v) == 5 for v in table.values())
    assert len(logged) == 15


def test_duplicating_a_category_leaves_the_median_unchanged():
    base = recs([(0, 3), (0, 5), (1, 1), (2, 8), (2, 2)])
    doubled = base + [r for r in base if r.truth == 2]
    assert normalized_median_rank(doubled) == normalized_median_rank(base)
    assert accuracy_curve(doubled, 8)[-1] == 1.0


def test_rank_invariant_under_increasing_transform(rng):
    s = rng.standard_normal(20)
    for t in range(20):
        assert motivation_rank(np.exp(3 * s) - 7, t) == motivation_rank(s, t)


def test_clamping_only_lowers_the_true_max_marginal(rng):
    from motive.graph import max_marginals

    spec, model, _ = random_instance(rng, DIMS)
    for ex in examples_for(rng, 10):
        free = max_marginals(spec, model, ex.features)[ex.truth.m]
        for clamp in ({"a": ex.truth.a}, {"a": ex.truth.a, "o": ex.truth.o, "s": ex.truth.s}):
            assert max_marginals(spec, model, ex.features, clamp=clamp)[ex.truth.m] <= free


def test_truthful_language_factors_give_rank_one():
    # a trinary factor that scores 1 only on each image's true (m, a, s) and a
    # clamp on a, o, s leaves the true motivation alone at the top
    from motive.graph import GraphSpec
    from motive.knowledge import FACTORS, KINDS
    from motive.learn import Model

    dims = (4, 4, 2, 3)
    exs = [Example(str(m), np.zeros(2), Configuration(m, m, m % 2, m % 3)) for m in range(4)]
    tensors = [np.zeros(tuple(dims[KINDS.index(k)] for k in rel)) for rel in FACTORS]
    for ex in exs:
        tensors[12][ex.truth.m, ex.truth.a, ex.truth.s] = 1.0
    spec = GraphSpec(dims, tensors, 2)
    u = np.zeros(13)
    u[12] = 5.0
    model = Model([np.zeros((d, 2)) for d in dims], u)
    report = run_protocol(spec, model, exs, "clamp:a+o+s")
    assert report.normalized_median_rank == 1.0
    assert report.accuracy[0] == 1.0
