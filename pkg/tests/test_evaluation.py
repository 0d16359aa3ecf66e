import csv
import io
import json
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.image import imread

from onoff_nilm.exceptions import ConfigurationError, UndefinedMetricError
from onoff_nilm.evaluation import (RE_COLUMN, DeviceCounts, ResultGrid, avg_improvement,
                                   bundle_report, confusion, degradation_per_step,
                                   empirical_random_check, evaluate, random_prob_re,
                                   random_prob_se, render_grid, se_probability_grid, weighted_f1)


def count_subsets(dit, sizes):
    return sum(1 for k in sizes for _ in combinations(range(dit), k))


class TestConfusion:
    def test_perfect(self):
        y = np.array([[1, 0], [0, 1], [1, 1]])
        for c in confusion(y, y):
            assert c.fp == c.fn == 0

    def test_inverted(self):
        y = np.array([[1, 0], [0, 1], [1, 1]])
        for c in confusion(1 - y, y):
            assert c.tp == c.tn == 0

    def test_hand_tally(self):
        preds = np.array([[1, 0], [1, 1], [0, 1], [0, 0]])
        labels = np.array([[1, 1], [0, 1], [0, 0], [1, 0]])
        a, b = confusion(preds, labels, ["a", "b"])
        assert (a.tp, a.fp, a.fn, a.tn) == (1, 1, 1, 1)
        assert (b.tp, b.fp, b.fn, b.tn) == (1, 1, 1, 1)
        assert a.device_id == "a" and a.support == 2

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            confusion(np.zeros((3, 2)), np.zeros((3, 3)))


class TestWeightedF1:
    def test_perfect(self):
        y = np.eye(4, dtype=int)
        assert evaluate(y, y).weighted_f1 == 1.0

    def test_hand_case(self):
        rep = weighted_f1([DeviceCounts("A", 1, 1, 0, 0), DeviceCounts("B", 1, 0, 1, 0)])
        assert [d.f1 for d in rep.per_device] == pytest.approx([2 / 3, 2 / 3])
        assert [d.weight for d in rep.per_device] == pytest.approx([1 / 3, 2 / 3])
        assert rep.weighted_f1 == pytest.approx(2 / 3)

    def test_zero_support_excluded(self):
        rep = weighted_f1([DeviceCounts("A", 3, 0, 0, 1), DeviceCounts("B", 0, 2, 0, 2)])
        assert rep.per_device[1].weight == 0
        assert rep.weighted_f1 == 1.0

    def test_zero_total_support(self):
        with pytest.raises(UndefinedMetricError):
            weighted_f1([DeviceCounts("A", 0, 3, 0, 1)])

    def test_zero_division_is_zero(self):
        rep = weighted_f1([DeviceCounts("A", 0, 0, 4, 0)])
        d = rep.per_device[0]
        assert (d.precision, d.recall, d.f1) == (0.0, 0.0, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 40), st.integers(0, 2 ** 31))
    def test_bounds_and_weights(self, n_dev, n, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, (n, n_dev))
        p = rng.integers(0, 2, (n, n_dev))
        if y.sum() == 0:
            return
        rep = evaluate(p, y)
        assert 0 <= rep.weighted_f1 <= 1
        assert sum(d.weight for d in rep.per_device) == pytest.approx(1, abs=1e-9)
        perfect = all(d.support == 0 or (c.fp == 0 and c.fn == 0)
                      for d, c in zip(rep.per_device, confusion(p, y)))
        assert (rep.weighted_f1 == 1.0) == perfect

    def test_exact_match(self):
        y = np.array([[1, 0], [0, 1]])
        assert evaluate(np.array([[1, 0], [1, 1]]), y).exact_match == 0.5

    def test_table_layout(self, tmp_path):
        y = np.array([[1, 0], [0, 1], [1, 1]])
        rep = evaluate(y, y, ["kettle", "fridge"])
        rep.write_table(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["device", "precision", "recall", "f1", "support"]
        assert [r[0] for r in rows[1:]] == ["kettle", "fridge", "Weighted avg."]
        assert rows[-1][3] == "1.0000"


class TestProbabilities:
    def test_quoted_cases(self):
        assert random_prob_se(5, 1) == 0.2
        assert random_prob_se(5, 2) == 0.1
        assert random_prob_se(10, 3, exact=True) == Fraction(1, 120)

    def test_re_cases(self):
        assert random_prob_re(3, 2, exact=True) == Fraction(1, 6)
        assert random_prob_re(5, 4, exact=True) == Fraction(1, 30)
        for n in range(1, 10):
            assert random_prob_re(n, n, exact=True) == Fraction(1, 2 ** n - 1)

    def test_enumeration(self):
        for dit in range(1, 13):
            for ad in range(1, dit + 1):
                assert random_prob_se(dit, ad, exact=True) == Fraction(1, count_subsets(dit, [ad]))
                assert random_prob_re(dit, ad, exact=True) == \
                    Fraction(1, count_subsets(dit, range(1, ad + 1)))

    def test_symmetry_and_minimum(self):
        for dit in range(2, 21):
            p = [random_prob_se(dit, a) for a in range(1, dit)]
            for a in range(1, dit):
                assert random_prob_se(dit, a) == random_prob_se(dit, dit - a)
            assert min(p) == random_prob_se(dit, dit // 2)

    @pytest.mark.parametrize("f,args", [(random_prob_se, (5, 0)), (random_prob_se, (5, 6)),
                                        (random_prob_re, (5, 0)), (random_prob_re, (3, 4))])
    def test_bounds(self, f, args):
        with pytest.raises(ConfigurationError):
            f(*args)


class TestEmpirical:
    @pytest.mark.parametrize("dit,policy,p", [(5, ("SE", 1), 0.2), (3, ("RE", 2), 1 / 6)])
    def test_within_3_sigma(self, dit, policy, p):
        est, se = empirical_random_check(dit, policy, 100_000, seed=0)
        sigma = (p * (1 - p) / 100_000) ** 0.5
        assert abs(est - p) < 3 * sigma
        assert se == pytest.approx(sigma, rel=0.05)

    def test_certain(self):
        assert empirical_random_check(4, ("SE", 4), 1000) == (1.0, 0.0)

    def test_min_trials(self):
        with pytest.raises(ConfigurationError):
            empirical_random_check(4, ("SE", 1), 10)


class TestStatistics:
    def test_improvement(self):
        assert avg_improvement([0.9, 0.8], [0.8, 0.6]) == 15.0
        assert avg_improvement([0.5, 0.7], [0.5, 0.7]) == 0.0

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
    def test_antisymmetric(self, pairs):
        a, b = zip(*pairs)
        assert avg_improvement(a, b) == -avg_improvement(b, a)

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            avg_improvement([0.1], [0.1, 0.2])

    def test_degradation_headline(self):
        g = ResultGrid([5, 10, 15], [RE_COLUMN], {(5, 0): 0.90, (10, 0): 0.83, (15, 0): 0.76})
        assert degradation_per_step(g) == 7.0

    def test_degradation_constant(self):
        g = ResultGrid([5, 10], [1], {(5, 1): 0.6, (10, 1): 0.6})
        assert degradation_per_step(g) == 0.0

    def test_degradation_two_columns(self):
        cells = {(5, 1): 0.9, (5, 2): 0.8, (10, 1): 0.7, (10, 2): 0.7, (10, 3): 0.1}
        g = ResultGrid([5, 10], [1, 2, 3], cells)
        # shared columns 1 and 2 only: drops 0.2 and 0.1
        assert degradation_per_step(g) == pytest.approx(15.0)

    def test_degradation_insufficient(self):
        with pytest.raises(ConfigurationError):
            degradation_per_step(ResultGrid([5, 15], [1], {(5, 1): 0.5, (15, 1): 0.4}))


class TestGrid:
    def test_invalid_cell(self):
        with pytest.raises(ConfigurationError):
            ResultGrid([5], [1], {(5, 1): 1.5})

    def test_csv_layout(self, tmp_path):
        g = ResultGrid([5, 10], [1, 2], {(5, 1): 0.9, (5, 2): 0.8, (10, 1): 0.7, (10, 2): 0.6})
        files = render_grid(g, tmp_path, "g")
        rows = list(csv.reader(open(files[0])))
        assert rows[0] == ["dit\\ad", "1", "2"]
        assert [r[0] for r in rows[1:]] == ["5", "10"]
        assert sum(1 for r in rows[1:] for v in r[1:] if v) == 4
        assert ResultGrid.from_csv(files[0].read_text()).cells == g.cells

    def test_unsupported_blank_and_masked(self, tmp_path):
        g = ResultGrid([5, 10], [1, 5], {(5, 1): 0.9, (10, 1): 0.7, (10, 5): 0.6})
        csv_path, png = render_grid(g, tmp_path, "g")[:2]
        rows = list(csv.reader(open(csv_path)))
        assert rows[1][2] == ""
        img = imread(png)[..., :3]
        assert (img == 1.0).all(axis=2).any()  # white masked pixels present

    def test_probability_curves(self, tmp_path):
        g = se_probability_grid([5, 10, 15, 20], 19)
        files = render_grid(g, tmp_path, "p")
        assert [f.name for f in files] == ["p.csv", "p.png", "p_curves.png"]
        for d in (5, 10, 15, 20):
            p = [g.get(d, a) for a in range(1, d)]
            k = int(np.argmin(p)) + 1
            assert abs(k - d / 2) <= 0.5
            assert all(np.diff(p[:k]) <= 0) and all(np.diff(p[k - 1:]) >= 0)

    def test_empty(self, tmp_path):
        with pytest.raises(ConfigurationError):
            render_grid(ResultGrid([5], [1], {}), tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            render_grid(ResultGrid([5], [1], {(5, 1): 0.5}), blocker / "sub")

    def test_bundle(self):
        y = np.eye(3, dtype=int)
        doc = json.loads(bundle_report(evaluate(y, y), grids={"ctrnn": ["a.csv"]}))
        assert doc["eval"]["weighted_f1"] == 1.0 and doc["grids"]["ctrnn"] == ["a.csv"]
