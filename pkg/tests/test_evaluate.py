import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multilabel_t.datagen import TransitionMatrix2
from multilabel_t.errors import ValidationError
from multilabel_t.evaluate import (
    CSV_COLUMNS,
    average_precision,
    classification_metrics,
    estimation_error,
    run_sweep,
)
from multilabel_t.pipeline import ExperimentConfig, with_overrides

rates = st.floats(0.0, 0.49)


def ref_ap(score, truth):
    # precision at every positive, ranking by descending score, ties by index
    order = sorted(range(len(score)), key=lambda i: (-score[i], i))
    hits, total, out = 0, 0, []
    for k, i in enumerate(order, 1):
        if truth[i]:
            hits += 1
            out.append(hits / k)
    return sum(out) / len(out) if out else float("nan")


def ref_metrics(scores, truth):
    n, q = scores.shape
    tp = [[0] * q, [0] * q, [0] * q]  # tp, predicted, positives
    for i in range(n):
        for j in range(q):
            pred = scores[i, j] > 0.5
            tp[0][j] += pred and truth[i, j]
            tp[1][j] += pred
            tp[2][j] += truth[i, j]

    def div(a, b):
        return a / b if b else 0.0

    P, R = div(sum(tp[0]), sum(tp[1])), div(sum(tp[0]), sum(tp[2]))
    cp = sum(div(tp[0][j], tp[1][j]) for j in range(q)) / q
    cr = sum(div(tp[0][j], tp[2][j]) for j in range(q)) / q
    aps = [ref_ap(list(scores[:, j]), list(truth[:, j])) for j in range(q)]
    aps = [a for a in aps if a == a]
    return sum(aps) / len(aps), div(2 * P * R, P + R), div(2 * cp * cr, cp + cr)


class TestEstimationError:
    def test_zero(self):
        T = [TransitionMatrix2(0.1, 0.3)] * 4
        assert estimation_error(T, T) == 0.0

    def test_single_entry(self):
        # a shift of 0.1 in one flip rate moves two entries
        assert estimation_error([TransitionMatrix2(0.1, 0.2)],
                                [TransitionMatrix2(0.2, 0.2)]) == pytest.approx(0.2)

    @given(st.lists(st.tuples(rates, rates, rates, rates), min_size=1, max_size=6))
    def test_brute_force(self, quads):
        a = [TransitionMatrix2(x, y) for x, y, _, _ in quads]
        b = [TransitionMatrix2(u, v) for _, _, u, v in quads]
        ref = 0.0
        for (x, y, u, v) in quads:
            ref += sum(abs(s - t) for s, t in zip([1 - x, x, y, 1 - y], [1 - u, u, v, 1 - v]))
        assert estimation_error(a, b) == pytest.approx(ref, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            estimation_error([TransitionMatrix2(0, 0)], [])


class TestMetrics:
    def test_hand_ap(self):
        score = [0.9, 0.8, 0.3, 0.2, 0.1]
        truth = [1, 0, 1, 0, 0]
        assert average_precision(score, truth) == pytest.approx((1 + 2 / 3) / 2)

    def test_ties_broken_by_index(self):
        assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)
        assert average_precision([0.5, 0.5], [1, 0]) == pytest.approx(1.0)

    def test_perfect(self, rng):
        y = rng.integers(0, 2, (60, 4))
        y[0] = 1
        m = classification_metrics(y * 0.8 + 0.1, y)
        assert (m.map, m.of1, m.cf1) == (1.0, 1.0, 1.0)

    def test_inverted(self, rng):
        y = rng.integers(0, 2, (60, 4))
        y[0], y[1] = 1, 0
        m = classification_metrics(1.0 - y, y)
        assert m.of1 == 0.0 and m.cf1 == 0.0

    def test_threshold_strict(self):
        y = np.array([[1, 0], [0, 1]])
        m = classification_metrics(np.full((2, 2), 0.5), y)
        assert m.of1 == 0.0

    def test_zero_positive_class_skipped(self, rng):
        y = rng.integers(0, 2, (30, 3))
        y[:, 1] = 0
        m = classification_metrics(rng.uniform(size=(30, 3)), y)
        assert m.skipped_classes == [1]
        assert np.isnan(m.per_class_ap[1]) and np.isfinite(m.map)
        assert m.to_dict()["per_class_ap"][1] is None

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force(self, seed):
        g = np.random.default_rng(seed)
        s = np.round(g.uniform(size=(50, 5)), 2)  # rounding forces ties
        y = g.integers(0, 2, (50, 5))
        m = classification_metrics(s, y)
        ref = ref_metrics(s, y)
        np.testing.assert_allclose([m.map, m.of1, m.cf1], ref, atol=1e-12)

    @given(st.integers(0, 2**31 - 1))
    def test_ap_monotone_invariant(self, seed):
        g = np.random.default_rng(seed)
        s = g.uniform(size=40)
        y = g.integers(0, 2, 40)
        y[0] = 1
        assert average_precision(np.exp(3 * s), y) == pytest.approx(average_precision(s, y))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            classification_metrics(np.zeros((3, 2)), np.zeros((3, 3)))


def small_cfg():
    return with_overrides(ExperimentConfig(), {
        "dataset.n": 1500, "dataset.q": 3, "dataset.d": 8, "dataset.test_n": 200,
        "selection.mode": "gold", "method": "ours"})


class TestSweep:
    def test_rows_and_determinism(self, tmp_path):
        a = run_sweep("n", [800, 1500], small_cfg(), seeds=[0, 1], out_dir=tmp_path)
        b = run_sweep("n", [800, 1500], small_cfg(), seeds=[0, 1])
        strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime_ms"} for r in rows]  # noqa: E731
        assert strip(a.rows) == strip(b.rows)
        # ours rows plus the mean-aggregate companion
        assert len(a.rows) == 2 * 2 * 2
        with open(tmp_path / "sweep_n.csv") as fh:
            rd = list(csv.DictReader(fh))
        assert tuple(rd[0].keys()) == CSV_COLUMNS and len(rd) == 8
        assert (tmp_path / "sweep_n.json").exists()
        assert a.settings("ours") == [800, 1500]

    def test_method_axis(self):
        res = run_sweep("method", ["ours", "ours_gold"], small_cfg(), seeds=[3])
        assert [p.method for p in res.points] == ["ours", "ours_avg", "ours_gold", "ours_gold_avg"]

    @pytest.mark.parametrize("kw", [dict(seeds=[]), dict(axis="temperature"),
                                    dict(grid=[1500, 800]), dict(grid=[])])
    def test_invalid(self, kw):
        args = dict(axis="n", grid=[800], seeds=[0])
        args.update(kw)
        with pytest.raises(ValidationError):
            run_sweep(args["axis"], args["grid"], small_cfg(), args["seeds"])

    def test_invalid_grid_value(self):
        with pytest.raises(ValidationError, match="estimation.R"):
            run_sweep("R", [1, 5], small_cfg(), seeds=[0])

    def test_workers_same_rows(self):
        a = run_sweep("R", [1, 2], small_cfg(), seeds=[0, 1], workers=2)
        b = run_sweep("R", [1, 2], small_cfg(), seeds=[0, 1], workers=1)
        assert [r["total_error"] for r in a.rows] == [r["total_error"] for r in b.rows]

    def test_metrics_columns(self):
        res = run_sweep("n", [1500], small_cfg(), seeds=[0], with_metrics=True)
        row = [r for r in res.rows if r["method"] == "ours"][0]
        assert 0.0 <= row["cf1"] <= 1.0 and 0.0 <= row["map"] <= 1.0
        assert "mean_cf1" in res.points[0].extra
