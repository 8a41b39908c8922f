import json

import numpy as np
import pytest

from lesionseg.errors import ConfigError, ShapeError
from lesionseg.metrics import Confusion, confusion, compute_metrics, \
    evaluate_pair, aggregate, write_image_csv, write_summary_json, \
    write_histogram_csv, format_summary, METRIC_NAMES

from oracles import brute_confusion, brute_metrics


class TestConfusion:
    def test_counting_golden(self):
        pred = np.array([1, 1, 0, 0]).reshape(1, 4)
        gt = np.array([1, 0, 0, 0]).reshape(1, 4)
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 0, 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_non_binary_rejected(self):
        with pytest.raises(ConfigError, match="binary"):
            confusion(np.array([[0, 2]]), np.array([[0, 1]]))
        with pytest.raises(ConfigError, match="binary"):
            confusion(np.array([[0.0, 1.0]]), np.array([[0.5, 1.0]]))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pred = (rng.random((16, 16)) > rng.random()).astype(np.uint8)
            gt = (rng.random((16, 16)) > rng.random()).astype(np.uint8)
            c = confusion(pred, gt)
            assert (c.tp, c.tn, c.fp, c.fn) == brute_confusion(pred, gt)


class TestMetricValues:
    def test_golden_case(self):
        m = compute_metrics(Confusion(tp=1, fp=1, fn=0, tn=2))
        assert m["JA"] == 0.5
        assert abs(m["DI"] - 2.0 / 3.0) < 1e-15
        assert m["AC"] == 0.75
        assert m["SE"] == 1.0
        assert abs(m["SP"] - 2.0 / 3.0) < 1e-15

    def test_dice_jaccard_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            c = Confusion(*(int(v) for v in rng.integers(0, 50, 4)))
            m = compute_metrics(c)
            assert abs(m["DI"] - 2 * m["JA"] / (1 + m["JA"])) < 1e-12

    def test_perfect_prediction(self):
        m = compute_metrics(Confusion(tp=5, fp=0, fn=0, tn=11))
        assert all(m[k] == 1.0 for k in METRIC_NAMES)

    def test_empty_target_empty_prediction(self):
        # nothing to find and nothing claimed: vacuous success on the
        # lesion-side ratios, not a NaN
        m = compute_metrics(Confusion(tp=0, fp=0, fn=0, tn=9))
        assert m["JA"] == 1.0 and m["DI"] == 1.0 and m["SE"] == 1.0
        assert m["SP"] == 1.0 and m["AC"] == 1.0

    def test_empty_target_false_alarm(self):
        m = compute_metrics(Confusion(tp=0, fp=3, fn=0, tn=6))
        assert m["JA"] == 0.0
        assert m["SE"] == 1.0       # no lesion pixels to miss
        assert abs(m["SP"] - 6 / 9) < 1e-15

    def test_all_lesion_target(self):
        m = compute_metrics(Confusion(tp=4, fp=0, fn=4, tn=0))
        assert m["SP"] == 1.0       # no background pixels to mislabel
        assert m["SE"] == 0.5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pred = (rng.random((8, 8)) > rng.random()).astype(np.uint8)
            gt = (rng.random((8, 8)) > rng.random()).astype(np.uint8)
            ours = compute_metrics(confusion(pred, gt))
            ref = brute_metrics(*brute_confusion(pred, gt))
            for k in METRIC_NAMES:
                assert abs(ours[k] - ref[k]) < 1e-12, k


class TestAggregate:
    def records(self):
        out = []
        rng = np.random.default_rng(3)
        for i in range(12):
            cat = "melanoma-like" if i % 3 == 0 else "benign-like"
            pred = (rng.random((8, 8)) > 0.5).astype(np.uint8)
            gt = (rng.random((8, 8)) > 0.5).astype(np.uint8)
            out.append(evaluate_pair(f"s{i:03d}", cat, pred, gt))
        return out

    def test_overall_is_mean_of_images(self):
        recs = self.records()
        rep = aggregate(recs)
        for m in METRIC_NAMES:
            assert abs(rep.overall[m]
                       - np.mean([r.metrics[m] for r in recs])) < 1e-15

    def test_by_category_partition(self):
        rep = aggregate(self.records())
        assert set(rep.by_category) == {"melanoma-like", "benign-like"}
        mel = [r for r in rep.records if r.category == "melanoma-like"]
        for m in METRIC_NAMES:
            assert abs(rep.by_category["melanoma-like"][m]
                       - np.mean([r.metrics[m] for r in mel])) < 1e-15

    def test_histogram_conserves_count(self):
        rep = aggregate(self.records())
        assert sum(n for _, _, n in rep.histogram) == len(rep.records)
        assert len(rep.histogram) == 10
        assert rep.histogram[0][0] == 0.0
        assert rep.histogram[-1][1] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([])

    def test_report_files(self, tmp_path):
        rep = aggregate(self.records())
        write_image_csv(tmp_path / "images.csv", rep)
        write_summary_json(tmp_path / "summary.json", rep)
        write_histogram_csv(tmp_path / "hist.csv", rep)

        lines = (tmp_path / "images.csv").read_text().splitlines()
        assert lines[0] == "sample_id,category,tp,fp,fn,tn,AC,DI,JA,SE,SP"
        assert len(lines) == 13
        # full-precision floats survive the csv round trip
        first = rep.records[0]
        assert repr(first.metrics["JA"]) in lines[1]

        payload = json.loads((tmp_path / "summary.json").read_text())
        assert payload["count"] == 12
        assert set(payload["overall"]) == set(METRIC_NAMES)
        for vals in payload["by_category"].values():
            assert set(vals) == set(METRIC_NAMES)

        hist = (tmp_path / "hist.csv").read_text().splitlines()
        assert hist[0] == "bin_lo,bin_hi,count"
        assert len(hist) == 11

    def test_format_summary_percentages(self):
        rec = evaluate_pair("a", "benign-like",
                            np.array([[1, 1, 0, 0]]),
                            np.array([[1, 0, 0, 0]]))
        text = format_summary(aggregate([rec]))
        # JA = 0.5 prints as 50.0, not 0.5
        assert "50.0" in text
        assert "overall" in text and "benign-like" in text
