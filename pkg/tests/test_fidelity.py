import csv

import numpy as np
import pytest

from mobaxai import attribution as attr
from mobaxai import fidelity as fid
from mobaxai import models as md
from tests.conftest import make_toy_windows


def flat_map(time_avg, length=2):
    time_avg = np.asarray(time_avg, dtype=np.float64)
    scores = np.tile(time_avg, (length, 1))
    names = [f"f{j}" for j in range(time_avg.size)]
    return attr.AttributionMap("ig", 0, 0.5, scores, time_avg, names)


class FixedExplainer:
    method = "fixed"

    def __init__(self, maps):
        self.maps = list(maps)
        self.calls = 0

    def attribute(self, X):
        amap = self.maps[self.calls % len(self.maps)]
        self.calls += 1
        return amap


@pytest.fixture(scope="module")
def trained(toy_schema, toy_data):
    X, y = toy_data
    model = md.SequenceClassifier(
        schema=toy_schema, architecture="lstm",
        config=md.LstmConfig(layers=1, hidden=6, head_width=8, dropout=0.0),
        n_classes=2, epochs=20, batch_size=32, learning_rate=3e-3, seed=1,
    ).fit(X[:300], y[:300])
    return model, X, y


class TestMaskTopK:
    def test_documented_example(self):
        amap = flat_map([5.0, 1.0, 4.0, 2.0])
        X = np.ones((3, 4))
        masked = fid.mask_top_k(X, amap, 2)
        np.testing.assert_array_equal(masked, np.tile([1.0, 0.0, 1.0, 0.0], (3, 1)))

    def test_full_k_is_identity(self):
        rng = np.random.default_rng(0)
        X = rng.random((4, 6))
        amap = flat_map(rng.random(6), length=4)
        np.testing.assert_array_equal(fid.mask_top_k(X, amap, 6), X)

    def test_nonzero_count_bounded(self):
        rng = np.random.default_rng(1)
        X = rng.random((5, 9))
        amap = flat_map(rng.random(9), length=5)
        for k in (1, 3, 7):
            assert np.count_nonzero(fid.mask_top_k(X, amap, k)) <= 5 * k


class TestBuildMaskedSets:
    def test_sizes_without_drops(self, trained):
        model, X, _ = trained
        explainer = attr.RandomAttribution(model, seed=0)
        masked = fid.build_masked_sets(model, explainer, 3, X[:20], X[20:30])
        assert len(masked.train_y) == 20 and len(masked.test_y) == 10
        assert masked.dropped_train == masked.dropped_test == 0

    def test_labels_are_model_predictions(self, trained):
        model, X, y = trained
        preds = model.predict(X[:40])
        errs = np.flatnonzero(preds != y[:40])
        explainer = attr.RandomAttribution(model, seed=1)
        masked = fid.build_masked_sets(model, explainer, 2, X[:40], X[40:42])
        np.testing.assert_array_equal(masked.train_y, preds)
        if errs.size:
            assert masked.train_y[errs[0]] != y[errs[0]]

    def test_label_agreement_equals_model_accuracy(self, trained):
        model, X, y = trained
        test_X, test_y = X[300:], y[300:]
        explainer = attr.RandomAttribution(model, seed=2)
        masked = fid.build_masked_sets(model, explainer, 2, X[:5], test_X)
        agreement = float(np.mean(masked.test_y == test_y))
        accuracy = float(np.mean(model.predict(test_X) == test_y))
        assert agreement == accuracy

    def test_failed_attribution_dropped_and_counted(self, trained):
        model, X, _ = trained
        d = X.shape[2]
        good = flat_map(np.arange(d, dtype=float), length=X.shape[1])
        bad = flat_map(np.arange(d, dtype=float), length=X.shape[1])
        bad.scores = bad.scores.copy()
        bad.scores[0, 0] = np.nan
        maps = fid.compute_attribution_maps(model, FixedExplainer([good, bad, good]), X[:3])
        assert maps[1] is None
        masked = fid.build_masked_sets(model, FixedExplainer([good]), 2, X[:3], X[3:5],
                                       train_maps=maps)
        assert len(masked.train_y) == 2
        assert masked.dropped_train == 1


class TestRunFidelity:
    def test_full_k_distills_model(self, trained):
        model, X, y = trained
        d = X.shape[2]
        job = fid.FidelityJob(
            model, attr.RandomAttribution(model, seed=3), d,
            X[:300], X[300:], seed=11, task="toy",
            proxy_hyper={"epochs": 20},
        )
        report = fid.run_fidelity(job)
        assert 0.0 <= report.fidelity <= 1.0
        assert report.fidelity >= 0.9
        assert report.k == d and report.model_tag == "lstm"

    def test_sweep_shares_maps_and_is_reproducible(self, trained):
        model, X, _ = trained
        explainer = attr.IntegratedGradients(model, steps=8)
        reports = fid.fidelity_sweep(model, [explainer], ks=[X.shape[2], 2],
                                     train_X=X[:120], test_X=X[120:160],
                                     seeds=(5,), proxy_hyper={"epochs": 4}, task="toy")
        again = fid.fidelity_sweep(model, [explainer], ks=[X.shape[2], 2],
                                   train_X=X[:120], test_X=X[120:160],
                                   seeds=(5,), proxy_hyper={"epochs": 4}, task="toy")
        assert [r.fidelity for r in reports] == [r.fidelity for r in again]
        assert [r.k for r in reports] == [X.shape[2], 2]

    def test_csv_append(self, tmp_path, trained):
        model, X, _ = trained
        job = fid.FidelityJob(model, attr.RandomAttribution(model, seed=4), 1,
                              X[:40], X[40:60], seed=0, task="toy",
                              proxy_hyper={"epochs": 2})
        report = fid.run_fidelity(job)
        path = tmp_path / "fidelity.csv"
        fid.append_report_csv([report], path)
        fid.append_report_csv([report], path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert rows[0]["task"] == "toy" and rows[0]["method"] == "random"
        assert 0.0 <= float(rows[0]["fidelity"]) <= 1.0
