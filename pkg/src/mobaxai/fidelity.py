"""Fidelity scoring: does a proxy trained on top-k-masked inputs mimic the model?

Each instance keeps only its own top-k attributed feature dimensions (all
other dimensions zeroed in every timestep row) and is relabelled with the
original model's prediction on the unmasked input. A fresh proxy with the same
architecture trains on the masked training set; fidelity is the proxy's
exact-match rate against the stored predictions on the masked testing set.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from ._validation import check_windows
from .attribution import top_k


class ProxyDivergence(RuntimeError):
    pass


@dataclass
class MaskedSet:
    train_X: np.ndarray
    train_y: np.ndarray  # original model's predictions, not ground truth
    test_X: np.ndarray
    test_y: np.ndarray
    dropped_train: int = 0
    dropped_test: int = 0


@dataclass
class FidelityJob:
    model: object  # fitted SequenceClassifier (the original model F)
    method: object  # attribution explainer with .method and .attribute
    k: int
    train_windows: np.ndarray
    test_windows: np.ndarray
    proxy_hyper: dict = None  # defaults to the original model's budget
    seed: int = 0
    task: str = None
    train_maps: list = field(default=None, repr=False)
    test_maps: list = field(default=None, repr=False)


@dataclass
class FidelityReport:
    task: str
    model_tag: str
    method_tag: str
    k: int
    fidelity: float
    seed: int
    n_train: int
    n_test: int
    dropped_train: int
    dropped_test: int
    proxy_history: list

    def to_dict(self):
        return {
            "task": self.task,
            "model": self.model_tag,
            "method": self.method_tag,
            "k": self.k,
            "fidelity": self.fidelity,
            "seed": self.seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "dropped_train": self.dropped_train,
            "dropped_test": self.dropped_test,
            "proxy_history": self.proxy_history,
        }


def compute_attribution_maps(model, explainer, X):
    """One attribution map per instance; None marks a failed (non-finite) map."""
    X = check_windows(X)
    maps = []
    for i in range(X.shape[0]):
        amap = explainer.attribute(X[i])
        maps.append(amap if np.all(np.isfinite(amap.scores)) else None)
    return maps


def mask_top_k(X, amap, k):
    """Zero every dimension outside the map's top-k across all timestep rows."""
    X = np.asarray(X, dtype=np.float64)
    keep = [j for j, _, _ in top_k(amap, k)]
    masked = np.zeros_like(X)
    masked[:, keep] = X[:, keep]
    return masked


def _mask_split(model, explainer, k, X, maps):
    if maps is None:
        maps = compute_attribution_maps(model, explainer, X)
    labels = model.predict(X)
    kept_X, kept_y, dropped = [], [], 0
    for i in range(X.shape[0]):
        if maps[i] is None:
            dropped += 1
            continue
        kept_X.append(mask_top_k(X[i], maps[i], k))
        kept_y.append(labels[i])
    shape = (0,) + X.shape[1:]
    return (np.stack(kept_X) if kept_X else np.zeros(shape),
            np.asarray(kept_y, dtype=np.int64), dropped)


def build_masked_sets(model, explainer, k, train_X, test_X, train_maps=None, test_maps=None):
    """Masked train/test sets labelled with the model's own predictions."""
    train_X = check_windows(train_X)
    test_X = check_windows(test_X)
    tr_X, tr_y, tr_drop = _mask_split(model, explainer, k, train_X, train_maps)
    te_X, te_y, te_drop = _mask_split(model, explainer, k, test_X, test_maps)
    return MaskedSet(tr_X, tr_y, te_X, te_y, tr_drop, te_drop)


def _make_proxy(model, hyper, seed):
    proxy = clone(model)
    proxy.set_params(seed=seed, **(hyper or {}))
    return proxy


def run_fidelity(job):
    """Train the proxy on the masked training set and score agreement on test."""
    masked = build_masked_sets(job.model, job.method, job.k,
                               job.train_windows, job.test_windows,
                               job.train_maps, job.test_maps)
    proxy = _make_proxy(job.model, job.proxy_hyper, job.seed)
    proxy.fit(masked.train_X, masked.train_y)
    if not all(np.isfinite(e["val_loss"]) for e in proxy.history_):
        raise ProxyDivergence(f"proxy training diverged (seed {job.seed})")
    agree = proxy.predict(masked.test_X) == masked.test_y
    return FidelityReport(
        task=job.task,
        model_tag=job.model.architecture,
        method_tag=job.method.method,
        k=job.k,
        fidelity=float(np.mean(agree)),
        seed=job.seed,
        n_train=len(masked.train_y),
        n_test=len(masked.test_y),
        dropped_train=masked.dropped_train,
        dropped_test=masked.dropped_test,
        proxy_history=proxy.history_,
    )


def fidelity_sweep(model, explainers, ks, train_X, test_X, seeds=(0,),
                   proxy_hyper=None, task=None):
    """Reports over (method x k x seed); attribution maps computed once per method."""
    reports = []
    for explainer in explainers:
        train_maps = compute_attribution_maps(model, explainer, train_X)
        test_maps = compute_attribution_maps(model, explainer, test_X)
        for k in ks:
            for seed in seeds:
                job = FidelityJob(model, explainer, k, train_X, test_X,
                                  proxy_hyper=proxy_hyper, seed=seed, task=task,
                                  train_maps=train_maps, test_maps=test_maps)
                reports.append(run_fidelity(job))
    return reports


CSV_FIELDS = ("task", "model", "method", "k", "seed", "fidelity",
              "n_train", "n_test", "dropped_train", "dropped_test")


def append_report_csv(reports, path):
    """Append report rows to a results table, writing the header once."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if fresh:
            writer.writeheader()
        for report in reports:
            row = report.to_dict()
            writer.writerow({k: row[k] for k in CSV_FIELDS})
