"""Gradient-based attribution over encoded windows.

Integrated gradients accumulate input gradients along the straight-line path
from an all-zero baseline to the input and weight them by the input-baseline
difference; smoothed gradients average input gradients under zero-mean
Gaussian noise whose per-dimension scale follows the training-split value
range. Scores live in the raw input space (l x D_in), so top-k selection and
fidelity masking share one index space with the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AttributionMap:
    """Per-timestep, per-dimension contribution scores plus their time average."""

    method: str
    target_class: int
    target_prob: float
    scores: np.ndarray  # (l, D_in)
    time_avg: np.ndarray  # (D_in,)
    feature_names: list

    def __post_init__(self):
        assert np.allclose(self.time_avg, self.scores.mean(axis=0))


def _as_window(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"attribution expects a single (l, D) window, got {X.shape}")
    d_in = getattr(getattr(model, "schema", None), "d_in", X.shape[1])
    if X.shape[1] != d_in:
        raise ValueError(f"window width {X.shape[1]} does not match schema D_in {d_in}")
    return X


def _names(model, d_in):
    schema = getattr(model, "schema", None)
    if schema is not None and getattr(schema, "feature_names", None):
        return list(schema.feature_names)
    return [f"dim_{j}" for j in range(d_in)]


def _resolve_target(model, X, target):
    probs = model.predict_proba(X[None])[0]
    if target is None:
        target = int(probs.argmax())
    n_classes = getattr(model, "n_classes_", probs.shape[-1])
    if not 0 <= target < n_classes:
        raise ValueError(f"target class {target} >= class count {n_classes}")
    return target, float(probs[target])


class IntegratedGradients:
    """Path-integral attribution from a baseline to the input (right-endpoint sum)."""

    method = "ig"

    def __init__(self, model, steps=100, baseline=None, chunk=64):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        self.model = model
        self.steps = steps
        self.baseline = baseline
        self.chunk = chunk

    def attribute(self, X, target=None):
        X = _as_window(self.model, X)
        baseline = np.zeros_like(X) if self.baseline is None else np.asarray(self.baseline)
        if baseline.shape != X.shape:
            raise ValueError(f"baseline shape {baseline.shape} != input shape {X.shape}")
        target, prob = _resolve_target(self.model, X, target)

        delta = X - baseline
        grad_sum = np.zeros_like(X)
        alphas = np.arange(1, self.steps + 1, dtype=np.float64) / self.steps
        for lo in range(0, self.steps, self.chunk):
            chunk = alphas[lo: lo + self.chunk]
            batch = baseline[None] + chunk[:, None, None] * delta[None]
            _, grads = self.model.input_gradients(batch, np.full(len(chunk), target))
            grad_sum += grads.sum(axis=0)
        scores = delta * grad_sum / self.steps
        return AttributionMap(self.method, target, prob, scores, scores.mean(axis=0),
                              _names(self.model, X.shape[1]))


class SmoothGrad:
    """Noise-averaged gradient attribution; sigma follows per-dimension value range."""

    method = "sg"

    def __init__(self, model, steps=100, sigma_ratio=0.15, seed=0, stats=None, chunk=64):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if sigma_ratio < 0:
            raise ValueError("sigma_ratio must be >= 0")
        self.model = model
        self.steps = steps
        self.sigma_ratio = sigma_ratio
        self.seed = seed
        self.stats = stats
        self.chunk = chunk

    def _sigma(self, d_in):
        stats = self.stats if self.stats is not None else getattr(self.model, "input_stats_", None)
        if stats is None:
            raise ValueError("SmoothGrad needs per-dimension min/max stats")
        stats = np.asarray(stats)
        return self.sigma_ratio * (stats[1] - stats[0])

    def attribute(self, X, target=None):
        X = _as_window(self.model, X)
        target, prob = _resolve_target(self.model, X, target)
        sigma = self._sigma(X.shape[1])
        rng = np.random.default_rng(self.seed)
        grad_sum = np.zeros_like(X)
        done = 0
        while done < self.steps:
            n = min(self.chunk, self.steps - done)
            noise = rng.normal(0.0, 1.0, size=(n,) + X.shape) * sigma
            _, grads = self.model.input_gradients(X[None] + noise, np.full(n, target))
            grad_sum += grads.sum(axis=0)
            done += n
        scores = grad_sum / self.steps
        return AttributionMap(self.method, target, prob, scores, scores.mean(axis=0),
                              _names(self.model, X.shape[1]))


class RandomAttribution:
    """Uniform-noise scores; the no-information control for fidelity sweeps."""

    method = "random"

    def __init__(self, model, seed=0):
        self.model = model
        self._rng = np.random.default_rng(seed)

    def attribute(self, X, target=None):
        X = _as_window(self.model, X)
        target, prob = _resolve_target(self.model, X, target)
        scores = self._rng.uniform(-1.0, 1.0, size=X.shape)
        return AttributionMap(self.method, target, prob, scores, scores.mean(axis=0),
                              _names(self.model, X.shape[1]))


METHODS = {"ig": IntegratedGradients, "sg": SmoothGrad, "random": RandomAttribution}


def integrated_gradients(model, X, target=None, steps=100, baseline=None):
    return IntegratedGradients(model, steps=steps, baseline=baseline).attribute(X, target)


def smoothgrad(model, X, target=None, steps=100, sigma_ratio=0.15, seed=0, stats=None):
    return SmoothGrad(model, steps=steps, sigma_ratio=sigma_ratio, seed=seed,
                      stats=stats).attribute(X, target)


def top_k(amap, k):
    """The k dimensions with largest |time-averaged score|, ties to lower index."""
    d_in = amap.time_avg.shape[0]
    if not 1 <= k <= d_in:
        raise ValueError(f"k must lie in [1, {d_in}], got {k}")
    order = np.argsort(-np.abs(amap.time_avg), kind="stable")[:k]
    return [(int(j), amap.feature_names[j], float(amap.time_avg[j])) for j in order]


CLASS_NAMERS = {
    "win": lambda y: ("red", "blue")[y],
    "tyrant": lambda y: ("red", "blue")[y],
    "kill": lambda y: f"hero_{y}",
    "bekill": lambda y: f"hero_{y}",
}


def class_name(task, label):
    namer = CLASS_NAMERS.get(task)
    return namer(label) if namer else str(label)


def report_dict(amap, k, task=None):
    return {
        "method": amap.method,
        "task": task,
        "target_class": amap.target_class,
        "target_class_name": class_name(task, amap.target_class),
        "target_prob": amap.target_prob,
        "k": k,
        "top_features": [
            {"rank": r + 1, "dim": j, "feature": name, "score": score}
            for r, (j, name, score) in enumerate(top_k(amap, k))
        ],
    }


def render_report(amap, k, task=None):
    """Aligned plain-text attribution report with the top-k named features."""
    doc = report_dict(amap, k, task=task)
    width = max(len(row["feature"]) for row in doc["top_features"])
    lines = [
        f"prediction: {doc['target_class_name']} "
        f"(class {doc['target_class']}, p={doc['target_prob']:.3f})",
        f"method: {doc['method']}   top-{k} feature dimensions",
        f"{'rank':>4}  {'dim':>5}  {'feature':<{width}}  {'score':>12}",
    ]
    for row in doc["top_features"]:
        lines.append(
            f"{row['rank']:>4}  {row['dim']:>5}  {row['feature']:<{width}}  "
            f"{row['score']:>+12.6f}"
        )
    return "\n".join(lines) + "\n"
