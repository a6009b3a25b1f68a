"""Sequence classifiers over encoded windows: bidirectional LSTM and Transformer.

Both architectures share the grouped embedding, mean-pool their sequence
outputs, and finish with a fully-connected layer, tanh, a linear projection to
class scores, and softmax. Training is plain Adam with early stopping on a
validation split; everything is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from . import encoding as enc
from ._validation import check_labels, check_windows

ARCHITECTURES = ("lstm", "transformer")


@dataclass(frozen=True)
class LstmConfig:
    layers: int = 2
    bidirectional: bool = True
    hidden: int = 128
    dropout: float = 0.2
    head_width: int = 256

    def __post_init__(self):
        if self.hidden < 1 or self.head_width < 1 or self.layers < 1:
            raise ValueError("widths and layer count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def mini(cls, **overrides):
        return cls(**{"hidden": 32, "head_width": 64, **overrides})


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 2
    heads: int = 8
    dropout: float = 0.1
    model_width: int = 256
    head_width: int = 256
    ffn_width: int = None  # defaults to 4 * model_width

    def __post_init__(self):
        if self.model_width % self.heads != 0:
            raise ValueError(
                f"model_width {self.model_width} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.ffn_width is None:
            object.__setattr__(self, "ffn_width", 4 * self.model_width)

    @classmethod
    def mini(cls, **overrides):
        return cls(**{"heads": 4, "model_width": 64, "head_width": 64, **overrides})


def default_config(architecture, mini=True):
    cls = {"lstm": LstmConfig, "transformer": TransformerConfig}[architecture]
    return cls.mini() if mini else cls()


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(architecture, config, schema, n_classes, rng):
    """All trainable arrays for one model, embedding included."""
    params = enc.init_embedding_params(schema, rng)
    d_emb = schema.d_emb
    if architecture == "lstm":
        H = config.hidden
        dirs = ("f", "b") if config.bidirectional else ("f",)
        feat = H * len(dirs)
        for layer in range(config.layers):
            in_size = d_emb if layer == 0 else feat
            for d in dirs:
                params[f"lstm.{layer}.{d}.Wx"] = _glorot(rng, in_size, 4 * H)
                params[f"lstm.{layer}.{d}.Wh"] = _glorot(rng, H, 4 * H)
                bias = np.zeros(4 * H)
                bias[H: 2 * H] = 1.0  # forget-gate bias
                params[f"lstm.{layer}.{d}.b"] = bias
    elif architecture == "transformer":
        d = config.model_width
        params["tr.in.W"] = _glorot(rng, d_emb, d)
        params["tr.in.b"] = np.zeros(d)
        for i in range(config.layers):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                params[f"tr.{i}.{name}"] = _glorot(rng, d, d)
                params[f"tr.{i}.{name.replace('W', 'b')}"] = np.zeros(d)
            params[f"tr.{i}.ln1.g"] = np.ones(d)
            params[f"tr.{i}.ln1.b"] = np.zeros(d)
            params[f"tr.{i}.ln2.g"] = np.ones(d)
            params[f"tr.{i}.ln2.b"] = np.zeros(d)
            params[f"tr.{i}.ffn.W1"] = _glorot(rng, d, config.ffn_width)
            params[f"tr.{i}.ffn.b1"] = np.zeros(config.ffn_width)
            params[f"tr.{i}.ffn.W2"] = _glorot(rng, config.ffn_width, d)
            params[f"tr.{i}.ffn.b2"] = np.zeros(d)
        feat = d
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    params["head.W1"] = _glorot(rng, feat, config.head_width)
    params["head.b1"] = np.zeros(config.head_width)
    params["head.W2"] = _glorot(rng, config.head_width, n_classes)
    params["head.b2"] = np.zeros(n_classes)
    return params


def sinusoidal_positions(length, width):
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _lstm_direction(tape, inp, p, prefix, reverse):
    B, L, _ = inp.data.shape
    H = p[f"{prefix}.Wh"].data.shape[0]
    h = tape.constant(np.zeros((B, 1, H)))
    c = tape.constant(np.zeros((B, 1, H)))
    steps = range(L - 1, -1, -1) if reverse else range(L)
    out = [None] * L
    for t in steps:
        x_t = ad.slice_axis(inp, 1, t, t + 1)
        gates = ad.add(
            ad.add(ad.matmul(x_t, p[f"{prefix}.Wx"]), ad.matmul(h, p[f"{prefix}.Wh"])),
            p[f"{prefix}.b"],
        )
        i_g = ad.sigmoid(ad.slice_axis(gates, -1, 0, H))
        f_g = ad.sigmoid(ad.slice_axis(gates, -1, H, 2 * H))
        g_g = ad.tanh(ad.slice_axis(gates, -1, 2 * H, 3 * H))
        o_g = ad.sigmoid(ad.slice_axis(gates, -1, 3 * H, 4 * H))
        c = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
        h = ad.mul(o_g, ad.tanh(c))
        out[t] = h
    return out


def _lstm_graph(tape, config, p, emb, masks):
    dirs = ("f", "b") if config.bidirectional else ("f",)
    seq = emb
    for layer in range(config.layers):
        per_dir = [
            _lstm_direction(tape, seq, p, f"lstm.{layer}.{d}", reverse=(d == "b"))
            for d in dirs
        ]
        stepwise = [
            ad.concat([per_dir[k][t] for k in range(len(dirs))], axis=-1)
            for t in range(emb.data.shape[1])
        ]
        seq = ad.concat(stepwise, axis=1)
        if masks is not None and layer < config.layers - 1:
            seq = ad.dropout_with_mask(seq, masks[f"lstm.{layer}"])
    return seq


def _transformer_graph(tape, config, p, emb, masks, collect):
    B, L, _ = emb.data.shape
    d = config.model_width
    x = ad.add(ad.matmul(emb, p["tr.in.W"]), p["tr.in.b"])
    pe = np.broadcast_to(sinusoidal_positions(L, d), (B, L, d)).copy()
    x = ad.add(x, tape.constant(pe))
    dh = d // config.heads
    for i in range(config.layers):
        q = ad.add(ad.matmul(x, p[f"tr.{i}.Wq"]), p[f"tr.{i}.bq"])
        k = ad.add(ad.matmul(x, p[f"tr.{i}.Wk"]), p[f"tr.{i}.bk"])
        v = ad.add(ad.matmul(x, p[f"tr.{i}.Wv"]), p[f"tr.{i}.bv"])
        heads = []
        for hh in range(config.heads):
            qh = ad.slice_axis(q, -1, hh * dh, (hh + 1) * dh)
            kh = ad.slice_axis(k, -1, hh * dh, (hh + 1) * dh)
            vh = ad.slice_axis(v, -1, hh * dh, (hh + 1) * dh)
            attn = ad.softmax(ad.scale(ad.matmul(qh, kh, transpose_b=True), 1.0 / math.sqrt(dh)))
            if collect is not None:
                collect.setdefault("attention", []).append(attn.data)
            heads.append(ad.matmul(attn, vh))
        ctx = ad.add(ad.matmul(ad.concat(heads, axis=-1), p[f"tr.{i}.Wo"]), p[f"tr.{i}.bo"])
        if masks is not None:
            ctx = ad.dropout_with_mask(ctx, masks[f"tr.{i}.attn"])
        x = ad.layer_norm(ad.add(x, ctx), p[f"tr.{i}.ln1.g"], p[f"tr.{i}.ln1.b"])
        ff = ad.relu(ad.add(ad.matmul(x, p[f"tr.{i}.ffn.W1"]), p[f"tr.{i}.ffn.b1"]))
        ff = ad.add(ad.matmul(ff, p[f"tr.{i}.ffn.W2"]), p[f"tr.{i}.ffn.b2"])
        if masks is not None:
            ff = ad.dropout_with_mask(ff, masks[f"tr.{i}.ffn"])
        x = ad.layer_norm(ad.add(x, ff), p[f"tr.{i}.ln2.g"], p[f"tr.{i}.ln2.b"])
    return x


def forward_graph(tape, architecture, config, schema, params_t, X_t, masks=None, collect=None):
    """Class-probability graph for a (B, l, D_in) input tensor."""
    emb = enc.embed_graph(tape, X_t, schema, params_t)
    if architecture == "lstm":
        seq = _lstm_graph(tape, config, params_t, emb, masks)
    else:
        seq = _transformer_graph(tape, config, params_t, emb, masks, collect)
    pooled = ad.mean(seq, axis=1)
    hidden = ad.tanh(ad.add(ad.matmul(pooled, params_t["head.W1"]), params_t["head.b1"]))
    logits = ad.add(ad.matmul(hidden, params_t["head.W2"]), params_t["head.b2"])
    return ad.softmax(logits)


def sample_dropout_masks(architecture, config, batch, length, schema, rng):
    """Inverted-dropout masks for one training forward; None when p == 0."""
    p = config.dropout
    if p <= 0.0:
        return None

    def mask(shape):
        return (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)

    masks = {}
    if architecture == "lstm":
        feat = config.hidden * (2 if config.bidirectional else 1)
        for layer in range(config.layers - 1):
            masks[f"lstm.{layer}"] = mask((batch, length, feat))
    else:
        for i in range(config.layers):
            masks[f"tr.{i}.attn"] = mask((batch, length, config.model_width))
            masks[f"tr.{i}.ffn"] = mask((batch, length, config.model_width))
    return masks or None


class Adam:
    """Adaptive moment estimation; updates parameter arrays in place."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


class SequenceClassifier(BaseEstimator, ClassifierMixin):
    """Windowed sequence classifier with a selectable architecture.

    ``fit`` expects ``X`` shaped (n, l, D_in) as produced by the encoder and
    integer labels ``y``. The fitted estimator exposes ``predict_proba`` /
    ``predict`` plus input gradients for the attribution methods.
    """

    def __init__(self, schema=None, architecture="lstm", config=None, n_classes=None,
                 epochs=40, batch_size=64, learning_rate=1e-3, patience=5,
                 val_fraction=0.1, seed=0):
        self.schema = schema
        self.architecture = architecture
        self.config = config
        self.n_classes = n_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    # -- internals -----------------------------------------------------------

    def _check_ready(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("SequenceClassifier is not fitted")

    def _build(self, X, masks=None, collect=None, params=None):
        tape = ad.Tape()
        X_t = tape.leaf(X)
        params_t = {k: tape.leaf(v, name=k) for k, v in (params or self.params_).items()}
        probs_t = forward_graph(tape, self.architecture, self.config_, self.schema,
                                params_t, X_t, masks=masks, collect=collect)
        return tape, X_t, params_t, probs_t

    def _eval_probs(self, X, batch=512, collect=None):
        chunks = []
        for lo in range(0, X.shape[0], batch):
            _, _, _, probs_t = self._build(X[lo: lo + batch], collect=collect)
            chunks.append(probs_t.data)
        return np.concatenate(chunks, axis=0)

    @staticmethod
    def _loss_graph(probs_t, y):
        onehot = np.zeros(probs_t.data.shape)
        onehot[np.arange(len(y)), y] = 1.0
        picked = ad.sum(ad.mul(probs_t, probs_t.tape.constant(onehot)), axis=1)
        return ad.scale(ad.mean(ad.log(picked)), -1.0)

    @staticmethod
    def _ce(probs, y):
        return float(-np.mean(np.log(probs[np.arange(len(y)), y])))

    # -- estimator API -------------------------------------------------------

    def fit(self, X, y, validation=None):
        if self.schema is None:
            raise ValueError("SequenceClassifier needs a fitted FeatureSchema")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        X = check_windows(X, self.schema.d_in)
        y = check_labels(y)
        if X.shape[0] == 0:
            raise ValueError("training set is empty")
        self.config_ = self.config or default_config(self.architecture)
        self.n_classes_ = self.n_classes or int(y.max()) + 1
        check_labels(y, self.n_classes_)
        self.classes_ = np.arange(self.n_classes_)
        self.warnings_ = []
        missing = sorted(set(range(self.n_classes_)) - set(int(v) for v in np.unique(y)))
        if missing:
            self.warnings_.append(f"classes absent from training data: {missing}")

        ss = np.random.SeedSequence(self.seed)
        init_rng, shuffle_rng, mask_rng = (np.random.default_rng(s) for s in ss.spawn(3))
        self.params_ = init_params(self.architecture, self.config_, self.schema,
                                   self.n_classes_, init_rng)

        if validation is not None:
            X_tr, y_tr = X, y
            X_val, y_val = check_windows(validation[0], self.schema.d_in), check_labels(validation[1])
        else:
            idx = shuffle_rng.permutation(X.shape[0])
            n_val = max(1, int(round(self.val_fraction * X.shape[0])))
            X_val, y_val = X[idx[:n_val]], y[idx[:n_val]]
            X_tr, y_tr = X[idx[n_val:]], y[idx[n_val:]]

        self.input_stats_ = np.stack([X_tr.min(axis=(0, 1)), X_tr.max(axis=(0, 1))])

        opt = Adam(self.params_, learning_rate=self.learning_rate)
        probs0 = self._eval_probs(X_val)
        history = [{"epoch": 0, "train_loss": None,
                    "val_loss": self._ce(probs0, y_val),
                    "val_acc": float(np.mean(probs0.argmax(axis=1) == y_val))}]
        best = {"val_loss": history[0]["val_loss"], "epoch": 0,
                "params": {k: v.copy() for k, v in self.params_.items()}}
        stale = 0
        for epoch in range(1, self.epochs + 1):
            order = shuffle_rng.permutation(X_tr.shape[0])
            losses = []
            for lo in range(0, len(order), self.batch_size):
                sel = order[lo: lo + self.batch_size]
                masks = sample_dropout_masks(self.architecture, self.config_, len(sel),
                                             X.shape[1], self.schema, mask_rng)
                tape, _, params_t, probs_t = self._build(X_tr[sel], masks=masks)
                loss_t = self._loss_graph(probs_t, y_tr[sel])
                grads = tape.backward(loss_t, list(params_t.values()))
                opt.step({k: grads[t.tid] for k, t in params_t.items()})
                losses.append(float(loss_t.data))
            probs = self._eval_probs(X_val)
            entry = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                     "val_loss": self._ce(probs, y_val),
                     "val_acc": float(np.mean(probs.argmax(axis=1) == y_val))}
            history.append(entry)
            if entry["val_loss"] < best["val_loss"] - 1e-12:
                best = {"val_loss": entry["val_loss"], "epoch": epoch,
                        "params": {k: v.copy() for k, v in self.params_.items()}}
                stale = 0
            else:
                stale += 1
                if stale > self.patience:
                    break
        self.params_ = best["params"]
        self.best_epoch_ = best["epoch"]
        self.history_ = history
        return self

    def forward(self, X, mode="eval", mask_seed=0):
        """Class distribution P(y|X); train mode applies seeded dropout masks."""
        self._check_ready()
        X = check_windows(X, self.schema.d_in)
        if mode == "eval":
            return self._eval_probs(X)
        if mode == "train":
            rng = np.random.default_rng(mask_seed)
            masks = sample_dropout_masks(self.architecture, self.config_, X.shape[0],
                                         X.shape[1], self.schema, rng)
            _, _, _, probs_t = self._build(X, masks=masks)
            return probs_t.data
        raise ValueError(f"unknown mode {mode!r}")

    def predict_proba(self, X):
        self._check_ready()
        return self._eval_probs(check_windows(X, self.schema.d_in))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def input_gradients(self, X, targets):
        """Per-sample gradients of P(target | X) with respect to the raw input.

        ``targets`` is one class index per sample. Returns ``(probs, grads)``
        with ``grads`` shaped like ``X``.
        """
        self._check_ready()
        X = check_windows(X, self.schema.d_in)
        targets = check_labels(targets, self.n_classes_)
        tape, X_t, _, probs_t = self._build(X)
        onehot = np.zeros(probs_t.data.shape)
        onehot[np.arange(len(targets)), targets] = 1.0
        objective = ad.sum(ad.mul(probs_t, tape.constant(onehot)))
        grads = tape.backward(objective, [X_t])[X_t.tid]
        return probs_t.data, grads

    def attention_maps(self, X):
        """Per-layer, per-head attention matrices for a batch (transformer only)."""
        self._check_ready()
        if self.architecture != "transformer":
            raise ValueError("attention maps exist only for the transformer")
        collect = {}
        self._eval_probs(check_windows(X, self.schema.d_in), batch=X.shape[0] or 1,
                         collect=collect)
        return collect.get("attention", [])


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_WEIGHTS = "weights.bin"
CHECKPOINT_SCHEMA = "schema.json"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path):
    """Write manifest + little-endian float64 blob + schema under ``path``."""
    model._check_ready()
    os.makedirs(path, exist_ok=True)
    tensors = dict(model.params_)
    tensors["stats.min"] = model.input_stats_[0]
    tensors["stats.max"] = model.input_stats_[1]
    names = sorted(tensors)
    offsets = []
    blob = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        offsets.append({"name": name, "shape": list(arr.shape),
                        "offset": len(blob), "length": arr.size})
        blob.extend(arr.tobytes())
    manifest = {
        "format_version": 1,
        "architecture": model.architecture,
        "config": asdict(model.config_),
        "n_classes": model.n_classes_,
        "seed": model.seed,
        "hyper": {"epochs": model.epochs, "batch_size": model.batch_size,
                  "learning_rate": model.learning_rate, "patience": model.patience,
                  "val_fraction": model.val_fraction},
        "best_epoch": model.best_epoch_,
        "metric_history": model.history_,
        "warnings": model.warnings_,
        "schema_file": CHECKPOINT_SCHEMA,
        "tensors": offsets,
        "blob_bytes": len(blob),
    }
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, CHECKPOINT_WEIGHTS), "wb") as fh:
        fh.write(bytes(blob))
    model.schema.save(os.path.join(path, CHECKPOINT_SCHEMA))


def load_checkpoint(path):
    """Rebuild a fitted SequenceClassifier; outputs are bit-identical."""
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
    with open(os.path.join(path, CHECKPOINT_WEIGHTS), "rb") as fh:
        blob = fh.read()
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(
            f"weights blob is {len(blob)} bytes, manifest expects {manifest['blob_bytes']}"
        )
    tensors = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        stop = start + entry["length"] * 8
        if stop > len(blob):
            raise CheckpointError(f"tensor {entry['name']} overruns the blob")
        arr = np.frombuffer(blob[start:stop], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    schema = enc.FeatureSchema.load(os.path.join(path, manifest["schema_file"]))
    cfg_cls = LstmConfig if manifest["architecture"] == "lstm" else TransformerConfig
    model = SequenceClassifier(
        schema=schema,
        architecture=manifest["architecture"],
        config=cfg_cls(**manifest["config"]),
        n_classes=manifest["n_classes"],
        seed=manifest["seed"],
        **manifest["hyper"],
    )
    model.config_ = model.config
    model.n_classes_ = manifest["n_classes"]
    model.classes_ = np.arange(model.n_classes_)
    model.best_epoch_ = manifest["best_epoch"]
    model.history_ = manifest["metric_history"]
    model.warnings_ = manifest["warnings"]
    model.input_stats_ = np.stack([tensors.pop("stats.min"), tensors.pop("stats.max")])
    model.params_ = tensors
    return model
