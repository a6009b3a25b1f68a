"""Feature schema, frame encoding, window assembly, and the grouped embedding.

Categorical feature groups become one-hot spans; numeric groups are min-max
normalized into [0, 1] with statistics fitted on the training split. The
embedding maps every categorical span through its own dense layer and copies
numeric dimensions unchanged, so gradients taken at the raw input stay
meaningful per dimension.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .datagen import CAMP_INDEX, N_HEROES, N_TOWERS_PER_CAMP, CAMP_NAMES, TOWER_TYPES, HERO_POOL


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    kind: str  # "categorical" | "numeric"
    source: tuple  # (category, entity index or None, field)
    cardinality: int = 0
    vmin: float = None
    vmax: float = None

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise EncodingError(f"group {self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and self.cardinality < 2:
            raise EncodingError(f"group {self.name}: cardinality must be >= 2")

    @property
    def width(self):
        return self.cardinality if self.kind == "categorical" else 1

    @property
    def embedding_width(self):
        if self.kind == "numeric":
            return 1
        return max(2, math.ceil(math.sqrt(self.cardinality)))


class FeatureSchema:
    """Ordered feature groups with contiguous, non-overlapping input spans."""

    def __init__(self, groups):
        self.groups = list(groups)
        offsets = []
        off = 0
        for g in self.groups:
            offsets.append(off)
            off += g.width
        self._offsets = offsets
        self.d_in = off
        self.d_emb = int(np.sum([g.embedding_width for g in self.groups])) if self.groups else 0
        names = []
        for g in self.groups:
            if g.kind == "categorical":
                names.extend(f"{g.name}={v}" for v in range(g.cardinality))
            else:
                names.append(g.name)
        self.feature_names = names

    def span(self, index):
        g = self.groups[index]
        return self._offsets[index], self._offsets[index] + g.width

    @property
    def fitted(self):
        return all(
            g.kind == "categorical" or (g.vmin is not None and g.vmax is not None)
            for g in self.groups
        )

    def segments(self):
        """Group spans with consecutive numeric groups merged into one block."""
        segs = []
        for i, g in enumerate(self.groups):
            start, stop = self.span(i)
            if g.kind == "categorical":
                segs.append(("categorical", g, start, stop))
            elif segs and segs[-1][0] == "numeric" and segs[-1][3] == start:
                segs[-1] = ("numeric", None, segs[-1][2], stop)
            else:
                segs.append(("numeric", None, start, stop))
        return segs

    def to_json_dict(self):
        return {
            "d_in": self.d_in,
            "d_emb": self.d_emb,
            "groups": [
                {
                    "name": g.name,
                    "kind": g.kind,
                    "source": list(g.source),
                    "cardinality": g.cardinality,
                    "vmin": g.vmin,
                    "vmax": g.vmax,
                }
                for g in self.groups
            ],
        }

    @classmethod
    def from_json_dict(cls, doc):
        groups = [
            FeatureGroup(
                name=g["name"],
                kind=g["kind"],
                source=tuple(g["source"]),
                cardinality=g["cardinality"],
                vmin=g["vmin"],
                vmax=g["vmax"],
            )
            for g in doc["groups"]
        ]
        schema = cls(groups)
        if schema.d_in != doc["d_in"]:
            raise EncodingError(f"schema width mismatch: {schema.d_in} != {doc['d_in']}")
        return schema

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


HERO_NUMERIC_FIELDS = (
    "level", "hp_fraction", "gold", "kill_count", "death_count",
    "x", "y", "skill_1", "skill_2", "skill_3", "skill_4", "dist_tyrant",
)
GLOBAL_FIELDS = ("game_time", "gold_diff", "alive_hero_diff", "alive_tower_diff")
TYRANT_FIELDS = ("hp_fraction", "alive", "x", "y")


def mini_schema_skeleton():
    """Desk-scale schema: every feature family exercised, unfitted numerics."""
    groups = []
    for i in range(N_HEROES):
        groups.append(FeatureGroup(f"hero_{i}.id", "categorical", ("hero", i, "id"), HERO_POOL))
        groups.append(FeatureGroup(f"hero_{i}.camp", "categorical", ("hero", i, "camp"), 2))
        for fld in HERO_NUMERIC_FIELDS:
            groups.append(FeatureGroup(f"hero_{i}.{fld}", "numeric", ("hero", i, fld)))
    for fld in GLOBAL_FIELDS:
        groups.append(FeatureGroup(f"global.{fld}", "numeric", ("global", None, fld)))
    for fld in TYRANT_FIELDS:
        groups.append(FeatureGroup(f"tyrant.{fld}", "numeric", ("monster", 0, fld)))
    for j in range(2 * N_TOWERS_PER_CAMP):
        camp, ttype = CAMP_NAMES[j // N_TOWERS_PER_CAMP], TOWER_TYPES[j % N_TOWERS_PER_CAMP]
        for fld in ("hp_fraction", "alive"):
            groups.append(FeatureGroup(f"tower_{camp}_{ttype}.{fld}", "numeric", ("tower", j, fld)))
    return FeatureSchema(groups)


def _tyrant_index(record):
    return record.monster_type.index("tyrant")


def _series(record, source):
    """Vectorized raw value series over all frames for one schema source."""
    cat, idx, fld = source
    T = record.length
    if cat == "hero":
        if fld == "id":
            return np.full(T, record.hero_id[idx], dtype=np.float64)
        if fld == "camp":
            return np.full(T, record.hero_camp[idx], dtype=np.float64)
        if fld == "level":
            return record.hero_level[:, idx].astype(np.float64)
        if fld == "hp_fraction":
            return record.hero_hp[:, idx]
        if fld == "gold":
            return record.hero_gold[:, idx]
        if fld == "kill_count":
            return record.hero_kills[:, idx].astype(np.float64)
        if fld == "death_count":
            return record.hero_deaths[:, idx].astype(np.float64)
        if fld == "x":
            return record.hero_x[:, idx]
        if fld == "y":
            return record.hero_y[:, idx]
        if fld.startswith("skill_"):
            return record.hero_skills[:, idx, int(fld[-1]) - 1].astype(np.float64)
        if fld == "dist_tyrant":
            m = _tyrant_index(record)
            dx = record.hero_x[:, idx] - record.monster_pos[m, 0]
            dy = record.hero_y[:, idx] - record.monster_pos[m, 1]
            return np.sqrt(dx * dx + dy * dy)
    elif cat == "global":
        if fld == "game_time":
            return np.arange(1, T + 1, dtype=np.float64)
        if fld == "gold_diff":
            return record.global_gold[:, 0] - record.global_gold[:, 1]
        if fld == "alive_hero_diff":
            return (record.global_alive[:, 0] - record.global_alive[:, 1]).astype(np.float64)
        if fld == "alive_tower_diff":
            return (record.global_towers[:, 0] - record.global_towers[:, 1]).astype(np.float64)
    elif cat == "monster":
        if fld == "hp_fraction":
            return record.monster_hp[:, idx]
        if fld == "alive":
            return record.monster_alive[:, idx].astype(np.float64)
        if fld == "x":
            return np.full(T, record.monster_pos[idx, 0])
        if fld == "y":
            return np.full(T, record.monster_pos[idx, 1])
    elif cat == "tower":
        if fld == "hp_fraction":
            return record.tower_hp[:, idx]
        if fld == "alive":
            return record.tower_alive[:, idx].astype(np.float64)
    raise EncodingError(f"unresolvable source {source!r}")


def _frame_value(frame, source):
    """Raw value of one schema source on a single Frame."""
    cat, idx, fld = source
    if cat == "hero":
        h = frame.hero_states[idx]
        if fld == "id":
            return float(h.hero_id)
        if fld == "camp":
            return float(CAMP_INDEX[h.camp])
        if fld == "level":
            return float(h.level)
        if fld == "hp_fraction":
            return h.hp_fraction
        if fld == "gold":
            return h.gold
        if fld == "kill_count":
            return float(h.kill_count)
        if fld == "death_count":
            return float(h.death_count)
        if fld == "x":
            return h.position[0]
        if fld == "y":
            return h.position[1]
        if fld.startswith("skill_"):
            return float(h.skill_levels[int(fld[-1]) - 1])
        if fld == "dist_tyrant":
            tyrant = next(m for m in frame.monster_states if m.monster_type == "tyrant")
            dx = h.position[0] - tyrant.position[0]
            dy = h.position[1] - tyrant.position[1]
            return math.sqrt(dx * dx + dy * dy)
    elif cat == "global":
        g = frame.global_state
        if fld == "game_time":
            return float(g.game_time)
        if fld == "gold_diff":
            return g.gold[0] - g.gold[1]
        if fld == "alive_hero_diff":
            return float(g.alive_heroes[0] - g.alive_heroes[1])
        if fld == "alive_tower_diff":
            return float(g.alive_towers[0] - g.alive_towers[1])
    elif cat == "monster":
        m = frame.monster_states[idx]
        if fld == "hp_fraction":
            return m.hp_fraction
        if fld == "alive":
            return float(m.alive)
        if fld == "x":
            return m.position[0]
        if fld == "y":
            return m.position[1]
    elif cat == "tower":
        t = frame.tower_states[idx]
        if fld == "hp_fraction":
            return t.hp_fraction
        if fld == "alive":
            return float(t.alive)
    raise EncodingError(f"unresolvable source {source!r}")


def _require_fitted(schema):
    if not schema.fitted:
        raise EncodingError("schema has unfitted numeric groups; run fit_normalization first")


def _encode_categorical(group, values, out, offset):
    vals = np.asarray(values)
    if np.any(vals != np.round(vals)) or vals.min() < 0 or vals.max() >= group.cardinality:
        raise EncodingError(
            f"group {group.name}: categorical value outside cardinality {group.cardinality}"
        )
    idx = vals.astype(np.intp)
    out[np.arange(out.shape[0]), offset + idx] = 1.0


def _normalize(group, values):
    if group.vmax == group.vmin:
        return np.zeros_like(np.asarray(values, dtype=np.float64))
    return np.clip((values - group.vmin) / (group.vmax - group.vmin), 0.0, 1.0)


def encode_frame(frame, schema):
    """Encode one Frame into a D_in vector (one-hot + normalized numerics)."""
    _require_fitted(schema)
    out = np.zeros((1, schema.d_in))
    for i, g in enumerate(schema.groups):
        v = _frame_value(frame, g.source)
        start, _ = schema.span(i)
        if g.kind == "categorical":
            _encode_categorical(g, [v], out, start)
        else:
            out[0, start] = _normalize(g, v)
    return out[0]


def encode_record(record, schema):
    """Vectorized encoding of every frame of a record: (T, D_in)."""
    _require_fitted(schema)
    out = np.zeros((record.length, schema.d_in))
    for i, g in enumerate(schema.groups):
        series = _series(record, g.source)
        start, _ = schema.span(i)
        if g.kind == "categorical":
            _encode_categorical(g, series, out, start)
        else:
            out[:, start] = _normalize(g, series)
    return out


def fit_normalization(records, skeleton):
    """Return a schema whose numeric min/max are empirical extremes over records."""
    if not records:
        raise EncodingError("fit_normalization needs a non-empty training split")
    lo = np.full(len(skeleton.groups), np.inf)
    hi = np.full(len(skeleton.groups), -np.inf)
    numeric = [i for i, g in enumerate(skeleton.groups) if g.kind == "numeric"]
    for record in records:
        for i in numeric:
            series = _series(record, skeleton.groups[i].source)
            lo[i] = min(lo[i], series.min())
            hi[i] = max(hi[i], series.max())
    groups = []
    for i, g in enumerate(skeleton.groups):
        if g.kind == "numeric":
            groups.append(replace(g, vmin=float(lo[i]), vmax=float(hi[i])))
        else:
            groups.append(g)
    return FeatureSchema(groups)


@dataclass
class SequenceWindow:
    """An l x D_in model input ending at game-time t."""

    X: np.ndarray
    t: int
    label: int = None
    task: str = None


def build_window(record, schema, t, window, label=None, task=None, encoded=None):
    """Assemble the window covering game-times [t - window + 1, t].

    ``encoded`` optionally passes a precomputed ``encode_record`` matrix.
    """
    if t - window + 1 < 1:
        raise EncodingError(f"window of length {window} ending at t={t} precedes frame 1")
    if t > record.length:
        raise EncodingError(f"t={t} beyond match length {record.length}")
    mat = encode_record(record, schema) if encoded is None else encoded
    return SequenceWindow(mat[t - window: t].copy(), t, label, task)


def task_windows(records, schema, task, horizon, window):
    """Windows plus labels for one task over many records."""
    from .datagen import extract_event_instances

    out = []
    for record in records:
        instances = extract_event_instances(record, task, horizon, window)
        if not instances:
            continue
        encoded = encode_record(record, schema)
        for inst in instances:
            out.append(build_window(record, schema, inst.t, window,
                                    label=inst.label, task=task, encoded=encoded))
    return out


def stack_windows(windows):
    X = np.stack([w.X for w in windows]) if windows else np.zeros((0, 0, 0))
    y = np.array([w.label for w in windows], dtype=np.int64)
    return X, y


def init_embedding_params(schema, rng):
    """Glorot-initialized dense maps, one per categorical group."""
    params = {}
    for g in schema.groups:
        if g.kind != "categorical":
            continue
        fan_in, fan_out = g.cardinality, g.embedding_width
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"emb.{g.name}.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"emb.{g.name}.b"] = np.zeros(fan_out)
    return params


class EmbeddingLayer:
    """Per-group dense maps over one-hot spans; numerics pass through."""

    def __init__(self, schema, params):
        self.schema = schema
        self.params = params

    def apply(self, X):
        """Plain numpy forward for an (..., D_in) array."""
        pieces = []
        for kind, g, start, stop in self.schema.segments():
            seg = X[..., start:stop]
            if kind == "categorical":
                pieces.append(seg @ self.params[f"emb.{g.name}.W"] + self.params[f"emb.{g.name}.b"])
            else:
                pieces.append(seg)
        return np.concatenate(pieces, axis=-1)


def embed(X, layer):
    """Embed an input matrix; accepts (l, D_in) or any (..., D_in) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != layer.schema.d_in:
        raise EncodingError(f"input width {X.shape[-1]} != schema D_in {layer.schema.d_in}")
    return layer.apply(X)


def embed_graph(tape, X_t, schema, param_tensors):
    """Autodiff-graph version of ``embed`` for a (..., D_in) input tensor."""
    if X_t.data.shape[-1] != schema.d_in:
        raise EncodingError(f"input width {X_t.data.shape[-1]} != schema D_in {schema.d_in}")
    pieces = []
    for kind, g, start, stop in schema.segments():
        seg = ad.slice_axis(X_t, -1, start, stop)
        if kind == "categorical":
            seg = ad.add(ad.matmul(seg, param_tensors[f"emb.{g.name}.W"]),
                         param_tensors[f"emb.{g.name}.b"])
        pieces.append(seg)
    return ad.concat(pieces, axis=-1)


class WindowEncoder(BaseEstimator, TransformerMixin):
    """Fits normalization statistics on records and encodes anchored windows."""

    def __init__(self, window=5):
        self.window = window

    def fit(self, X, y=None):
        """X: list of GameRecords (the training split)."""
        self.schema_ = fit_normalization(X, mini_schema_skeleton())
        return self

    def transform(self, X):
        """X: list of (record, t) anchors -> array of shape (n, window, D_in)."""
        if not hasattr(self, "schema_"):
            raise NotFittedError("WindowEncoder must be fitted before transform")
        windows = []
        cache = {}
        for record, t in X:
            if id(record) not in cache:
                cache[id(record)] = encode_record(record, self.schema_)
            windows.append(
                build_window(record, self.schema_, t, self.window, encoded=cache[id(record)]).X
            )
        return np.stack(windows) if windows else np.zeros((0, self.window, self.schema_.d_in))
