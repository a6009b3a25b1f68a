"""Shared helpers: tiny schemas and planted toy windows for model tests."""

import numpy as np
import pytest

from mobaxai import encoding as enc


def make_toy_schema(n_cat=1, cardinality=3, n_num=4):
    groups = []
    for i in range(n_cat):
        groups.append(
            enc.FeatureGroup(f"cat{i}", "categorical", ("hero", i, "id"), cardinality)
        )
    for i in range(n_num):
        groups.append(
            enc.FeatureGroup(f"num{i}", "numeric", ("hero", i, "gold"), vmin=0.0, vmax=1.0)
        )
    return enc.FeatureSchema(groups)


def make_toy_windows(rng, n, length, schema):
    """Random valid windows; label = 1 iff the first numeric dim's mean > 0.5."""
    X = np.zeros((n, length, schema.d_in))
    first_num = None
    for i, g in enumerate(schema.groups):
        start, _ = schema.span(i)
        if g.kind == "categorical":
            choice = rng.integers(0, g.cardinality, size=(n, length))
            rows = np.repeat(np.arange(n), length)
            cols = np.tile(np.arange(length), n)
            X[rows, cols, start + choice.reshape(-1)] = 1.0
        else:
            X[:, :, start] = rng.random((n, length))
            if first_num is None:
                first_num = start
    y = (X[:, :, first_num].mean(axis=1) > 0.5).astype(np.int64)
    return X, y


@pytest.fixture(scope="session")
def toy_schema():
    return make_toy_schema()


@pytest.fixture(scope="session")
def toy_data(toy_schema):
    rng = np.random.default_rng(42)
    return make_toy_windows(rng, 400, 3, toy_schema)
