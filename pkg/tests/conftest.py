"""Shared fixtures.

NUMBA_NUM_THREADS must be in the environment before numba is first
imported (the thread-pool size is frozen at import); set it here so the
determinism tests can actually ask for 2+ threads on any machine.
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

import terraclass as tc
from terraclass.synth import demo_recipe


@pytest.fixture(scope="session")
def demo_cloud():
    """The ~13k-point mixed scene; all six classes present."""
    return tc.synth_scene(demo_recipe(), seed=42)


@pytest.fixture(scope="session")
def small_cloud(demo_cloud):
    """~1.3k-point subsample of the demo scene, cheap enough for brute-force
    oracles; keeps color and labels."""
    rng = np.random.default_rng(0)
    idx = np.sort(rng.choice(len(demo_cloud), 1300, replace=False))
    return demo_cloud.select(idx)


@pytest.fixture(scope="session")
def blobs():
    """Three well-separated Gaussian blobs: (X_train, y_train, X_test, y_test)."""
    rng = np.random.default_rng(11)
    centers = np.array([[0.0, 0.0, 0.0], [4.0, 4.0, 0.0], [0.0, 4.0, 4.0]])
    per, held = 400, 150
    Xs, ys = [], []
    for c, mu in enumerate(centers):
        Xs.append(rng.normal(mu, 0.6, (per + held, 3)))
        ys.append(np.full(per + held, c, dtype=np.uint8))
    X = np.vstack(Xs).astype(np.float32)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    X, y = X[order], y[order]
    n_train = 3 * per
    return X[:n_train], y[:n_train], X[n_train:], y[n_train:]
