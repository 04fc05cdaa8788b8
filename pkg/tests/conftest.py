import os
from pathlib import Path

import numpy as np
import pytest

from fairboost.data import (Dataset, RatedPairs, gen_synthetic_mnar,
                            load_movielens, temporal_split)

# The MovieLens 100K experiments need the real u.data file, which cannot be
# downloaded in offline environments. Provide it via FAIRBOOST_ML100K or
# drop it under data/ml-100k/.
ML100K_CANDIDATES = (
    os.environ.get("FAIRBOOST_ML100K"),
    "data/ml-100k/u.data",
    "tests/data/ml-100k/u.data",
)


def find_ml100k():
    for cand in ML100K_CANDIDATES:
        if cand and Path(cand).exists():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def ml100k_path():
    path = find_ml100k()
    if path is None:
        pytest.skip("MovieLens 100K u.data not available (no network in this "
                    "environment); set FAIRBOOST_ML100K to run this test")
    return path


@pytest.fixture(scope="session")
def ml100k_dataset(ml100k_path):
    log = load_movielens(ml100k_path)
    return temporal_split(log, 0.8)


def make_dataset(train_rows, test_rows, n_users=None, n_items=None) -> Dataset:
    """Hand-built Dataset from (u, m, rating) rows."""
    train = RatedPairs.from_rows(train_rows)
    test = RatedPairs.from_rows(test_rows)
    all_u = np.concatenate([train.users, test.users])
    all_m = np.concatenate([train.items, test.items])
    return Dataset(
        n_users=n_users if n_users is not None else int(all_u.max()) + 1,
        n_items=n_items if n_items is not None else int(all_m.max()) + 1,
        train=train, test=test)


@pytest.fixture(scope="session")
def small_universe():
    return gen_synthetic_mnar(seed=42, k=40, l=50, skew=1.5, density=0.15)


@pytest.fixture(scope="session")
def surrogate_dataset():
    """MovieLens-shaped synthetic dataset for scale/integration tests."""
    return gen_synthetic_mnar(seed=11, k=943, l=1682, skew=0.8,
                              density=0.063, noise=0.8).observed
