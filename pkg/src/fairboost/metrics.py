"""Error estimators and the popularity-bias metric.

All functions are pure over immutable inputs. The popularity-bias value of
a predictor is the mean error on non-popular items minus the mean error on
popular items, computed over observed test pairs; an empty group makes the
metric undefined (None), never silently zero.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .data import PopularityPartition, RatedPairs, SyntheticUniverse
from .errors import UndefinedMetricError


class DeltaKind(enum.Enum):
    MSE = "mse"
    MAE = "mae"


class Predictor(Protocol):
    def predict_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        ...


def delta(kind: DeltaKind, truth: float, pred: float) -> float:
    """Per-pair error: squared for MSE, absolute for MAE."""
    if kind is DeltaKind.MSE:
        return (truth - pred) ** 2
    return abs(truth - pred)


def delta_many(kind: DeltaKind, truths: np.ndarray, preds: np.ndarray) -> np.ndarray:
    diff = np.asarray(truths, np.float64) - np.asarray(preds, np.float64)
    return diff ** 2 if kind is DeltaKind.MSE else np.abs(diff)


def naive_loss(predictor: Predictor, pairs: RatedPairs, kind: DeltaKind) -> float:
    """Mean error over the given observed pairs only."""
    if len(pairs) == 0:
        raise UndefinedMetricError("naive_loss over an empty pair set")
    preds = predictor.predict_many(pairs.users, pairs.items)
    return float(delta_many(kind, pairs.ratings, preds).mean())


def ideal_loss(predictor: Predictor, universe: SyntheticUniverse,
               kind: DeltaKind) -> float:
    """Mean error over every cell of the fully known rating matrix."""
    k, l = universe.true_matrix.shape
    users = np.repeat(np.arange(k, dtype=np.int64), l)
    items = np.tile(np.arange(l, dtype=np.int64), k)
    preds = predictor.predict_many(users, items)
    return float(delta_many(kind, universe.true_matrix.ravel(), preds).mean())


@dataclass(frozen=True)
class MetricsReport:
    """Flat summary of one predictor's test-set performance.

    ``popularity_bias`` is error_nonpopular - error_popular, or None when
    either group has no test pairs. ``n_unpartitioned`` counts test pairs
    whose item had no training rating; those are excluded from the bias.
    """

    overall_error: float
    error_popular: Optional[float]
    error_nonpopular: Optional[float]
    popularity_bias: Optional[float]
    delta: DeltaKind
    tau: int
    n_test_pairs: int
    n_unpartitioned: int = 0

    def to_dict(self) -> dict:
        return {
            "overall_error": self.overall_error,
            "error_popular": self.error_popular,
            "error_nonpopular": self.error_nonpopular,
            "popularity_bias": self.popularity_bias,
            "delta": self.delta.value,
            "tau": self.tau,
            "n_test_pairs": self.n_test_pairs,
            "n_unpartitioned": self.n_unpartitioned,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        return MetricsReport(
            overall_error=d["overall_error"],
            error_popular=d["error_popular"],
            error_nonpopular=d["error_nonpopular"],
            popularity_bias=d["popularity_bias"],
            delta=DeltaKind(d["delta"]),
            tau=d["tau"],
            n_test_pairs=d["n_test_pairs"],
            n_unpartitioned=d.get("n_unpartitioned", 0),
        )


def popularity_bias(predictor: Predictor, test_pairs: RatedPairs,
                    partition: PopularityPartition,
                    kind: DeltaKind) -> MetricsReport:
    """Group test errors by the partition and report their difference."""
    if len(test_pairs) == 0:
        raise UndefinedMetricError("popularity_bias over an empty pair set")
    preds = predictor.predict_many(test_pairs.users, test_pairs.items)
    errs = delta_many(kind, test_pairs.ratings, preds)

    n_items = int(test_pairs.items.max()) + 1 if len(test_pairs) else 0
    codes = partition.group_codes(max(
        n_items,
        (max(partition.popular | partition.non_popular) + 1)
        if (partition.popular or partition.non_popular) else 0))
    pair_codes = codes[test_pairs.items]

    pop_mask = pair_codes == 1
    nonpop_mask = pair_codes == -1

    err_pop = float(errs[pop_mask].mean()) if pop_mask.any() else None
    err_nonpop = float(errs[nonpop_mask].mean()) if nonpop_mask.any() else None
    pb = (err_nonpop - err_pop) if (err_pop is not None and err_nonpop is not None) \
        else None

    return MetricsReport(
        overall_error=float(errs.mean()),
        error_popular=err_pop,
        error_nonpopular=err_nonpop,
        popularity_bias=pb,
        delta=kind,
        tau=partition.tau,
        n_test_pairs=len(test_pairs),
        n_unpartitioned=int((pair_codes == 0).sum()),
    )
