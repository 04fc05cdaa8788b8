"""Propensity estimation and inverse-propensity-scored training.

Propensities approximate the probability that a (user, item) rating was
observed at all; weighting observed errors by their inverse de-biases
losses computed on MNAR data. Estimates are clipped below to keep the
inverse weights bounded.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, RatedPairs, SyntheticUniverse
from .errors import EstimationError, ValidationError
from .metrics import DeltaKind, Predictor, delta_many
from .mf import FactorModel, MfHyperparams, train_weighted_mf

log = logging.getLogger(__name__)

DEFAULT_CLIP_FLOOR = 0.01

RATING_BINS = (1, 2, 3, 4, 5)


class PropensityKind(enum.Enum):
    ITEM_COUNT = "item_count"
    NAIVE_BAYES = "naive_bayes"


@dataclass(frozen=True)
class PropensityModel:
    """Evaluable observation-probability estimate, clipped into
    [clip_floor, 1]."""

    kind: PropensityKind
    clip_floor: float
    # ITEM_COUNT: per-item propensity, indexed by item.
    item_scores: Optional[np.ndarray] = None
    # NAIVE_BAYES: per rating value 1..5, indexed by int(round(r)) - 1.
    rating_scores: Optional[np.ndarray] = None

    def propensities(self, pairs: RatedPairs) -> np.ndarray:
        if self.kind is PropensityKind.ITEM_COUNT:
            scores = self.item_scores
            items = np.clip(pairs.items, 0, len(scores) - 1)
            out = np.where((pairs.items >= 0) & (pairs.items < len(scores)),
                           scores[items], self.clip_floor)
        else:
            bins = _rating_bin(pairs.ratings)
            out = self.rating_scores[bins]
        return np.clip(out, self.clip_floor, 1.0)

    def to_dict(self) -> dict:
        return {
            "format": "fairboost.propensity.v1",
            "kind": self.kind.value,
            "clip_floor": self.clip_floor,
            "item_scores": None if self.item_scores is None
            else self.item_scores.tolist(),
            "rating_scores": None if self.rating_scores is None
            else self.rating_scores.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "PropensityModel":
        if d.get("format") != "fairboost.propensity.v1":
            raise ValidationError(f"unknown propensity format {d.get('format')!r}")
        return PropensityModel(
            kind=PropensityKind(d["kind"]),
            clip_floor=float(d["clip_floor"]),
            item_scores=None if d["item_scores"] is None
            else np.asarray(d["item_scores"], np.float64),
            rating_scores=None if d["rating_scores"] is None
            else np.asarray(d["rating_scores"], np.float64),
        )

    @staticmethod
    def from_json(blob: str) -> "PropensityModel":
        return PropensityModel.from_dict(json.loads(blob))


def _rating_bin(ratings: np.ndarray) -> np.ndarray:
    """Map (possibly fractional) ratings onto the 1..5 bins, 0-indexed."""
    return np.clip(np.rint(ratings).astype(np.int64), 1, 5) - 1


def rating_histogram(ratings: np.ndarray) -> np.ndarray:
    """Counts over the five rating bins."""
    return np.bincount(_rating_bin(np.asarray(ratings)), minlength=5).astype(np.float64)


def estimate_item_propensity(train: Dataset,
                             clip_floor: float = DEFAULT_CLIP_FLOOR) -> PropensityModel:
    """Item propensity = training count of the item / max item count."""
    counts = train.train_item_counts().astype(np.float64)
    top = counts.max()
    if top <= 0:
        raise EstimationError("training split has no ratings")
    scores = np.clip(counts / top, clip_floor, 1.0)
    return PropensityModel(kind=PropensityKind.ITEM_COUNT,
                           clip_floor=clip_floor, item_scores=scores)


def estimate_naive_bayes_propensity(
        train: Dataset,
        marginal_source: Optional[np.ndarray] = None,
        clip_floor: float = DEFAULT_CLIP_FLOOR) -> PropensityModel:
    """Naive-Bayes propensity: P(r | observed) * P(observed) / P(r).

    ``marginal_source`` is a 5-bin rating histogram from a near-MCAR
    sample. When omitted, the training marginal is used instead (which
    collapses the estimate to the constant P(observed)); this fallback is
    logged because none of the supported datasets ships an MCAR sample.
    """
    obs_hist = rating_histogram(train.train.ratings)
    n_obs = obs_hist.sum()
    if n_obs <= 0:
        raise EstimationError("training split has no ratings")
    if marginal_source is None:
        log.warning("naive-Bayes propensity: no MCAR marginal supplied; "
                    "falling back to the training marginal (constant propensity)")
        marginal_source = obs_hist
    marginal_source = np.asarray(marginal_source, np.float64)
    if marginal_source.shape != (5,):
        raise ValidationError("marginal_source must be a 5-bin rating histogram")
    for i, mass in enumerate(marginal_source):
        if mass <= 0:
            raise EstimationError(f"zero-mass rating bin {RATING_BINS[i]} "
                                  "in marginal_source")

    p_r_given_obs = obs_hist / n_obs
    p_obs = n_obs / (train.n_users * train.n_items)
    p_r = marginal_source / marginal_source.sum()
    scores = np.clip(p_r_given_obs * p_obs / p_r, clip_floor, 1.0)
    return PropensityModel(kind=PropensityKind.NAIVE_BAYES,
                           clip_floor=clip_floor, rating_scores=scores)


def inverse_propensity_weights(prop: PropensityModel,
                               pairs: RatedPairs) -> np.ndarray:
    """1/p per pair, normalized to mean 1 so the effective learning rate
    matches unweighted training."""
    w = 1.0 / prop.propensities(pairs)
    return w / w.mean()


def train_mf_ips(train: Dataset, prop: PropensityModel,
                 hp: MfHyperparams) -> FactorModel:
    """Weighted MF with inverse-propensity weights on the training pairs."""
    weights = inverse_propensity_weights(prop, train.train)
    return train_weighted_mf(train.train, weights, hp,
                             n_users=train.n_users, n_items=train.n_items)


def ips_weighted_loss(predictor: Predictor, pairs: RatedPairs,
                      propensities: np.ndarray, total_cells: int,
                      kind: DeltaKind) -> float:
    """Inverse-propensity estimate of the full-matrix mean error:
    (1 / total_cells) * sum over observed pairs of delta / propensity.

    With exact propensities this is an unbiased estimator of the ideal
    loss regardless of the missingness pattern.
    """
    if total_cells <= 0:
        raise ValidationError("total_cells must be positive")
    preds = predictor.predict_many(pairs.users, pairs.items)
    errs = delta_many(kind, pairs.ratings, preds)
    return float(np.sum(errs / np.asarray(propensities, np.float64)) / total_cells)


def true_propensities(universe: SyntheticUniverse, pairs: RatedPairs) -> np.ndarray:
    """Exact observation probabilities of the given pairs in a synthetic
    universe (the oracle the estimators approximate)."""
    return universe.observation_probs[pairs.users, pairs.items]
