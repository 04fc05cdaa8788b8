"""Weighted matrix-factorization rating model.

This is the weak learner used inside every boosting round and the
standalone baseline. Training is per-example SGD on the weighted,
L2-regularized squared error; the hot loop is numba-compiled but has a
pure-python twin (used by tests to pin down the exact update rule).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numba import njit

from .data import RATING_MAX, RATING_MIN, RatedPairs
from .errors import DegenerateWeightsError, DivergenceError, ValidationError


@dataclass(frozen=True)
class MfHyperparams:
    latent_dim: int = 16
    learning_rate: float = 0.005
    regularization: float = 0.02
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValidationError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.regularization < 0:
            raise ValidationError("regularization must be >= 0")

    def replace(self, **kw) -> "MfHyperparams":
        d = asdict(self)
        d.update(kw)
        return MfHyperparams(**d)


@dataclass(frozen=True)
class FactorModel:
    """Latent user/item factors plus bias terms; immutable once trained."""

    user_factors: np.ndarray  # (k, d)
    item_factors: np.ndarray  # (l, d)
    user_bias: np.ndarray     # (k,)
    item_bias: np.ndarray     # (l,)
    global_mean: float
    hyperparams: Optional[MfHyperparams] = None

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def raw_score(self, u: int, m: int) -> float:
        """Unclipped score; cold (out-of-range) indices contribute zeros."""
        s = self.global_mean
        if 0 <= u < self.n_users:
            s += self.user_bias[u]
        if 0 <= m < self.n_items:
            s += self.item_bias[m]
        if 0 <= u < self.n_users and 0 <= m < self.n_items:
            s += float(self.user_factors[u] @ self.item_factors[m])
        return s

    def predict(self, u: int, m: int) -> float:
        return min(RATING_MAX, max(RATING_MIN, self.raw_score(u, m)))

    def predict_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        users = np.asarray(users, np.int64)
        items = np.asarray(items, np.int64)
        uok = (users >= 0) & (users < self.n_users)
        mok = (items >= 0) & (items < self.n_items)
        us = np.where(uok, users, 0)
        ms = np.where(mok, items, 0)
        scores = np.full(len(users), self.global_mean)
        scores += np.where(uok, self.user_bias[us], 0.0)
        scores += np.where(mok, self.item_bias[ms], 0.0)
        dots = np.einsum("ij,ij->i", self.user_factors[us], self.item_factors[ms])
        scores += np.where(uok & mok, dots, 0.0)
        return np.clip(scores, RATING_MIN, RATING_MAX)

    def to_dict(self) -> dict:
        return {
            "format": "fairboost.factor-model.v1",
            "n_users": self.n_users,
            "n_items": self.n_items,
            "latent_dim": int(self.user_factors.shape[1]),
            "global_mean": self.global_mean,
            "hyperparams": asdict(self.hyperparams) if self.hyperparams else None,
            "user_factors": self.user_factors.tolist(),
            "item_factors": self.item_factors.tolist(),
            "user_bias": self.user_bias.tolist(),
            "item_bias": self.item_bias.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "FactorModel":
        if d.get("format") != "fairboost.factor-model.v1":
            raise ValidationError(f"unknown model format {d.get('format')!r}")
        hp = MfHyperparams(**d["hyperparams"]) if d.get("hyperparams") else None
        return FactorModel(
            user_factors=np.asarray(d["user_factors"], np.float64),
            item_factors=np.asarray(d["item_factors"], np.float64),
            user_bias=np.asarray(d["user_bias"], np.float64),
            item_bias=np.asarray(d["item_bias"], np.float64),
            global_mean=float(d["global_mean"]),
            hyperparams=hp,
        )

    @staticmethod
    def from_json(blob: str) -> "FactorModel":
        return FactorModel.from_dict(json.loads(blob))


def example_objective(p_u, q_m, b_u, b_i, mu, rating, weight, reg) -> float:
    """Per-example training objective: weighted squared error plus L2 on the
    touched parameters. The SGD step is one gradient step on this."""
    err = rating - (mu + b_u + b_i + float(np.dot(p_u, q_m)))
    return weight * err * err + reg * (float(np.dot(p_u, p_u)) +
                                       float(np.dot(q_m, q_m)) +
                                       b_u * b_u + b_i * b_i)


def example_gradients(p_u, q_m, b_u, b_i, mu, rating, weight, reg):
    """Analytic gradients of example_objective w.r.t. (p_u, q_m, b_u, b_i)."""
    err = rating - (mu + b_u + b_i + float(np.dot(p_u, q_m)))
    g_pu = -2.0 * weight * err * q_m + 2.0 * reg * p_u
    g_qm = -2.0 * weight * err * p_u + 2.0 * reg * q_m
    g_bu = -2.0 * weight * err + 2.0 * reg * b_u
    g_bi = -2.0 * weight * err + 2.0 * reg * b_i
    return g_pu, g_qm, g_bu, g_bi


@njit(cache=True)
def _sgd_epoch(P, Q, bu, bi, mu, users, items, ratings, weights, order, lr, reg):
    d = P.shape[1]
    for t in range(order.shape[0]):
        i = order[t]
        u = users[i]
        m = items[i]
        w = weights[i]
        dot = 0.0
        for f in range(d):
            dot += P[u, f] * Q[m, f]
        err = ratings[i] - (mu + bu[u] + bi[m] + dot)
        bu[u] -= lr * (-2.0 * w * err + 2.0 * reg * bu[u])
        bi[m] -= lr * (-2.0 * w * err + 2.0 * reg * bi[m])
        for f in range(d):
            pu = P[u, f]
            qm = Q[m, f]
            P[u, f] = pu - lr * (-2.0 * w * err * qm + 2.0 * reg * pu)
            Q[m, f] = qm - lr * (-2.0 * w * err * pu + 2.0 * reg * qm)


def _sgd_epoch_py(P, Q, bu, bi, mu, users, items, ratings, weights, order, lr, reg):
    """Reference twin of _sgd_epoch; must apply the same updates in the
    same order."""
    for i in order:
        u, m, w = users[i], items[i], weights[i]
        g_pu, g_qm, g_bu, g_bi = example_gradients(
            P[u].copy(), Q[m].copy(), bu[u], bi[m], mu, ratings[i], w, reg)
        bu[u] -= lr * g_bu
        bi[m] -= lr * g_bi
        p_new = P[u] - lr * g_pu
        q_new = Q[m] - lr * g_qm
        P[u], Q[m] = p_new, q_new


def training_loss(P, Q, bu, bi, mu, users, items, ratings, weights, reg) -> float:
    # divergence shows up as overflow here; the caller turns the resulting
    # non-finite loss into an error, so don't warn about it
    with np.errstate(over="ignore", invalid="ignore"):
        preds = mu + bu[users] + bi[items] + np.einsum("ij,ij->i", P[users], Q[items])
        err = ratings - preds
        return float(np.sum(weights * err * err)
                     + reg * (np.sum(P * P) + np.sum(Q * Q)
                              + np.sum(bu * bu) + np.sum(bi * bi)))


def train_weighted_mf(train: RatedPairs, weights: np.ndarray, hp: MfHyperparams,
                      n_users: Optional[int] = None,
                      n_items: Optional[int] = None,
                      _epoch_fn=_sgd_epoch) -> FactorModel:
    """Fit factors by seeded SGD on the weighted squared error.

    Identical (train, weights, hp) produce a bit-identical model. Raises
    DegenerateWeightsError when no weight is positive and DivergenceError
    if the training loss goes non-finite.
    """
    weights = np.asarray(weights, np.float64)
    if len(weights) != len(train):
        raise ValidationError(
            f"{len(weights)} weights for {len(train)} training pairs")
    if np.any(weights < 0):
        raise ValidationError("negative training weight")
    if not np.any(weights > 0):
        raise DegenerateWeightsError("all training weights are zero")

    k = n_users if n_users is not None else int(train.users.max()) + 1
    l = n_items if n_items is not None else int(train.items.max()) + 1
    d = hp.latent_dim

    mu = float(np.average(train.ratings, weights=weights))
    rng = np.random.default_rng(hp.seed)
    scale = 0.1 / math.sqrt(d)
    P = rng.normal(0.0, scale, (k, d))
    Q = rng.normal(0.0, scale, (l, d))
    bu = np.zeros(k)
    bi = np.zeros(l)

    users = np.ascontiguousarray(train.users)
    items = np.ascontiguousarray(train.items)
    ratings = np.ascontiguousarray(train.ratings)
    weights = np.ascontiguousarray(weights)

    for epoch in range(hp.epochs):
        order = rng.permutation(len(train)).astype(np.int64)
        _epoch_fn(P, Q, bu, bi, mu, users, items, ratings, weights, order,
                  hp.learning_rate, hp.regularization)
        loss = training_loss(P, Q, bu, bi, mu, users, items, ratings, weights,
                             hp.regularization)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")

    return FactorModel(user_factors=P, item_factors=Q, user_bias=bu,
                       item_bias=bi, global_mean=mu, hyperparams=hp)
