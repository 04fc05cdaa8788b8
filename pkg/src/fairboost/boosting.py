"""Adaptive boosting of weighted-MF weak learners.

Implements the bias-aware booster (per-pair costs driven by the round's
popularity bias) and the plain booster (identical loop with the cost
branch disabled). The loop is sequential by construction: each round's
sampling distribution depends on the previous round's update.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import (Dataset, PopularityPartition, RatedPairs,
                   partition_from_counts)
from .errors import DegenerateUpdateError, ValidationError
from .metrics import DeltaKind, MetricsReport, popularity_bias
from .mf import FactorModel, MfHyperparams, train_weighted_mf

ERR_CLAMP = 1e-10
WEIGHT_SUM_TOL = 1e-9
EPSILON_RANGE = (1e-5, 1.0)


class ResidualMode(enum.Enum):
    # ABSOLUTE uses |A - Ahat| everywhere a residual enters the round
    # arithmetic; SIGNED uses A - Ahat as printed in the source formulas.
    ABSOLUTE = "absolute"
    SIGNED = "signed"


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 10
    epsilon1: float = 0.1
    epsilon2: float = 0.01
    tau: int = 100
    sample_size: Optional[int] = None  # None -> size of the boost-fit set
    delta: DeltaKind = DeltaKind.MSE
    mf: MfHyperparams = field(default_factory=MfHyperparams)
    seed: int = 0
    residual_mode: ResidualMode = ResidualMode.ABSOLUTE
    holdout_fraction: float = 0.1  # round-level bias signal, carved from train

    def __post_init__(self):
        if self.rounds < 1:
            raise ValidationError(f"rounds must be >= 1, got {self.rounds}")
        lo, hi = EPSILON_RANGE
        if not (lo <= self.epsilon1 <= hi):
            raise ValidationError(f"epsilon1 {self.epsilon1} outside [{lo}, {hi}]")
        # +inf is the documented sentinel that disables the cost branch.
        if not (lo <= self.epsilon2 <= hi or math.isinf(self.epsilon2)):
            raise ValidationError(f"epsilon2 {self.epsilon2} outside [{lo}, {hi}]")
        if self.sample_size is not None and self.sample_size < 1:
            raise ValidationError("sample_size must be >= 1")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ValidationError("holdout_fraction must be in (0, 1)")

    def replace(self, **kw) -> "BoostConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return BoostConfig(**d)

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "epsilon1": self.epsilon1,
            "epsilon2": self.epsilon2 if math.isfinite(self.epsilon2) else "inf",
            "tau": self.tau,
            "sample_size": self.sample_size,
            "delta": self.delta.value,
            "mf": asdict(self.mf),
            "seed": self.seed,
            "residual_mode": self.residual_mode.value,
            "holdout_fraction": self.holdout_fraction,
        }

    @staticmethod
    def from_dict(d: dict) -> "BoostConfig":
        eps2 = d.get("epsilon2", 0.01)
        return BoostConfig(
            rounds=d.get("rounds", 10),
            epsilon1=d.get("epsilon1", 0.1),
            epsilon2=math.inf if eps2 == "inf" else float(eps2),
            tau=d.get("tau", 100),
            sample_size=d.get("sample_size"),
            delta=DeltaKind(d.get("delta", "mse")),
            mf=MfHyperparams(**d.get("mf", {})),
            seed=d.get("seed", 0),
            residual_mode=ResidualMode(d.get("residual_mode", "absolute")),
            holdout_fraction=d.get("holdout_fraction", 0.1),
        )


@dataclass(frozen=True)
class RoundTrace:
    round: int
    err: float
    alpha: float
    pb: Optional[float]          # round bias signal on the holdout; None if undefined
    cost_mass: float             # sum of nonzero costs assigned this round
    n_costed: int                # pairs that received a positive cost
    holdout_error: float

    def to_dict(self) -> dict:
        return {"round": self.round, "err": self.err, "alpha": self.alpha,
                "pb": self.pb, "cost_mass": self.cost_mass,
                "n_costed": self.n_costed, "holdout_error": self.holdout_error}


@dataclass(frozen=True)
class Ensemble:
    """Ordered (alpha, model) pairs; predictions are the alpha-weighted
    mean of member predictions, clipped to the rating scale."""

    members: tuple[tuple[float, FactorModel], ...]
    config: BoostConfig
    trace: tuple[RoundTrace, ...] = ()

    def predict_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        alphas = np.array([a for a, _ in self.members])
        preds = np.stack([m.predict_many(users, items) for _, m in self.members])
        total = alphas.sum()
        if total > 0:
            combined = (alphas[:, None] * preds).sum(axis=0) / total
        else:
            combined = preds.mean(axis=0)
        return np.clip(combined, 1.0, 5.0)

    def predict(self, u: int, m: int) -> float:
        return float(self.predict_many(np.array([u]), np.array([m]))[0])

    def to_dict(self) -> dict:
        return {
            "format": "fairboost.ensemble.v1",
            "config": self.config.to_dict(),
            "members": [{"alpha": a, "model": m.to_dict()} for a, m in self.members],
            "trace": [t.to_dict() for t in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "Ensemble":
        if d.get("format") != "fairboost.ensemble.v1":
            raise ValidationError(f"unknown ensemble format {d.get('format')!r}")
        return Ensemble(
            members=tuple((float(m["alpha"]), FactorModel.from_dict(m["model"]))
                          for m in d["members"]),
            config=BoostConfig.from_dict(d["config"]),
            trace=tuple(RoundTrace(**t) for t in d["trace"]),
        )

    @staticmethod
    def from_json(blob: str) -> "Ensemble":
        return Ensemble.from_dict(json.loads(blob))


def sample_by_weight(n_pairs: int, w: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Indices of n draws with replacement, pair i drawn with probability
    w[i]. Deterministic given seed; zero-weight pairs are never drawn."""
    rng = np.random.default_rng(seed)
    return rng.choice(n_pairs, size=n, replace=True, p=w)


def _residuals(truths: np.ndarray, preds: np.ndarray,
               mode: ResidualMode) -> np.ndarray:
    diff = np.asarray(truths, np.float64) - np.asarray(preds, np.float64)
    return np.abs(diff) if mode is ResidualMode.ABSOLUTE else diff


def compute_error_rate(weights: np.ndarray, truths: np.ndarray,
                       preds: np.ndarray,
                       mode: ResidualMode = ResidualMode.ABSOLUTE) -> float:
    """Weighted mean of 1 - exp(-residual / max residual) over the sample.

    Weights are renormalized to sum to 1 over the sample. Defined as 0
    when the maximum residual is 0 (perfect predictions).
    """
    weights = np.asarray(weights, np.float64)
    if len(weights) == 0:
        raise ValidationError("empty sample")
    w = weights / weights.sum()
    r = _residuals(truths, preds, mode)
    r_max = float(r.max())
    if r_max == 0.0:
        return 0.0
    return float(np.sum(w * (1.0 - np.exp(-r / r_max))))


def learner_weight(err: float) -> float:
    """0.5 * ln((1 - err) / err), with err clamped away from 0 and 1."""
    e = min(max(err, ERR_CLAMP), 1.0 - ERR_CLAMP)
    return 0.5 * math.log((1.0 - e) / e)


def compute_costs(truths: np.ndarray, preds: np.ndarray, items: np.ndarray,
                  partition: PopularityPartition, pb: Optional[float],
                  eps1: float, eps2: float,
                  mode: ResidualMode = ResidualMode.ABSOLUTE) -> np.ndarray:
    """Per-pair cost: |pb| when the pair's residual exceeds eps1, |pb|
    exceeds eps2, and the item sits in the group singled out by pb's sign
    (popular when pb > 0, non-popular when pb < 0); otherwise 0."""
    n = len(items)
    if pb is None or pb == 0.0:
        return np.zeros(n)
    r = _residuals(truths, preds, mode)
    n_items = 1 + max(int(items.max()) if n else -1,
                      max(partition.popular, default=-1),
                      max(partition.non_popular, default=-1))
    codes = partition.group_codes(n_items)[items]
    hit = (r > eps1) & (abs(pb) > eps2) & (
        ((codes == 1) & (pb > 0)) | ((codes == -1) & (pb < 0)))
    return np.where(hit, abs(pb), 0.0)


def update_weights(w: np.ndarray, sampled: np.ndarray, alpha: float,
                   normalized_residuals: np.ndarray,
                   costs: np.ndarray) -> np.ndarray:
    """Multiply each sampled pair's weight by exp(alpha * r) * (1 + cost),
    leave unsampled pairs untouched, then renormalize to sum 1.

    ``sampled`` must hold unique indices; ``normalized_residuals`` are the
    round residuals divided by the round's max residual.
    """
    out = np.asarray(w, np.float64).copy()
    out[sampled] = out[sampled] * np.exp(alpha * normalized_residuals) \
        * (1.0 + costs)
    z = out.sum()
    if not (z > 0.0) or not math.isfinite(z):
        raise DegenerateUpdateError(f"weight normalizer Z = {z}")
    return out / z


def _split_holdout(train: RatedPairs, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n = len(train)
    n_hold = max(1, int(round(fraction * n)))
    perm = rng.permutation(n)
    hold, fit = perm[:n_hold], perm[n_hold:]

    def take(idx):
        return RatedPairs(train.users[idx], train.items[idx], train.ratings[idx])

    return take(fit), take(hold)


def _boost(train: Dataset, cfg: BoostConfig, use_costs: bool) -> Ensemble:
    if len(train.train) < 2:
        raise ValidationError("need at least 2 training pairs to boost")
    ss = np.random.SeedSequence(cfg.seed)
    seed_holdout, seed_rounds = ss.spawn(2)
    fit, holdout = _split_holdout(train.train, cfg.holdout_fraction,
                                  seed_holdout.generate_state(1)[0])

    n_fit = len(fit)
    sample_size = cfg.sample_size if cfg.sample_size is not None else n_fit
    w = np.full(n_fit, 1.0 / n_fit)

    members: list[tuple[float, FactorModel]] = []
    trace: list[RoundTrace] = []
    round_seeds = seed_rounds.spawn(cfg.rounds)

    for j in range(cfg.rounds):
        s_sample, s_mf = (int(s.generate_state(1)[0])
                          for s in round_seeds[j].spawn(2))
        idx = sample_by_weight(n_fit, w, sample_size, s_sample)
        sample = RatedPairs(fit.users[idx], fit.items[idx], fit.ratings[idx])

        model = train_weighted_mf(sample, np.ones(len(sample)),
                                  cfg.mf.replace(seed=s_mf),
                                  n_users=train.n_users, n_items=train.n_items)

        preds = model.predict_many(sample.users, sample.items)
        err_j = compute_error_rate(w[idx], sample.ratings, preds,
                                   cfg.residual_mode)
        alpha_j = learner_weight(err_j)

        # Round partition lives on the sampled multiset, with tau scaled to
        # the sample size; the global train partition is only used for the
        # final reported metrics.
        counts_j = np.bincount(sample.items, minlength=train.n_items)
        tau_j = int(round(cfg.tau * sample_size / n_fit))
        part_j = partition_from_counts(counts_j, tau_j)

        report_j: MetricsReport = popularity_bias(model, holdout, part_j,
                                                  cfg.delta)
        pb_j = report_j.popularity_bias

        uniq = np.unique(idx)
        upairs = RatedPairs(fit.users[uniq], fit.items[uniq], fit.ratings[uniq])
        upreds = model.predict_many(upairs.users, upairs.items)
        r = _residuals(upairs.ratings, upreds, cfg.residual_mode)
        r_max = float(r.max())
        r_hat = r / r_max if r_max != 0.0 else np.zeros_like(r)

        if use_costs:
            costs = compute_costs(upairs.ratings, upreds, upairs.items, part_j,
                                  pb_j, cfg.epsilon1, cfg.epsilon2,
                                  cfg.residual_mode)
        else:
            costs = np.zeros(len(uniq))

        w = update_weights(w, uniq, alpha_j, r_hat, costs)

        members.append((alpha_j, model))
        trace.append(RoundTrace(round=j, err=err_j, alpha=alpha_j, pb=pb_j,
                                cost_mass=float(costs.sum()),
                                n_costed=int((costs > 0).sum()),
                                holdout_error=report_j.overall_error))

    return Ensemble(members=tuple(members), config=cfg, trace=tuple(trace))


def fairboost_train(train: Dataset, cfg: BoostConfig) -> Ensemble:
    """Full booster with the popularity-bias cost branch enabled."""
    return _boost(train, cfg, use_costs=True)


def adaboost_train(train: Dataset, cfg: BoostConfig) -> Ensemble:
    """Plain booster: the same loop with every cost forced to zero."""
    return _boost(train, cfg, use_costs=False)


def ensemble_predict(ens: Ensemble, u: int, m: int) -> float:
    return ens.predict(u, m)
