"""Benchmark harness: run the four algorithms on one dataset, score them
with the popularity-bias metric, and emit comparison reports plus
round-by-round trace files and figures.

All randomness flows from the experiment seed through a fixed derivation
(split seed first, then one sub-seed per algorithm slot and repeat), so
re-running an identical config reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .boosting import BoostConfig, Ensemble, adaboost_train, fairboost_train
from .data import (Dataset, InteractionLog, PopularityPartition, RatedPairs,
                   load_csv, load_movielens, partition_popularity,
                   temporal_split)
from .errors import ValidationError
from .ips import (PropensityKind, estimate_item_propensity,
                  estimate_naive_bayes_propensity, train_mf_ips)
from .metrics import DeltaKind, MetricsReport, popularity_bias
from .mf import MfHyperparams, train_weighted_mf

log = logging.getLogger(__name__)


class Algorithm(enum.Enum):
    MF = "mf"
    MF_IPS = "mf_ips"
    ADABOOST = "adaboost"
    FAIRBOOST = "fairboost"


# Fixed slot order for seed derivation; independent of which subset of
# algorithms a run requests, so results are comparable across runs.
ALGORITHM_ORDER = (Algorithm.MF, Algorithm.MF_IPS, Algorithm.ADABOOST,
                   Algorithm.FAIRBOOST)


class SearchObjective(enum.Enum):
    MIN_PB_ABS = "min_pb_abs"
    MIN_PB_SUBJECT_TO_ERROR = "min_pb_subject_to_error"


@dataclass(frozen=True)
class SearchSpec:
    n_trials: int = 20
    eps1_range: tuple[float, float] = (1e-5, 1.0)
    eps2_range: tuple[float, float] = (1e-5, 1.0)
    objective: SearchObjective = SearchObjective.MIN_PB_SUBJECT_TO_ERROR
    error_budget: float = 0.10   # relative, against the MF baseline
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValidationError("n_trials must be >= 1")
        for lo, hi in (self.eps1_range, self.eps2_range):
            if not (1e-5 <= lo < hi <= 1.0):
                raise ValidationError(
                    f"search range [{lo}, {hi}] must satisfy 1e-5 <= lo < hi <= 1")


@dataclass(frozen=True)
class DatasetSpec:
    """Where the ratings come from: a MovieLens u.data file or a generic
    delimited file with a column mapping."""
    path: str
    loader: str = "movielens"           # "movielens" | "csv"
    csv_schema: Optional[dict] = None

    def load(self) -> InteractionLog:
        if self.loader == "movielens":
            return load_movielens(self.path)
        if self.loader == "csv":
            return load_csv(self.path, self.csv_schema or
                            {"user": 0, "item": 1, "rating": 2})
        raise ValidationError(f"unknown loader {self.loader!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    algorithms: tuple[Algorithm, ...] = (Algorithm.MF, Algorithm.FAIRBOOST)
    tau: int = 100
    delta: DeltaKind = DeltaKind.MSE
    split_fraction: float = 0.8
    boost: BoostConfig = field(default_factory=BoostConfig)
    mf: MfHyperparams = field(default_factory=MfHyperparams)
    propensity: PropensityKind = PropensityKind.NAIVE_BAYES
    search: Optional[SearchSpec] = None
    seed: int = 0
    repeats: int = 1
    output: Optional[str] = None
    formats: tuple[str, ...] = ("json", "csv", "markdown")

    def __post_init__(self):
        if not self.algorithms:
            raise ValidationError("algorithms must be non-empty")
        if not (0.0 < self.split_fraction < 1.0):
            raise ValidationError("split_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        bad = set(self.formats) - {"json", "csv", "markdown"}
        if bad:
            raise ValidationError(f"unknown report formats: {sorted(bad)}")


def derive_seeds(seed: int, repeats: int) -> tuple[int, dict]:
    """Split seed plus one sub-seed per (algorithm slot, repeat)."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(1 + len(ALGORITHM_ORDER) * repeats)
    split_seed = int(children[0].generate_state(1)[0])
    algo_seeds = {}
    i = 1
    for algo in ALGORITHM_ORDER:
        algo_seeds[algo] = [int(children[i + r].generate_state(1)[0])
                            for r in range(repeats)]
        i += repeats
    return split_seed, algo_seeds


def train_algorithm(algo: Algorithm, dataset: Dataset, cfg: ExperimentConfig,
                    seed: int):
    """Train one algorithm with the given derived seed; returns a predictor
    (FactorModel or Ensemble)."""
    if algo is Algorithm.MF:
        hp = cfg.mf.replace(seed=seed)
        return train_weighted_mf(dataset.train, np.ones(len(dataset.train)), hp,
                                 n_users=dataset.n_users, n_items=dataset.n_items)
    if algo is Algorithm.MF_IPS:
        hp = cfg.mf.replace(seed=seed)
        if cfg.propensity is PropensityKind.ITEM_COUNT:
            prop = estimate_item_propensity(dataset)
        else:
            prop = estimate_naive_bayes_propensity(dataset)
        return train_mf_ips(dataset, prop, hp)
    bcfg = cfg.boost.replace(tau=cfg.tau, delta=cfg.delta, mf=cfg.mf, seed=seed)
    if algo is Algorithm.ADABOOST:
        return adaboost_train(dataset, bcfg)
    if algo is Algorithm.FAIRBOOST:
        return fairboost_train(dataset, bcfg)
    raise ValidationError(f"unknown algorithm {algo}")


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    reports: dict            # Algorithm -> MetricsReport (averaged over repeats)
    traces: dict             # Algorithm -> tuple[RoundTrace, ...] (first repeat)
    partition: PopularityPartition
    dataset_summary: dict


def _average_reports(reports: list[MetricsReport]) -> MetricsReport:
    if len(reports) == 1:
        return reports[0]

    def mean_of(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if len(vals) == len(reports) else None

    return MetricsReport(
        overall_error=float(np.mean([r.overall_error for r in reports])),
        error_popular=mean_of([r.error_popular for r in reports]),
        error_nonpopular=mean_of([r.error_nonpopular for r in reports]),
        popularity_bias=mean_of([r.popularity_bias for r in reports]),
        delta=reports[0].delta,
        tau=reports[0].tau,
        n_test_pairs=reports[0].n_test_pairs,
        n_unpartitioned=reports[0].n_unpartitioned,
    )


def run_experiment(cfg: ExperimentConfig,
                   dataset: Optional[Dataset] = None) -> ExperimentResult:
    """Load, split, partition, train every requested algorithm and score it
    on the test split. Writes report files when cfg.output is set."""
    split_seed, algo_seeds = derive_seeds(cfg.seed, cfg.repeats)
    if dataset is None:
        log_ = cfg.dataset.load()
        dataset = temporal_split(log_, cfg.split_fraction, seed=split_seed)
    partition = partition_popularity(dataset, cfg.tau)

    reports: dict = {}
    traces: dict = {}
    for algo in cfg.algorithms:
        per_repeat = []
        for rep in range(cfg.repeats):
            predictor = train_algorithm(algo, dataset, cfg,
                                        algo_seeds[algo][rep])
            per_repeat.append(popularity_bias(predictor, dataset.test,
                                              partition, cfg.delta))
            if rep == 0 and isinstance(predictor, Ensemble):
                traces[algo] = predictor.trace
        reports[algo] = _average_reports(per_repeat)
        pb = reports[algo].popularity_bias
        log.info("%s: error=%.4f pb=%s", algo.value,
                 reports[algo].overall_error,
                 "undefined" if pb is None else f"{pb:.4f}")

    result = ExperimentResult(
        config=cfg, reports=reports, traces=traces, partition=partition,
        dataset_summary={
            "n_users": dataset.n_users, "n_items": dataset.n_items,
            "n_train": len(dataset.train), "n_test": len(dataset.test),
            "n_popular": len(partition.popular),
            "n_non_popular": len(partition.non_popular),
        })
    if cfg.output is not None:
        emit_report(result, Path(cfg.output), cfg.formats)
    return result


def random_search(cfg: ExperimentConfig, spec: SearchSpec,
                  dataset: Optional[Dataset] = None) -> dict:
    """Seeded log-uniform search over (epsilon1, epsilon2) for the booster.

    Each trial trains on the training split minus a validation holdout and
    is scored on that holdout; the test split is never touched. Returns
    {"best": {...}, "trials": [...]}.
    """
    if Algorithm.FAIRBOOST not in cfg.algorithms:
        raise ValidationError("random_search requires FAIRBOOST in algorithms")
    split_seed, algo_seeds = derive_seeds(cfg.seed, cfg.repeats)
    if dataset is None:
        dataset = temporal_split(cfg.dataset.load(), cfg.split_fraction,
                                 seed=split_seed)

    ss = np.random.SeedSequence((cfg.seed, 0x5EA2C4))
    val_seed, draw_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    rng = np.random.default_rng(draw_seed)

    n = len(dataset.train)
    n_val = max(1, int(round(spec.validation_fraction * n)))
    perm = np.random.default_rng(val_seed).permutation(n)
    val_idx, fit_idx = perm[:n_val], perm[n_val:]

    def take(idx):
        t = dataset.train
        return RatedPairs(t.users[idx], t.items[idx], t.ratings[idx])

    inner = Dataset(n_users=dataset.n_users, n_items=dataset.n_items,
                    train=take(fit_idx), test=take(val_idx),
                    user_ids=dataset.user_ids, item_ids=dataset.item_ids)
    inner_partition = partition_popularity(inner, cfg.tau)

    baseline_error = None
    if spec.objective is SearchObjective.MIN_PB_SUBJECT_TO_ERROR:
        mf_model = train_algorithm(Algorithm.MF, inner, cfg,
                                   algo_seeds[Algorithm.MF][0])
        baseline_error = popularity_bias(mf_model, inner.test, inner_partition,
                                         cfg.delta).overall_error

    def log_uniform(lo, hi):
        return float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))

    trials = []
    fb_seed = algo_seeds[Algorithm.FAIRBOOST][0]
    for t in range(spec.n_trials):
        e1 = log_uniform(*spec.eps1_range)
        e2 = log_uniform(*spec.eps2_range)
        bcfg = cfg.boost.replace(tau=cfg.tau, delta=cfg.delta, mf=cfg.mf,
                                 seed=fb_seed, epsilon1=e1, epsilon2=e2)
        ens = fairboost_train(inner, bcfg)
        rep = popularity_bias(ens, inner.test, inner_partition, cfg.delta)
        pb_abs = abs(rep.popularity_bias) if rep.popularity_bias is not None \
            else math.inf
        feasible = True
        if baseline_error is not None:
            feasible = rep.overall_error <= (1.0 + spec.error_budget) * baseline_error
        score = pb_abs if feasible else math.inf
        trials.append({"trial": t, "epsilon1": e1, "epsilon2": e2,
                       "val_error": rep.overall_error,
                       "val_pb": rep.popularity_bias,
                       "feasible": feasible, "score": score})
        log.info("trial %d: eps1=%.2e eps2=%.2e err=%.4f pb=%s feasible=%s",
                 t, e1, e2, rep.overall_error, rep.popularity_bias, feasible)

    scored = [tr for tr in trials if math.isfinite(tr["score"])]
    if scored:
        best = min(scored, key=lambda tr: (tr["score"], tr["trial"]))
    else:
        # No trial met the error budget; fall back to the smallest |pb|.
        log.warning("random_search: no trial within the error budget; "
                    "selecting by |pb| alone")
        best = min(trials,
                   key=lambda tr: (abs(tr["val_pb"]) if tr["val_pb"] is not None
                                   else math.inf, tr["trial"]))
    return {"best": {"epsilon1": best["epsilon1"], "epsilon2": best["epsilon2"],
                     "trial": best["trial"]},
            "baseline_val_error": baseline_error,
            "trials": trials}


# --------------------------------------------------------------------------
# Report emission

MARKDOWN_COLUMNS = ("Error", "Error on popular items",
                    "Error on non-popular items", "Popularity Bias")


def _fmt(value, precision=4) -> str:
    return "undefined" if value is None else f"{value:.{precision}f}"


def emit_report(result: ExperimentResult, out_dir: Path,
                formats=("json", "csv", "markdown"),
                figures: bool = True) -> list[Path]:
    """Write comparison reports, per-round trace files and figures.

    Output is deterministic: identical results produce byte-identical
    files.
    """
    if not result.reports:
        raise ValidationError("no reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    ordered = [a for a in ALGORITHM_ORDER if a in result.reports]

    if "json" in formats:
        payload = {
            "dataset": result.dataset_summary,
            "tau": result.config.tau,
            "delta": result.config.delta.value,
            "seed": result.config.seed,
            "reports": {a.value: result.reports[a].to_dict() for a in ordered},
            "traces": {a.value: [t.to_dict() for t in tr]
                       for a, tr in result.traces.items()},
        }
        path = out_dir / "report.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(path)

    if "csv" in formats:
        path = out_dir / "report.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "overall_error", "error_popular",
                             "error_nonpopular", "popularity_bias", "delta",
                             "tau", "n_test_pairs", "n_unpartitioned"])
            for a in ordered:
                r = result.reports[a]
                writer.writerow([a.value, r.overall_error,
                                 "" if r.error_popular is None else r.error_popular,
                                 "" if r.error_nonpopular is None else r.error_nonpopular,
                                 "" if r.popularity_bias is None else r.popularity_bias,
                                 r.delta.value, r.tau, r.n_test_pairs,
                                 r.n_unpartitioned])
        written.append(path)

    if "markdown" in formats:
        lines = ["| Algorithm | " + " | ".join(MARKDOWN_COLUMNS) + " |",
                 "|" + "---|" * (1 + len(MARKDOWN_COLUMNS))]
        for a in ordered:
            r = result.reports[a]
            lines.append("| {} | {} | {} | {} | {} |".format(
                a.value, _fmt(r.overall_error), _fmt(r.error_popular),
                _fmt(r.error_nonpopular), _fmt(r.popularity_bias)))
        path = out_dir / "report.md"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    # JSON-lines telemetry per boosted algorithm; doubles as the plot data
    # behind the round-vs-bias / round-vs-error figures.
    for algo, trace in sorted(result.traces.items(), key=lambda kv: kv[0].value):
        path = out_dir / f"trace_{algo.value}.jsonl"
        with open(path, "w") as fh:
            for t in trace:
                fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
        written.append(path)

    if figures and result.traces:
        written.extend(render_figures(result, out_dir))
    return written


def render_figures(result: ExperimentResult, out_dir: Path) -> list[Path]:
    """Round-index-vs-bias and round-index-vs-error figures for every
    boosted algorithm that produced a trace."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []
    specs = [("pb", "popularity bias (holdout)", "fig_pb_vs_round.png"),
             ("holdout_error", "error (holdout)", "fig_error_vs_round.png")]
    for key, ylabel, fname in specs:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for algo in ALGORITHM_ORDER:
            if algo not in result.traces:
                continue
            trace = result.traces[algo]
            xs = [t.round + 1 for t in trace]
            ys = [getattr(t, key) for t in trace]
            if all(y is None for y in ys):
                continue
            ax.plot(xs, ys, marker="o", label=algo.value)
        ax.set_xlabel("number of estimators")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
