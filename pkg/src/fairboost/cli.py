"""Command line interface.

Subcommands:
  run        train the requested algorithms on a dataset and emit reports
  search     random-search the booster's (epsilon1, epsilon2) bounds
  gen-synth  generate a synthetic MNAR ratings universe

Exit codes: 0 success, 1 validation/config error, 2 runtime or training
error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .boosting import BoostConfig
from .data import gen_synthetic_mnar
from .errors import FairboostError, ValidationError
from .experiment import (Algorithm, DatasetSpec, ExperimentConfig,
                         SearchObjective, SearchSpec, random_search,
                         run_experiment)
from .ips import PropensityKind
from .metrics import DeltaKind
from .mf import MfHyperparams

log = logging.getLogger("fairboost")


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed YAML mapping; keys mirror
    the config field names."""
    if "dataset" not in d:
        raise ValidationError("config missing 'dataset'")
    ds = d["dataset"]
    dataset = DatasetSpec(path=ds["path"], loader=ds.get("loader", "movielens"),
                          csv_schema=ds.get("csv_schema"))
    kwargs: dict = {"dataset": dataset}
    if "algorithms" in d:
        kwargs["algorithms"] = tuple(Algorithm(a) for a in d["algorithms"])
    for key in ("tau", "split_fraction", "seed", "repeats", "output"):
        if key in d:
            kwargs[key] = d[key]
    if "delta" in d:
        kwargs["delta"] = DeltaKind(d["delta"])
    if "formats" in d:
        kwargs["formats"] = tuple(d["formats"])
    if "boost" in d:
        kwargs["boost"] = BoostConfig.from_dict(d["boost"])
    if "mf" in d:
        kwargs["mf"] = MfHyperparams(**d["mf"])
    if "propensity" in d:
        kwargs["propensity"] = PropensityKind(d["propensity"])
    if "search" in d:
        s = dict(d["search"])
        if "objective" in s:
            s["objective"] = SearchObjective(s["objective"])
        for key in ("eps1_range", "eps2_range"):
            if key in s:
                s[key] = tuple(float(v) for v in s[key])
        kwargs["search"] = SearchSpec(**s)
    return ExperimentConfig(**kwargs)


def _load_config(config_path, dataset, loader, algos, tau, delta, seed, out,
                 formats, rounds, repeats) -> ExperimentConfig:
    d: dict = {}
    if config_path is not None:
        with open(config_path) as fh:
            d = yaml.safe_load(fh) or {}
    if dataset is not None:
        d.setdefault("dataset", {})["path"] = dataset
    if loader is not None:
        d.setdefault("dataset", {})["loader"] = loader
    if algos:
        d["algorithms"] = list(algos)
    if tau is not None:
        d["tau"] = tau
    if delta is not None:
        d["delta"] = delta
    if seed is not None:
        d["seed"] = seed
    if out is not None:
        d["output"] = out
    if formats:
        d["formats"] = list(formats)
    if rounds is not None:
        d.setdefault("boost", {})["rounds"] = rounds
    if repeats is not None:
        d["repeats"] = repeats
    return config_from_dict(d)


def _common_options(f):
    for opt in reversed([
        click.argument("config_path", required=False,
                       type=click.Path(exists=True)),
        click.option("--dataset", help="Path to the ratings file."),
        click.option("--loader", type=click.Choice(["movielens", "csv"]),
                     help="How to parse the ratings file."),
        click.option("--algos", multiple=True,
                     type=click.Choice([a.value for a in Algorithm]),
                     help="Algorithms to run (repeatable)."),
        click.option("--tau", type=int, help="Popularity count threshold."),
        click.option("--delta", type=click.Choice(["mse", "mae"]),
                     help="Per-pair error kind."),
        click.option("--seed", type=int, help="Experiment seed."),
        click.option("--out", help="Output directory for reports."),
        click.option("--format", "formats", multiple=True,
                     type=click.Choice(["json", "csv", "markdown"]),
                     help="Report formats (repeatable)."),
        click.option("--rounds", type=int, help="Boosting rounds."),
        click.option("--repeats", type=int,
                     help="Average metrics over this many seeded repeats."),
    ]):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Verbose logging.")
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _run_guarded(fn):
    try:
        fn()
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except FairboostError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@_common_options
def run(config_path, dataset, loader, algos, tau, delta, seed, out, formats,
        rounds, repeats):
    """Run the benchmark described by CONFIG_PATH (YAML) and/or flags."""

    def body():
        cfg = _load_config(config_path, dataset, loader, algos, tau, delta,
                           seed, out, formats, rounds, repeats)
        result = run_experiment(cfg)
        for algo, report in sorted(result.reports.items(),
                                   key=lambda kv: kv[0].value):
            pb = report.popularity_bias
            click.echo(f"{algo.value}: error={report.overall_error:.4f} "
                       f"pb={'undefined' if pb is None else format(pb, '.4f')}")
        if cfg.output:
            click.echo(f"reports written to {cfg.output}")

    _run_guarded(body)


@main.command()
@_common_options
@click.option("--trials", type=int, help="Number of search trials.")
@click.option("--eps1-range", nargs=2, type=float,
              help="Log-uniform range for epsilon1.")
@click.option("--eps2-range", nargs=2, type=float,
              help="Log-uniform range for epsilon2.")
@click.option("--objective",
              type=click.Choice([o.value for o in SearchObjective]),
              help="Trial selection objective.")
def search(config_path, dataset, loader, algos, tau, delta, seed, out, formats,
           rounds, repeats, trials, eps1_range, eps2_range, objective):
    """Random-search (epsilon1, epsilon2) for the bias-aware booster."""

    def body():
        cfg = _load_config(config_path, dataset, loader, algos, tau, delta,
                           seed, out, formats, rounds, repeats)
        if Algorithm.FAIRBOOST not in cfg.algorithms:
            cfg = ExperimentConfig(**{**{f: getattr(cfg, f)
                                         for f in cfg.__dataclass_fields__},
                                      "algorithms": cfg.algorithms +
                                      (Algorithm.FAIRBOOST,)})
        spec = cfg.search or SearchSpec()
        overrides = {}
        if trials is not None:
            overrides["n_trials"] = trials
        if eps1_range:
            overrides["eps1_range"] = tuple(eps1_range)
        if eps2_range:
            overrides["eps2_range"] = tuple(eps2_range)
        if objective is not None:
            overrides["objective"] = SearchObjective(objective)
        if overrides:
            spec = SearchSpec(**{**{f: getattr(spec, f)
                                    for f in spec.__dataclass_fields__},
                                 **overrides})
        outcome = random_search(cfg, spec)
        best = outcome["best"]
        click.echo(f"best: epsilon1={best['epsilon1']:.6g} "
                   f"epsilon2={best['epsilon2']:.6g} (trial {best['trial']})")
        if cfg.output:
            out_dir = Path(cfg.output)
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / "search.json"
            path.write_text(json.dumps(outcome, indent=2, sort_keys=True) + "\n")
            click.echo(f"trial log written to {path}")

    _run_guarded(body)


@main.command("gen-synth")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--users", type=int, default=200, show_default=True)
@click.option("--items", type=int, default=300, show_default=True)
@click.option("--skew", type=float, default=2.0, show_default=True,
              help="Popularity skew of the observation probabilities; "
                   "0 gives an MCAR mask.")
@click.option("--density", type=float, default=0.05, show_default=True,
              help="Mean observation probability per cell.")
@click.option("--out", required=True, help="Output directory.")
def gen_synth(seed, users, items, skew, density, out):
    """Generate a synthetic MNAR universe: observed ratings as CSV plus the
    full true matrix and observation probabilities as NPZ."""

    def body():
        universe = gen_synthetic_mnar(seed=seed, k=users, l=items, skew=skew,
                                      density=density)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "synthetic.csv"
        with open(csv_path, "w") as fh:
            fh.write("user,item,rating\n")
            ds = universe.observed
            for pairs in (ds.train, ds.test):
                for u, m, r in zip(pairs.users, pairs.items, pairs.ratings):
                    fh.write(f"{u},{m},{float(r)!r}\n")
        npz_path = out_dir / "universe.npz"
        np.savez_compressed(npz_path, true_matrix=universe.true_matrix,
                            observation_probs=universe.observation_probs,
                            seed=np.int64(seed))
        click.echo(f"wrote {csv_path} and {npz_path}")

    _run_guarded(body)


if __name__ == "__main__":
    main()
