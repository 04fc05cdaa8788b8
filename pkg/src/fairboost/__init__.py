"""Rating prediction with boosting-based mitigation of popularity bias."""

from .boosting import (BoostConfig, Ensemble, ResidualMode, adaboost_train,
                       fairboost_train)
from .data import (Dataset, InteractionLog, PopularityPartition, RatedPairs,
                   SyntheticUniverse, gen_synthetic_mnar, load_csv,
                   load_movielens, partition_popularity, temporal_split)
from .experiment import (Algorithm, DatasetSpec, ExperimentConfig, SearchSpec,
                         random_search, run_experiment)
from .ips import (PropensityKind, PropensityModel, estimate_item_propensity,
                  estimate_naive_bayes_propensity, ips_weighted_loss,
                  train_mf_ips)
from .metrics import (DeltaKind, MetricsReport, delta, ideal_loss, naive_loss,
                      popularity_bias)
from .mf import FactorModel, MfHyperparams, train_weighted_mf

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "BoostConfig", "Dataset", "DatasetSpec", "DeltaKind",
    "Ensemble", "ExperimentConfig", "FactorModel", "InteractionLog",
    "MetricsReport", "MfHyperparams", "PopularityPartition", "PropensityKind",
    "PropensityModel", "RatedPairs", "ResidualMode", "SearchSpec",
    "SyntheticUniverse", "adaboost_train", "delta", "estimate_item_propensity",
    "estimate_naive_bayes_propensity", "fairboost_train", "gen_synthetic_mnar",
    "ideal_loss", "ips_weighted_loss", "load_csv", "load_movielens",
    "naive_loss", "partition_popularity", "popularity_bias", "random_search",
    "run_experiment", "temporal_split", "train_mf_ips", "train_weighted_mf",
]
