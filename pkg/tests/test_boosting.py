import math

import numpy as np
import pytest

from fairboost.boosting import (BoostConfig, Ensemble, ResidualMode,
                                RoundTrace, adaboost_train, compute_costs,
                                compute_error_rate, fairboost_train,
                                learner_weight, sample_by_weight,
                                update_weights)
from fairboost.data import PopularityPartition
from fairboost.errors import DegenerateUpdateError, ValidationError
from fairboost.metrics import DeltaKind
from fairboost.mf import MfHyperparams

SMALL_MF = MfHyperparams(latent_dim=4, epochs=5)


def small_config(**kw):
    base = dict(rounds=3, epsilon1=0.1, epsilon2=0.01, tau=5, mf=SMALL_MF,
                seed=7)
    base.update(kw)
    return BoostConfig(**base)


class TestErrorRate:
    def test_equal_residuals(self):
        # every residual equals the max: each term is 1 - e^-1
        truths = np.array([5.0, 1.0, 4.0])
        preds = truths - 2.0
        got = compute_error_rate(np.ones(3) / 3, truths, preds)
        assert got == pytest.approx(1.0 - math.exp(-1.0), abs=1e-9)

    def test_half_zero_residuals(self):
        # residuals [r, 0], equal weights: 0.5 * (1 - e^-1)
        truths = np.array([4.0, 3.0])
        preds = np.array([3.0, 3.0])
        got = compute_error_rate(np.array([0.5, 0.5]), truths, preds)
        assert got == pytest.approx(0.5 * (1.0 - math.exp(-1.0)), abs=1e-9)

    def test_weights_renormalized(self):
        truths = np.array([4.0, 3.0])
        preds = np.array([3.0, 3.0])
        a = compute_error_rate(np.array([0.5, 0.5]), truths, preds)
        b = compute_error_rate(np.array([5.0, 5.0]), truths, preds)
        assert a == pytest.approx(b, abs=1e-12)

    def test_perfect_predictions_zero(self):
        truths = np.array([3.0, 4.0])
        got = compute_error_rate(np.ones(2), truths, truths)
        assert got == 0.0

    def test_signed_mode_differs_only_through_abs(self):
        truths = np.array([3.0, 3.0])
        preds = np.array([2.0, 4.0])  # residuals +1 and -1
        ab = compute_error_rate(np.ones(2), truths, preds,
                                ResidualMode.ABSOLUTE)
        sg = compute_error_rate(np.ones(2), truths, preds, ResidualMode.SIGNED)
        assert ab == pytest.approx(1.0 - math.exp(-1.0))
        # signed: r_max = 1, residuals [1, -1] -> mean of (1-e^-1, 1-e^1)
        assert sg == pytest.approx(0.5 * ((1 - math.exp(-1)) +
                                          (1 - math.exp(1))))

    def test_empty_sample_raises(self):
        with pytest.raises(ValidationError):
            compute_error_rate(np.array([]), np.array([]), np.array([]))

    def test_bounds_in_absolute_mode(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.integers(1, 30)
            truths = rng.uniform(1, 5, n)
            preds = rng.uniform(1, 5, n)
            w = rng.uniform(0.1, 1, n)
            e = compute_error_rate(w, truths, preds)
            assert 0.0 <= e < 1.0


class TestLearnerWeight:
    def test_half_is_zero(self):
        assert learner_weight(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_fifth(self):
        assert learner_weight(0.2) == pytest.approx(0.5 * math.log(4.0),
                                                    abs=1e-9)

    def test_clamped_near_zero(self):
        expected = 0.5 * math.log((1 - 1e-10) / 1e-10)
        assert learner_weight(0.0) == pytest.approx(expected, abs=1e-6)
        assert learner_weight(1e-12) == learner_weight(0.0)

    def test_monotone_decreasing(self):
        errs = np.linspace(0.01, 0.99, 25)
        alphas = [learner_weight(e) for e in errs]
        assert all(a > b for a, b in zip(alphas, alphas[1:]))


class TestComputeCosts:
    PART = PopularityPartition(1, frozenset({0}), frozenset({1}))

    def costs(self, *, residual, pb, item, eps1=0.5, eps2=0.1):
        truths = np.array([3.0 + residual])
        preds = np.array([3.0])
        return compute_costs(truths, preds, np.array([item]), self.PART, pb,
                             eps1, eps2)[0]

    def test_popular_item_costed_when_pb_positive(self):
        assert self.costs(residual=1.0, pb=0.3, item=0) == pytest.approx(0.3)

    def test_nonpopular_item_costed_when_pb_negative(self):
        assert self.costs(residual=1.0, pb=-0.3, item=1) == pytest.approx(0.3)

    def test_wrong_group_for_sign_gets_zero(self):
        assert self.costs(residual=1.0, pb=0.3, item=1) == 0.0
        assert self.costs(residual=1.0, pb=-0.3, item=0) == 0.0

    def test_small_residual_gets_zero(self):
        assert self.costs(residual=0.4, pb=0.3, item=0) == 0.0
        # the residual test is strict
        assert self.costs(residual=0.5, pb=0.3, item=0) == 0.0

    def test_small_bias_gets_zero(self):
        assert self.costs(residual=1.0, pb=0.05, item=0) == 0.0
        assert self.costs(residual=1.0, pb=0.1, item=0) == 0.0  # strict

    def test_undefined_or_zero_pb_gives_all_zeros(self):
        assert self.costs(residual=1.0, pb=None, item=0) == 0.0
        assert self.costs(residual=1.0, pb=0.0, item=0) == 0.0

    def test_unpartitioned_item_gets_zero(self):
        assert self.costs(residual=1.0, pb=0.3, item=2) == 0.0

    def test_cost_magnitude_is_abs_pb(self):
        assert self.costs(residual=1.0, pb=-0.42, item=1) == pytest.approx(0.42)


class TestUpdateWeights:
    def test_hand_value(self):
        # factors e^{ln2 * 1} = 2 and e^0 = 1 -> (2/3, 1/3)
        w = np.array([0.5, 0.5])
        out = update_weights(w, np.array([0, 1]), math.log(2.0),
                             np.array([1.0, 0.0]), np.zeros(2))
        assert out == pytest.approx([2 / 3, 1 / 3], abs=1e-9)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(0.1, 1, 20)
        w /= w.sum()
        out = update_weights(w, np.arange(20), 0.7, rng.uniform(0, 1, 20),
                             rng.uniform(0, 0.3, 20))
        assert out.sum() == pytest.approx(1.0, abs=1e-9)

    def test_unsampled_pairs_only_renormalized(self):
        w = np.array([0.25, 0.25, 0.5])
        out = update_weights(w, np.array([0]), math.log(2.0), np.array([1.0]),
                             np.zeros(1))
        # pair 1 and 2 keep their 1:2 ratio
        assert out[2] / out[1] == pytest.approx(2.0)
        assert out[0] == pytest.approx(0.5 / 1.25)

    def test_positive_cost_strictly_increases_relative_weight(self):
        w = np.array([0.5, 0.5])
        residuals = np.array([0.8, 0.8])
        no_cost = update_weights(w, np.array([0, 1]), 0.5, residuals,
                                 np.zeros(2))
        with_cost = update_weights(w, np.array([0, 1]), 0.5, residuals,
                                   np.array([0.3, 0.0]))
        assert with_cost[0] > no_cost[0]
        assert with_cost[1] < no_cost[1]

    def test_degenerate_normalizer_raises(self):
        w = np.array([1.0, 0.0])
        with pytest.raises(DegenerateUpdateError):
            update_weights(w, np.array([0]), -2000.0, np.array([1.0]),
                           np.zeros(1))


class TestSampling:
    def test_deterministic(self):
        w = np.full(10, 0.1)
        a = sample_by_weight(10, w, 50, seed=3)
        b = sample_by_weight(10, w, 50, seed=3)
        assert np.array_equal(a, b)

    def test_frequencies_follow_weights(self):
        w = np.array([0.7, 0.2, 0.1])
        idx = sample_by_weight(3, w, 200_000, seed=0)
        freqs = np.bincount(idx, minlength=3) / len(idx)
        assert np.abs(freqs - w).max() < 0.01

    def test_zero_weight_never_drawn(self):
        w = np.array([0.5, 0.0, 0.5])
        idx = sample_by_weight(3, w, 10_000, seed=1)
        assert not (idx == 1).any()


class TestConfig:
    def test_epsilon_bounds(self):
        with pytest.raises(ValidationError):
            small_config(epsilon1=0.0)
        with pytest.raises(ValidationError):
            small_config(epsilon2=1.5)
        with pytest.raises(ValidationError):
            small_config(epsilon1=math.inf)

    def test_epsilon2_inf_sentinel_allowed(self):
        cfg = small_config(epsilon2=math.inf)
        assert math.isinf(cfg.epsilon2)

    def test_dict_roundtrip_with_inf(self):
        cfg = small_config(epsilon2=math.inf, sample_size=50)
        d = cfg.to_dict()
        assert d["epsilon2"] == "inf"
        assert BoostConfig.from_dict(d) == cfg

    def test_dict_roundtrip_finite(self):
        cfg = small_config(residual_mode=ResidualMode.SIGNED)
        assert BoostConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def dataset(small_universe):
    return small_universe.observed


class TestBoostingLoop:
    def test_member_count_and_trace(self, dataset):
        ens = fairboost_train(dataset, small_config(rounds=4))
        assert len(ens.members) == 4
        assert len(ens.trace) == 4
        for j, t in enumerate(ens.trace):
            assert t.round == j
            assert 0.0 <= t.err < 1.0
            assert t.alpha == pytest.approx(learner_weight(t.err))
            assert t.cost_mass >= 0.0
            assert t.n_costed >= 0

    def test_deterministic(self, dataset):
        a = fairboost_train(dataset, small_config())
        b = fairboost_train(dataset, small_config())
        assert a.to_json() == b.to_json()

    def test_seed_changes_result(self, dataset):
        a = fairboost_train(dataset, small_config(seed=7))
        b = fairboost_train(dataset, small_config(seed=8))
        assert a.to_json() != b.to_json()

    def test_plain_booster_never_costs(self, dataset):
        ens = adaboost_train(dataset, small_config())
        assert all(t.cost_mass == 0.0 and t.n_costed == 0 for t in ens.trace)

    def test_disabled_bias_threshold_equals_plain_booster(self, dataset):
        # epsilon2 = inf turns off the cost branch entirely; everything
        # downstream (sampling, models, weights) must match bit for bit
        fb = fairboost_train(dataset, small_config(epsilon2=math.inf))
        ab = adaboost_train(dataset, small_config(epsilon2=math.inf))
        assert fb.to_json() == ab.to_json()

    def test_biased_run_costs_some_pairs(self, dataset):
        # with permissive thresholds, at least one round should assign costs
        ens = fairboost_train(dataset, small_config(
            rounds=5, epsilon1=1e-5, epsilon2=1e-5))
        assert any(t.n_costed > 0 for t in ens.trace)
        for t in ens.trace:
            if t.n_costed:
                assert t.pb is not None
                assert t.cost_mass == pytest.approx(abs(t.pb) * t.n_costed)

    def test_predictions_clipped_and_finite(self, dataset):
        ens = fairboost_train(dataset, small_config())
        preds = ens.predict_many(dataset.test.users, dataset.test.items)
        assert np.isfinite(preds).all()
        assert (preds >= 1.0).all() and (preds <= 5.0).all()

    def test_sample_size_override(self, dataset):
        ens = fairboost_train(dataset, small_config(rounds=2, sample_size=40))
        assert len(ens.members) == 2

    def test_too_small_training_set(self):
        from conftest import make_dataset
        ds = make_dataset([(0, 0, 3.0)], [(0, 0, 3.0)])
        with pytest.raises(ValidationError):
            fairboost_train(ds, small_config())

    def test_serialization_roundtrip(self, dataset):
        ens = fairboost_train(dataset, small_config(rounds=2))
        clone = Ensemble.from_json(ens.to_json())
        assert clone.to_json() == ens.to_json()
        preds = ens.predict_many(dataset.test.users, dataset.test.items)
        cpreds = clone.predict_many(dataset.test.users, dataset.test.items)
        assert np.array_equal(preds, cpreds)
