import gzip
import math

import numpy as np
import pytest

from fairboost.data import (gen_synthetic_mnar, load_csv, load_movielens,
                            partition_popularity, resample_mask,
                            temporal_split)
from fairboost.errors import (IngestionError, SchemaError, SplitError,
                              ValidationError)

from conftest import make_dataset


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadMovielens:
    def test_single_line(self, tmp_path):
        path = write(tmp_path, "u.data", "196\t242\t3\t881250949\n")
        log = load_movielens(path)
        assert len(log) == 1
        rec = log.records[0]
        assert rec == ("196", "242", 3.0, 881250949)

    def test_dedup_keeps_latest_timestamp(self, tmp_path):
        path = write(tmp_path, "u.data",
                     "1\t2\t2\t100\n1\t2\t4\t200\n")
        log = load_movielens(path)
        assert len(log) == 1
        assert log.records[0].rating == 4.0

    def test_dedup_out_of_order_timestamps(self, tmp_path):
        path = write(tmp_path, "u.data",
                     "1\t2\t4\t200\n1\t2\t2\t100\n")
        log = load_movielens(path)
        assert log.records[0].rating == 4.0

    def test_malformed_line_names_line_number(self, tmp_path):
        path = write(tmp_path, "u.data", "1\t2\t3\t4\n1\t2\n")
        with pytest.raises(IngestionError, match="line 2"):
            load_movielens(path)

    def test_rating_out_of_range(self, tmp_path):
        path = write(tmp_path, "u.data", "1\t2\t7\t100\n")
        with pytest.raises(ValidationError):
            load_movielens(path)

    def test_gzip_input(self, tmp_path):
        path = tmp_path / "u.data.gz"
        with gzip.open(path, "wt") as fh:
            fh.write("1\t2\t3\t100\n")
        assert len(load_movielens(path)) == 1


class TestLoadCsv:
    def test_index_mapping(self, tmp_path):
        path = write(tmp_path, "r.csv", "u,i,r\na,x,5\n")
        log = load_csv(path, {"user": 0, "item": 1, "rating": 2,
                              "header": True})
        assert len(log) == 1
        assert log.records[0] == ("a", "x", 5.0, None)

    def test_name_mapping(self, tmp_path):
        path = write(tmp_path, "r.csv",
                     "item,user,rating,ts\nx,a,4,7\n")
        log = load_csv(path, {"user": "user", "item": "item",
                              "rating": "rating", "timestamp": "ts"})
        assert log.records[0] == ("a", "x", 4.0, 7)

    def test_header_only_is_empty(self, tmp_path):
        path = write(tmp_path, "r.csv", "u,i,r\n")
        assert len(load_csv(path, {"user": 0, "item": 1, "rating": 2,
                                   "header": True})) == 0

    def test_rating_out_of_bounds(self, tmp_path):
        path = write(tmp_path, "r.csv", "a,x,6\n")
        with pytest.raises(ValidationError):
            load_csv(path, {"user": 0, "item": 1, "rating": 2,
                            "header": False})

    def test_missing_column_is_schema_error(self, tmp_path):
        path = write(tmp_path, "r.csv", "u,i\na,x\n")
        with pytest.raises(SchemaError):
            load_csv(path, {"user": "u", "item": "i", "rating": "score"})
        with pytest.raises(SchemaError):
            load_csv(path, {"user": "u", "item": "i"})


class TestTemporalSplit:
    def make_log(self, tmp_path, n=10):
        lines = "".join(f"u{i}\tm{i}\t3\t{i + 1}\n" for i in range(n))
        return load_movielens(write(tmp_path, "u.data", lines))

    def test_ordered_prefix(self, tmp_path):
        ds = temporal_split(self.make_log(tmp_path), 0.8)
        assert len(ds.train) == 8
        assert len(ds.test) == 2

    def test_train_size_is_ceil(self, tmp_path):
        ds = temporal_split(self.make_log(tmp_path, n=7), 0.5)
        assert len(ds.train) == math.ceil(0.5 * 7)

    def test_train_test_disjoint(self, tmp_path):
        ds = temporal_split(self.make_log(tmp_path), 0.8)
        train_pairs = set(zip(ds.train.users, ds.train.items))
        test_pairs = set(zip(ds.test.users, ds.test.items))
        assert not (train_pairs & test_pairs)

    def test_too_few_records(self, tmp_path):
        with pytest.raises(SplitError):
            temporal_split(self.make_log(tmp_path, n=1), 0.8)

    def test_bad_fraction(self, tmp_path):
        with pytest.raises(ValidationError):
            temporal_split(self.make_log(tmp_path), 1.0)

    def test_tie_breaking_is_stable(self, tmp_path):
        # identical timestamps everywhere: order falls back to (user, item)
        lines = "".join(f"u{i}\tm{i}\t3\t42\n" for i in range(10))
        log = load_movielens(write(tmp_path, "u.data", lines))
        a = temporal_split(log, 0.8)
        b = temporal_split(log, 0.8)
        assert np.array_equal(a.train.users, b.train.users)
        assert np.array_equal(a.test.items, b.test.items)

    def test_untimestamped_seeded_split(self, tmp_path):
        path = write(tmp_path, "r.csv",
                     "".join(f"u{i},m{i},3\n" for i in range(10)))
        log = load_csv(path, {"user": 0, "item": 1, "rating": 2,
                              "header": False})
        a = temporal_split(log, 0.8, seed=7)
        b = temporal_split(log, 0.8, seed=7)
        c = temporal_split(log, 0.8, seed=8)
        assert np.array_equal(a.train.users, b.train.users)
        assert len(c.train) == len(a.train)


class TestPartitionPopularity:
    def test_strictly_above_threshold_is_popular(self):
        rows = [(u, 0, 3.0) for u in range(150)] + [(0, 1, 3.0)]
        ds = make_dataset(rows, [(0, 0, 3.0)])
        part = partition_popularity(ds, 100)
        assert 0 in part.popular
        assert 1 in part.non_popular

    def test_exactly_tau_is_non_popular(self):
        rows = [(u, 0, 3.0) for u in range(100)]
        ds = make_dataset(rows, [(0, 0, 3.0)])
        part = partition_popularity(ds, 100)
        assert 0 in part.non_popular

    def test_partition_covers_rated_items(self, small_universe):
        ds = small_universe.observed
        part = partition_popularity(ds, 5)
        # brute-force histogram oracle
        counts = {}
        for m in ds.train.items:
            counts[int(m)] = counts.get(int(m), 0) + 1
        rated = set(counts)
        assert part.popular | part.non_popular == rated
        assert not (part.popular & part.non_popular)
        for m, c in counts.items():
            assert (m in part.popular) == (c > 5)

    def test_test_only_items_are_unpartitioned(self):
        ds = make_dataset([(0, 0, 3.0), (1, 0, 4.0)], [(0, 1, 2.0)])
        part = partition_popularity(ds, 0)
        assert 1 not in part.popular | part.non_popular


class TestGenSyntheticMnar:
    def test_mcar_probs_uniform(self):
        u = gen_synthetic_mnar(seed=0, k=10, l=12, skew=0.0, density=0.3)
        assert np.allclose(u.observation_probs, u.observation_probs[0, 0])

    def test_same_seed_bit_identical(self):
        a = gen_synthetic_mnar(seed=5, k=20, l=30, skew=1.0)
        b = gen_synthetic_mnar(seed=5, k=20, l=30, skew=1.0)
        assert np.array_equal(a.true_matrix, b.true_matrix)
        assert np.array_equal(a.observation_probs, b.observation_probs)
        assert np.array_equal(a.observed.train.users, b.observed.train.users)
        assert np.array_equal(a.observed.test.ratings, b.observed.test.ratings)

    def test_observed_equals_true_entries(self, small_universe):
        ds = small_universe.observed
        for pairs in (ds.train, ds.test):
            assert np.array_equal(
                pairs.ratings,
                small_universe.true_matrix[pairs.users, pairs.items])

    def test_probs_positive_and_bounded(self, small_universe):
        p = small_universe.observation_probs
        assert (p > 0).all() and (p <= 1).all()

    def test_skewed_counts_non_increasing_in_rank(self):
        # Expected observed count per item must be non-increasing in
        # popularity rank, and Monte Carlo resampling must agree with it.
        u = gen_synthetic_mnar(seed=3, k=50, l=50, skew=2.0, density=0.2)
        expected = u.observation_probs.sum(axis=0)
        assert (np.diff(expected) <= 1e-9).all()
        assert expected[0] > 2 * expected[-1]
        totals = np.zeros(50)
        n_draws = 2000
        for s in range(n_draws):
            rng = np.random.default_rng(s)
            mask = rng.random((50, 50)) < u.observation_probs
            totals += mask.sum(axis=0)
        means = totals / n_draws
        # 6-sigma band around the binomial expectation, per item
        sd = np.sqrt((u.observation_probs *
                      (1 - u.observation_probs)).sum(axis=0) / n_draws)
        assert (np.abs(means - expected) <= 6 * sd + 1e-9).all()

    def test_resample_mask_matches_probs(self, small_universe):
        pairs = resample_mask(small_universe, seed=9)
        expected = small_universe.observation_probs.sum()
        assert abs(len(pairs) - expected) < 6 * math.sqrt(expected)

    def test_validation(self):
        with pytest.raises(ValidationError):
            gen_synthetic_mnar(seed=0, k=1, l=5, skew=0.0)
        with pytest.raises(ValidationError):
            gen_synthetic_mnar(seed=0, k=5, l=5, skew=-1.0)
