"""Data ingestion, indexing, train/test splitting, popularity partitioning
and synthetic MNAR universe generation.

All containers are immutable after construction and safe for concurrent
reads. Everything randomized takes an explicit seed.
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import IngestionError, SchemaError, SplitError, ValidationError

RATING_MIN = 1.0
RATING_MAX = 5.0


class Interaction(NamedTuple):
    user_id: str
    item_id: str
    rating: float
    timestamp: Optional[int]


@dataclass(frozen=True)
class InteractionLog:
    """Deduplicated (user, item, rating, timestamp) records as ingested."""

    records: tuple[Interaction, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_users(self) -> int:
        return len({r.user_id for r in self.records})

    @property
    def n_items(self) -> int:
        return len({r.item_id for r in self.records})


class RatedPairs(NamedTuple):
    """Column-oriented (user index, item index, rating) triples."""

    users: np.ndarray   # int64
    items: np.ndarray   # int64
    ratings: np.ndarray  # float64

    def __len__(self) -> int:
        return len(self.users)

    @staticmethod
    def from_rows(rows: Sequence[tuple[int, int, float]]) -> "RatedPairs":
        if not rows:
            return RatedPairs(np.empty(0, np.int64), np.empty(0, np.int64),
                              np.empty(0, np.float64))
        u, m, r = zip(*rows)
        return RatedPairs(np.asarray(u, np.int64), np.asarray(m, np.int64),
                          np.asarray(r, np.float64))


@dataclass(frozen=True)
class Dataset:
    """Indexed sparse ratings with a train/test split.

    The observation mask is implicit: a (u, m) cell is observed iff it
    appears in train or test. Train and test never share a (u, m) pair.
    """

    n_users: int
    n_items: int
    train: RatedPairs
    test: RatedPairs
    user_ids: tuple[str, ...] = field(default=(), repr=False)
    item_ids: tuple[str, ...] = field(default=(), repr=False)

    def train_item_counts(self) -> np.ndarray:
        return np.bincount(self.train.items, minlength=self.n_items)


@dataclass(frozen=True)
class PopularityPartition:
    """Popular / non-popular item split under a count threshold.

    An item is popular iff its training rating count strictly exceeds tau.
    Items with no training rating belong to neither set.
    """

    tau: int
    popular: frozenset[int]
    non_popular: frozenset[int]

    def group_codes(self, n_items: int) -> np.ndarray:
        """Per-item int8 codes: +1 popular, -1 non-popular, 0 unpartitioned."""
        codes = np.zeros(n_items, np.int8)
        if self.popular:
            codes[np.fromiter(self.popular, np.int64)] = 1
        if self.non_popular:
            codes[np.fromiter(self.non_popular, np.int64)] = -1
        return codes

    def swapped(self) -> "PopularityPartition":
        return PopularityPartition(self.tau, self.non_popular, self.popular)


@dataclass(frozen=True)
class SyntheticUniverse:
    """Fully known rating universe with per-cell observation probabilities."""

    true_matrix: np.ndarray        # (k, l) in [1, 5]
    observation_probs: np.ndarray  # (k, l) in (0, 1]
    observed: Dataset
    seed: int


def _open_maybe_gzip(path):
    try:
        with open(path, "rb") as probe:
            magic = probe.read(2)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _check_rating(value: float, where: str) -> float:
    if not (RATING_MIN <= value <= RATING_MAX):
        raise ValidationError(f"{where}: rating {value} outside [1, 5]")
    return float(value)


def _dedup_last_wins(records: list[Interaction]) -> tuple[Interaction, ...]:
    # Last write wins; a later timestamp always beats an earlier one.
    best: dict[tuple[str, str], Interaction] = {}
    for rec in records:
        key = (rec.user_id, rec.item_id)
        prev = best.get(key)
        if prev is not None and prev.timestamp is not None and rec.timestamp is not None \
                and rec.timestamp < prev.timestamp:
            continue
        best[key] = rec
    return tuple(best.values())


def load_movielens(path) -> InteractionLog:
    """Load a MovieLens ``u.data``-style file (tab-separated, 4 columns).

    Accepts plain or gzip files. Duplicate (user, item) pairs keep the
    record with the latest timestamp.
    """
    records: list[Interaction] = []
    with _open_maybe_gzip(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise IngestionError(
                    f"{path}: line {lineno}: expected 4 tab-separated fields, "
                    f"got {len(parts)}")
            try:
                rating = float(parts[2])
                ts = int(parts[3])
            except ValueError as exc:
                raise IngestionError(f"{path}: line {lineno}: {exc}") from exc
            records.append(Interaction(parts[0], parts[1],
                                       _check_rating(rating, f"line {lineno}"), ts))
    return InteractionLog(_dedup_last_wins(records))


def load_csv(path, schema: dict) -> InteractionLog:
    """Load a generic delimited ratings file.

    ``schema`` maps the keys ``user``, ``item``, ``rating`` and optionally
    ``timestamp`` to either column names (resolved against a header row)
    or integer column indices. Extra keys: ``delimiter`` (default ","),
    ``header`` (default True when any mapping value is a string).
    """
    for key in ("user", "item", "rating"):
        if key not in schema:
            raise SchemaError(f"schema missing required column mapping '{key}'")
    delimiter = schema.get("delimiter", ",")
    names_used = any(isinstance(schema[k], str)
                     for k in ("user", "item", "rating", "timestamp") if k in schema)
    has_header = schema.get("header", names_used)

    records: list[Interaction] = []
    with _open_maybe_gzip(path) as fh:
        import csv as _csv
        reader = _csv.reader(fh, delimiter=delimiter)
        col: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if lineno == 1 and has_header:
                header = {name: i for i, name in enumerate(row)}
                for key in ("user", "item", "rating", "timestamp"):
                    if key not in schema:
                        continue
                    spec = schema[key]
                    if isinstance(spec, str):
                        if spec not in header:
                            raise SchemaError(
                                f"{path}: column '{spec}' not in header {row}")
                        col[key] = header[spec]
                    else:
                        col[key] = int(spec)
                continue
            if not col:
                col = {k: int(schema[k]) for k in ("user", "item", "rating", "timestamp")
                       if k in schema}
            try:
                user = row[col["user"]]
                item = row[col["item"]]
                rating = float(row[col["rating"]])
                ts = int(row[col["timestamp"]]) if "timestamp" in col else None
            except (IndexError, ValueError) as exc:
                raise IngestionError(f"{path}: line {lineno}: {exc}") from exc
            records.append(Interaction(user, item,
                                       _check_rating(rating, f"line {lineno}"), ts))
    return InteractionLog(_dedup_last_wins(records))


def temporal_split(log: InteractionLog, train_fraction: float,
                   seed: int = 0) -> Dataset:
    """Split a log into a Dataset: earliest ``ceil(fraction * N)`` records
    train, the rest test.

    Records are ordered by timestamp ascending, ties broken by
    (user_id, item_id). If any record lacks a timestamp the split falls
    back to a seeded uniform random order.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValidationError(f"train_fraction {train_fraction} not in (0, 1)")
    n = len(log.records)
    if n < 2:
        raise SplitError(f"need at least 2 records to split, got {n}")

    if all(r.timestamp is not None for r in log.records):
        ordered = sorted(log.records,
                         key=lambda r: (r.timestamp, r.user_id, r.item_id))
    else:
        rng = np.random.default_rng(seed)
        ordered = sorted(log.records, key=lambda r: (r.user_id, r.item_id))
        ordered = [ordered[i] for i in rng.permutation(n)]

    n_train = math.ceil(train_fraction * n)

    user_ids = tuple(sorted({r.user_id for r in log.records}))
    item_ids = tuple(sorted({r.item_id for r in log.records}))
    uidx = {u: i for i, u in enumerate(user_ids)}
    midx = {m: i for i, m in enumerate(item_ids)}

    def as_pairs(records):
        return RatedPairs.from_rows(
            [(uidx[r.user_id], midx[r.item_id], r.rating) for r in records])

    return Dataset(n_users=len(user_ids), n_items=len(item_ids),
                   train=as_pairs(ordered[:n_train]),
                   test=as_pairs(ordered[n_train:]),
                   user_ids=user_ids, item_ids=item_ids)


def partition_popularity(dataset: Dataset, tau: int) -> PopularityPartition:
    """Label every item with >= 1 training rating popular (count > tau) or
    non-popular (count <= tau). Counts use the training split only."""
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    counts = dataset.train_item_counts()
    return partition_from_counts(counts, tau)


def partition_from_counts(counts: np.ndarray, tau: int) -> PopularityPartition:
    rated = np.nonzero(counts > 0)[0]
    popular = frozenset(int(m) for m in rated if counts[m] > tau)
    non_popular = frozenset(int(m) for m in rated) - popular
    return PopularityPartition(int(tau), popular, frozenset(non_popular))


def gen_synthetic_mnar(seed: int, k: int, l: int, skew: float,
                       density: float = 0.05,
                       train_fraction: float = 0.8,
                       latent_rank: int = 4,
                       noise: float = 0.5) -> SyntheticUniverse:
    """Generate a fully known rating universe observed under an MNAR mask.

    The true matrix is a seeded low-rank-plus-noise draw squashed into
    [1, 5]. Observation probabilities depend on the item only and are
    proportional to (popularity rank)^(-skew), rescaled so the mean cell
    probability is ``density`` and clipped into (0, 1]. skew=0 gives a
    uniform (MCAR) mask. Identical arguments reproduce the universe
    bit-for-bit.
    """
    if k < 2 or l < 2:
        raise ValidationError(f"need k, l >= 2, got {k}x{l}")
    if skew < 0:
        raise ValidationError(f"skew must be >= 0, got {skew}")
    rng = np.random.default_rng(seed)

    uf = rng.normal(0.0, 1.0, (k, latent_rank))
    vf = rng.normal(0.0, 1.0, (l, latent_rank))
    raw = uf @ vf.T / math.sqrt(latent_rank) + rng.normal(0.0, noise, (k, l))
    true_matrix = np.clip(3.0 + 1.2 * raw, RATING_MIN, RATING_MAX)

    ranks = np.arange(1, l + 1, dtype=np.float64)
    item_probs = ranks ** (-skew)
    item_probs *= density * l / item_probs.sum()
    item_probs = np.clip(item_probs, np.nextafter(0.0, 1.0), 1.0)
    observation_probs = np.broadcast_to(item_probs, (k, l)).copy()

    mask = rng.random((k, l)) < observation_probs
    obs_u, obs_m = np.nonzero(mask)
    order = rng.permutation(len(obs_u))
    obs_u, obs_m = obs_u[order], obs_m[order]
    n_train = math.ceil(train_fraction * len(obs_u))

    def pairs(sl):
        return RatedPairs(obs_u[sl].astype(np.int64), obs_m[sl].astype(np.int64),
                          true_matrix[obs_u[sl], obs_m[sl]].astype(np.float64))

    observed = Dataset(n_users=k, n_items=l,
                       train=pairs(slice(None, n_train)),
                       test=pairs(slice(n_train, None)),
                       user_ids=tuple(str(i) for i in range(k)),
                       item_ids=tuple(str(j) for j in range(l)))
    return SyntheticUniverse(true_matrix=true_matrix,
                             observation_probs=observation_probs,
                             observed=observed, seed=seed)


def resample_mask(universe: SyntheticUniverse, seed: int) -> RatedPairs:
    """Draw a fresh observed set from the universe's observation probabilities."""
    rng = np.random.default_rng(seed)
    k, l = universe.true_matrix.shape
    mask = rng.random((k, l)) < universe.observation_probs
    u, m = np.nonzero(mask)
    return RatedPairs(u.astype(np.int64), m.astype(np.int64),
                      universe.true_matrix[u, m].astype(np.float64))
