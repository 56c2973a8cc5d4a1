"""Rating-data ingestion, train/test splitting, and subsampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed input file or inconsistent rating data."""


class RatingTriple(NamedTuple):
    user_id: int
    item_id: int
    rating: float


@dataclass
class RatingDataset:
    """Sparse user-item ratings with a per-user index.

    Ids are dense and 0-based internally; ``user_ids`` / ``item_ids`` map
    internal indices back to the original external ids. Instances are
    read-only after construction and safe to share across threads.
    """

    n_users: int
    n_items: int
    triples: list[RatingTriple]
    per_user: dict[int, list[tuple[int, float]]]
    score_range: tuple[float, float] = (1.0, 5.0)
    user_ids: list[int] = field(default_factory=list)
    item_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triples)

    def user_items(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        """Item ids and ratings of one user, sorted by item id."""
        pairs = self.per_user.get(user, [])
        items = np.array([p[0] for p in pairs], dtype=np.int64)
        ratings = np.array([p[1] for p in pairs], dtype=np.float64)
        return items, ratings


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "random-holdout"  # or "leave-one-out"
    fraction: float = 0.2
    seed: int = 0


def _index_per_user(triples: list[RatingTriple]) -> dict[int, list[tuple[int, float]]]:
    per_user: dict[int, list[tuple[int, float]]] = {}
    for t in triples:
        per_user.setdefault(t.user_id, []).append((t.item_id, t.rating))
    for pairs in per_user.values():
        pairs.sort()
    return per_user


def build_dataset(
    triples: list[RatingTriple],
    n_users: int,
    n_items: int,
    score_range: tuple[float, float] = (1.0, 5.0),
    user_ids: list[int] | None = None,
    item_ids: list[int] | None = None,
) -> RatingDataset:
    """Assemble a dataset and enforce its invariants."""
    lo, hi = score_range
    seen: set[tuple[int, int]] = set()
    for t in triples:
        if not (0 <= t.user_id < n_users and 0 <= t.item_id < n_items):
            raise DataError(f"id out of range in triple {t}")
        if not (lo <= t.rating <= hi):
            raise DataError(f"rating {t.rating} outside declared range {score_range}")
        key = (t.user_id, t.item_id)
        if key in seen:
            raise DataError(f"duplicate (user, item) pair {key}")
        seen.add(key)
    return RatingDataset(
        n_users=n_users,
        n_items=n_items,
        triples=list(triples),
        per_user=_index_per_user(triples),
        score_range=score_range,
        user_ids=list(user_ids) if user_ids is not None else list(range(n_users)),
        item_ids=list(item_ids) if item_ids is not None else list(range(n_items)),
    )


def _detect_delimiter(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # fall back to any-whitespace splitting


def parse_ratings(
    text: str,
    delimiter: str | None = None,
    score_range: tuple[float, float] = (1.0, 5.0),
) -> RatingDataset:
    """Parse ``user item rating [timestamp]`` lines into a dataset.

    Tab- or comma-delimited files are auto-detected; extra trailing fields
    (timestamps) are ignored. External ids are reindexed to dense 0-based
    ids in order of first appearance, and the mapping is preserved.
    """
    triples: list[RatingTriple] = []
    user_map: dict[int, int] = {}
    item_map: dict[int, int] = {}
    seen: set[tuple[int, int]] = set()
    lo, hi = score_range

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if delimiter is None:
            delimiter = _detect_delimiter(line)
        fields = line.split(delimiter) if delimiter else line.split()
        if len(fields) < 3:
            raise DataError(f"line {lineno}: expected at least 3 fields, got {len(fields)}")
        try:
            ext_user = int(fields[0])
            ext_item = int(fields[1])
            rating = float(fields[2])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if ext_user < 0 or ext_item < 0:
            raise DataError(f"line {lineno}: negative id")
        if not (lo <= rating <= hi):
            raise DataError(f"line {lineno}: rating {rating} outside range {score_range}")
        if (ext_user, ext_item) in seen:
            raise DataError(f"line {lineno}: duplicate rating for (user={ext_user}, item={ext_item})")
        seen.add((ext_user, ext_item))
        u = user_map.setdefault(ext_user, len(user_map))
        i = item_map.setdefault(ext_item, len(item_map))
        triples.append(RatingTriple(u, i, rating))

    user_ids = [0] * len(user_map)
    for ext, internal in user_map.items():
        user_ids[internal] = ext
    item_ids = [0] * len(item_map)
    for ext, internal in item_map.items():
        item_ids[internal] = ext

    return RatingDataset(
        n_users=len(user_map),
        n_items=len(item_map),
        triples=triples,
        per_user=_index_per_user(triples),
        score_range=score_range,
        user_ids=user_ids,
        item_ids=item_ids,
    )


def format_ratings(dataset: RatingDataset, delimiter: str = "\t") -> str:
    """Serialize a dataset back to delimited text using external ids."""
    lines = []
    for t in dataset.triples:
        lines.append(
            f"{dataset.user_ids[t.user_id]}{delimiter}"
            f"{dataset.item_ids[t.item_id]}{delimiter}{t.rating:g}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def _subset(dataset: RatingDataset, triples: list[RatingTriple]) -> RatingDataset:
    """A dataset over the same user/item universe holding only ``triples``."""
    return RatingDataset(
        n_users=dataset.n_users,
        n_items=dataset.n_items,
        triples=triples,
        per_user=_index_per_user(triples),
        score_range=dataset.score_range,
        user_ids=list(dataset.user_ids),
        item_ids=list(dataset.item_ids),
    )


def split(dataset: RatingDataset, spec: SplitSpec) -> tuple[RatingDataset, RatingDataset]:
    """Partition into disjoint train/test datasets sharing the id universe.

    ``random-holdout`` moves round(fraction * n) triples to the test set.
    ``leave-one-out`` holds out exactly one triple per user with at least
    two ratings; single-rating users stay fully in train (with a warning).
    Deterministic for a fixed seed.
    """
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)

    if spec.mode == "random-holdout":
        if not (0.0 < spec.fraction < 1.0):
            raise DataError(f"fraction must be in (0,1), got {spec.fraction}")
        n_test = int(round(spec.fraction * len(dataset)))
        perm = rng.permutation(len(dataset))
        test_idx = set(perm[:n_test].tolist())
        train_triples = [t for k, t in enumerate(dataset.triples) if k not in test_idx]
        test_triples = [dataset.triples[k] for k in sorted(test_idx)]
    elif spec.mode == "leave-one-out":
        held_item: dict[int, int] = {}
        singletons = 0
        for user in range(dataset.n_users):
            pairs = dataset.per_user.get(user, [])
            if len(pairs) >= 2:
                held_item[user] = pairs[int(rng.integers(len(pairs)))][0]
            elif len(pairs) == 1:
                singletons += 1
        if singletons:
            logger.warning(
                "leave-one-out: %d user(s) with a single rating kept in train, excluded from test",
                singletons,
            )
        train_triples, test_triples = [], []
        for t in dataset.triples:
            if held_item.get(t.user_id) == t.item_id:
                test_triples.append(t)
            else:
                train_triples.append(t)
    else:
        raise DataError(f"unknown split mode {spec.mode!r}")

    return _subset(dataset, train_triples), _subset(dataset, test_triples)


def subsample(
    dataset: RatingDataset,
    n_users: int,
    n_items: int,
    min_ratings: int = 1,
    seed: int = 0,
) -> RatingDataset:
    """Desk-scale subsample: most-rated items, then qualifying users.

    Keeps the ``n_items`` items with the highest rating counts, then
    uniformly samples ``n_users`` users having at least ``min_ratings``
    ratings among the retained items. Returns a reindexed dense dataset
    whose external-id mappings still point at the original ids.
    """
    if n_users > dataset.n_users or n_items > dataset.n_items:
        raise DataError("subsample target exceeds dataset dimensions")

    counts = np.zeros(dataset.n_items, dtype=np.int64)
    for t in dataset.triples:
        counts[t.item_id] += 1
    # most-rated first; ties broken by lower internal id
    order = np.lexsort((np.arange(dataset.n_items), -counts))
    kept_items = set(order[:n_items].tolist())

    user_deg = np.zeros(dataset.n_users, dtype=np.int64)
    for t in dataset.triples:
        if t.item_id in kept_items:
            user_deg[t.user_id] += 1
    qualifying = np.flatnonzero(user_deg >= min_ratings)
    if len(qualifying) == 0:
        logger.warning("subsample: no users with >= %d ratings among retained items", min_ratings)
        kept_users: list[int] = []
    elif len(qualifying) < n_users:
        logger.warning(
            "subsample: only %d qualifying users (requested %d); keeping all",
            len(qualifying),
            n_users,
        )
        kept_users = qualifying.tolist()
    else:
        rng = np.random.default_rng(seed)
        kept_users = sorted(rng.choice(qualifying, size=n_users, replace=False).tolist())

    user_remap = {old: new for new, old in enumerate(kept_users)}
    item_remap = {old: new for new, old in enumerate(sorted(kept_items))}
    triples = [
        RatingTriple(user_remap[t.user_id], item_remap[t.item_id], t.rating)
        for t in dataset.triples
        if t.user_id in user_remap and t.item_id in item_remap
    ]
    return RatingDataset(
        n_users=len(kept_users),
        n_items=len(item_remap),
        triples=triples,
        per_user=_index_per_user(triples),
        score_range=dataset.score_range,
        user_ids=[dataset.user_ids[u] for u in kept_users],
        item_ids=[dataset.item_ids[i] for i in sorted(kept_items)],
    )


def synthetic_dataset(
    n_users: int,
    n_items: int,
    seed: int = 0,
    mean_ratings_per_user: float = 25.0,
    latent_dim: int = 3,
    score_range: tuple[float, float] = (1.0, 5.0),
    signal: float = 1.0,
) -> RatingDataset:
    """Low-rank synthetic ratings for demos and offline test runs.

    Users rate items with probability skewed by item popularity and by a
    hidden user-item affinity; rating values follow the same affinity plus
    observation noise, rounded into the score range. ``signal`` scales how
    much of a rating is affinity rather than noise. Every user gets at
    least two ratings so leave-one-out splits are always possible.
    """
    rng = np.random.default_rng(seed)
    lo, hi = score_range
    mid = 0.5 * (lo + hi)
    amp = signal * 0.45 * (hi - lo)

    u_lat = rng.normal(0.0, 1.0, size=(n_users, latent_dim)) / np.sqrt(latent_dim)
    v_lat = rng.normal(0.0, 1.0, size=(n_items, latent_dim))
    popularity = rng.normal(0.0, 1.0, size=n_items)

    triples: list[RatingTriple] = []
    for user in range(n_users):
        affinity = u_lat[user] @ v_lat.T
        h = int(np.clip(rng.poisson(mean_ratings_per_user), 2, n_items))
        logits = popularity + 0.8 * affinity
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        items = rng.choice(n_items, size=h, replace=False, p=probs)
        for item in np.sort(items):
            raw = mid + amp * affinity[item] + rng.normal(0.0, 0.35)
            rating = float(np.clip(np.round(raw), lo, hi))
            triples.append(RatingTriple(user, int(item), rating))

    return build_dataset(triples, n_users, n_items, score_range)
