"""Evaluation metrics and the input-perturbation baseline."""

from __future__ import annotations

import numpy as np

from .data import RatingDataset, RatingTriple, _index_per_user
from .sgld import FactorModel


def rmse(test: RatingDataset, model: FactorModel) -> float:
    """Root-mean-square prediction error over the test triples."""
    if len(test) == 0:
        raise ValueError("empty test set")
    users = np.array([t.user_id for t in test.triples])
    items = np.array([t.item_id for t in test.triples])
    ratings = np.array([t.rating for t in test.triples])
    preds = np.einsum("ij,ij->i", model.u[users], model.v[items])
    return float(np.sqrt(np.mean((ratings - preds) ** 2)))


def auc(test: RatingDataset, train: RatingDataset, model: FactorModel) -> float:
    """Leave-one-out ranking quality.

    For each test user the held-out rated item competes against every item
    the user rated in neither train nor test; the score is the fraction
    ranked strictly below the positive, ties counting one half. Users with
    no candidate negatives are skipped.
    """
    per_user_auc = []
    for user in range(test.n_users):
        pairs = test.per_user.get(user)
        if not pairs:
            continue
        known = {item for item, _ in train.per_user.get(user, [])}
        scores = model.v @ model.u[user]
        for pos_item, _ in pairs:
            mask = np.ones(test.n_items, dtype=bool)
            mask[list(known)] = False
            mask[pos_item] = False
            neg_scores = scores[mask]
            if neg_scores.size == 0:
                continue
            pos_score = scores[pos_item]
            wins = np.sum(neg_scores < pos_score) + 0.5 * np.sum(neg_scores == pos_score)
            per_user_auc.append(wins / neg_scores.size)
    if not per_user_auc:
        raise ValueError("no test user had candidate negatives")
    return float(np.mean(per_user_auc))


def isgld_perturb(
    train: RatingDataset,
    eps: float,
    rng: np.random.Generator,
    clamp: bool = True,
) -> RatingDataset:
    """Value-privacy baseline: Laplace noise added to every rating.

    The noise scale is (score range width) / eps; perturbed values are
    clamped back into the declared range. Which (user, item) pairs exist
    is untouched. ``clamp=False`` exposes the raw perturbed values for
    distribution checks.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    lo, hi = train.score_range
    scale = (hi - lo) / eps
    noise = rng.laplace(0.0, scale, size=len(train))
    triples = []
    for t, n in zip(train.triples, noise):
        value = t.rating + n
        if clamp:
            value = min(max(value, lo), hi)
        triples.append(RatingTriple(t.user_id, t.item_id, float(value)))
    return RatingDataset(
        n_users=train.n_users,
        n_items=train.n_items,
        triples=triples,
        per_user=_index_per_user(triples),
        score_range=train.score_range if clamp else (-np.inf, np.inf),
        user_ids=list(train.user_ids),
        item_ids=list(train.item_ids),
    )
