"""Matrix-factorization core: predictions, Langevin-noise gradient steps,
and the centralized trainer used as the reference for the distributed path.

All steps are additive deltas: ``delta = eta_t * (e * other - lambda * self)``
plus N(0, eta_t I) noise when enabled, applied as ``x <- x + delta``. With
noise off this strictly descends the squared-error objective
``0.5 * e^2 + 0.5 * x' diag(lambda) x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import TAG_CENTRAL_TRAIN, TAG_MODEL_INIT, TAG_REGULARIZERS, derive_rng


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """Shared model hyperparameters.

    ``lambda_u`` / ``lambda_v`` are the diagonals of the per-coordinate
    regularization matrices (length ``k``, strictly positive). The learning
    rate decays as ``eta0 / t**gamma``.
    """

    k: int
    eta0: float
    gamma: float
    lambda_u: np.ndarray
    lambda_v: np.ndarray
    seed: int
    noise_enabled: bool = True
    # initial predictions concentrate near this score instead of 0, so
    # uncentered ratings do not spend most of a run learning their mean
    init_prediction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lambda_u", np.asarray(self.lambda_u, dtype=np.float64))
        object.__setattr__(self, "lambda_v", np.asarray(self.lambda_v, dtype=np.float64))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        for name, lam in (("lambda_u", self.lambda_u), ("lambda_v", self.lambda_v)):
            if lam.shape != (self.k,):
                raise ValueError(f"{name} must have shape ({self.k},), got {lam.shape}")
            if not np.all(lam > 0):
                raise ValueError(f"{name} entries must be positive")

    @classmethod
    def with_gamma_priors(
        cls,
        k: int,
        eta0: float,
        gamma: float,
        seed: int,
        noise_enabled: bool = True,
        prior_shape: float = 1.0,
        prior_rate: float = 100.0,
        init_prediction: float = 0.0,
    ) -> "Hyperparams":
        """Draw the regularizer diagonals once from Gamma(shape, rate)."""
        rng = derive_rng(seed, TAG_REGULARIZERS)
        lambda_u = rng.gamma(prior_shape, 1.0 / prior_rate, size=k)
        lambda_v = rng.gamma(prior_shape, 1.0 / prior_rate, size=k)
        return cls(k, eta0, gamma, lambda_u, lambda_v, seed, noise_enabled, init_prediction)


@dataclass
class FactorModel:
    """User factor matrix (n_users x k) and item factor matrix (n_items x k)."""

    u: np.ndarray
    v: np.ndarray

    @property
    def k(self) -> int:
        return self.u.shape[1]


def init_model(n_users: int, n_items: int, hp: Hyperparams) -> FactorModel:
    """Initialize factors with i.i.d. normal entries (std 0.1/sqrt(k)).

    With ``init_prediction = P > 0`` every entry is centered at sqrt(P/k),
    so initial dot products concentrate near P; the default keeps them
    near 0.
    """
    rng = derive_rng(hp.seed, TAG_MODEL_INIT)
    loc = np.sqrt(hp.init_prediction / hp.k) if hp.init_prediction > 0 else 0.0
    scale = 0.1 / np.sqrt(hp.k)
    u = rng.normal(loc, scale, size=(n_users, hp.k))
    v = rng.normal(loc, scale, size=(n_items, hp.k))
    return FactorModel(u, v)


def learning_rate(t: int, hp: Hyperparams) -> float:
    """Decayed step size eta0 / t**gamma for round t >= 1."""
    if t < 1:
        raise ValueError(f"iteration must be >= 1, got {t}")
    return hp.eta0 / float(t) ** hp.gamma


def predict(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def rating_error(r: float, u: np.ndarray, v: np.ndarray) -> float:
    return r - predict(u, v)


def prediction_errors(
    u: np.ndarray, v_matrix: np.ndarray, items: np.ndarray, ratings: np.ndarray
) -> np.ndarray:
    """Per-item prediction errors r - u.v for one user's rated items.

    Shared by the centralized trainer and the protocol clients so both
    paths produce bitwise-identical error sequences.
    """
    out = np.empty(len(items), dtype=np.float64)
    for pos in range(len(items)):
        out[pos] = ratings[pos] - np.dot(u, v_matrix[items[pos]])
    return out


def user_step(
    u: np.ndarray,
    e: float,
    v: np.ndarray,
    eta_t: float,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Additive delta for a user factor from one rated item."""
    delta = eta_t * (e * v - hp.lambda_u * u)
    if hp.noise_enabled:
        delta += np.sqrt(eta_t) * rng.standard_normal(hp.k)
    return delta


def item_step(
    v: np.ndarray,
    e: float,
    u: np.ndarray,
    eta_t: float,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Additive delta for an item factor from one (real or fake) error."""
    delta = eta_t * (e * u - hp.lambda_v * v)
    if hp.noise_enabled:
        delta += np.sqrt(eta_t) * rng.standard_normal(hp.k)
    return delta


def reduce_item_deltas(
    deltas: list[tuple[int, np.ndarray]], n_items: int, k: int
) -> tuple[np.ndarray, int]:
    """Order-independent reduction of a round's (item, delta) pairs.

    Pairs are summed in a canonical order (item id, then delta bytes), so
    any permutation of the same multiset reduces to bitwise-identical sums.
    """
    acc = np.zeros((n_items, k), dtype=np.float64)
    for item, delta in sorted(deltas, key=lambda p: (p[0], p[1].tobytes())):
        acc[item] += delta
    return acc, len(deltas)


def centralized_train(train, hp: Hyperparams, n_rounds: int) -> FactorModel:
    """Train with all data in one place, mirroring the round semantics of
    the distributed protocol: user deltas are averaged per user and applied
    once per round; item deltas are averaged by the global delta count and
    applied once per round. With privacy disabled the distributed run
    reproduces this function's output exactly.
    """
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    model = init_model(train.n_users, train.n_items, hp)
    rng = derive_rng(hp.seed, TAG_CENTRAL_TRAIN)
    user_data = [train.user_items(i) for i in range(train.n_users)]

    for t in range(1, n_rounds + 1):
        eta = learning_rate(t, hp)
        round_deltas: list[tuple[int, np.ndarray]] = []
        for i in range(train.n_users):
            items, ratings = user_data[i]
            h = len(items)
            if h == 0:
                continue
            u = model.u[i]
            errs = prediction_errors(u, model.v, items, ratings)
            du = np.zeros(hp.k, dtype=np.float64)
            for pos in range(h):
                du += user_step(u, errs[pos], model.v[items[pos]], eta, hp, rng)
            for pos in range(h):
                round_deltas.append(
                    (int(items[pos]), item_step(model.v[items[pos]], errs[pos], u, eta, hp, rng))
                )
            # user factors move only after this round's item deltas are computed
            model.u[i] = u + du / h
        acc, count = reduce_item_deltas(round_deltas, train.n_items, hp.k)
        if count:
            model.v += acc / count
    return model
