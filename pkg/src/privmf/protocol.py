"""Client and server state machines for the distributed training rounds.

Each round the server broadcasts the item factors, every client locally
updates its user factor from its own ratings, draws a randomized send-set,
and transmits one gradient message per selected item (real gradients for
rated items, fake-error gradients for unrated ones) followed by a finish
marker. The server only ever sees gradient/finish frames: ratings, rated-
item bit vectors, and user factors never leave the client.

The server applies ``V <- V + (sum of deltas per item) / (total message
count)`` once all clients have finished, so the reduction is a commutative
monoid and message arrival order cannot change the result.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import fakegrad, randresp
from .codec import FinishMessage, GradientMessage, Handshake, Message, encode_message, iter_messages
from .data import RatingDataset
from .rng import TAG_CLIENT_INIT, TAG_CLIENT_ROUND, derive_rng
from .sgld import (
    FactorModel,
    Hyperparams,
    init_model,
    item_step,
    learning_rate,
    prediction_errors,
    reduce_item_deltas,
    user_step,
)

logger = logging.getLogger(__name__)

ALPHA_DELTA = 1e-6  # band width for the truncation-bound search


class ProtocolError(RuntimeError):
    pass


# Randomized-response parameters for a run with privacy disabled: the send
# set equals the true rated set and nothing is perturbed.
def _disabled_rr(h: int) -> randresp.RRParams:
    return randresp.RRParams(f=0.0, p=0.0, q=1.0, p_star=0.0, q_star=1.0, h=h, z=float(h))


@dataclass
class ClientState:
    client_id: int
    u: np.ndarray
    items: np.ndarray  # rated item ids, ascending
    ratings: np.ndarray
    bits: np.ndarray  # 1 exactly at rated items
    bits_prime: np.ndarray  # fixed after init
    rr: randresp.RRParams
    budget: randresp.PrivacyBudget | None
    hp: Hyperparams
    master_seed: int
    unrated: np.ndarray = field(default=None, repr=False)

    @property
    def h(self) -> int:
        return len(self.items)


@dataclass
class ServerState:
    v: np.ndarray
    n_items: int
    k: int
    t: int = 1
    accumulator: np.ndarray | None = None
    count: int = 0
    # off by default: divide each item's delta sum by that item's own
    # message count instead of the round's global count
    per_item_average: bool = False
    item_counts: np.ndarray | None = None


def client_init(
    client_id: int,
    items: np.ndarray,
    ratings: np.ndarray,
    u0: np.ndarray,
    n_items: int,
    hp: Hyperparams,
    budget: randresp.PrivacyBudget | None,
    z_target: float | None,
    master_seed: int,
) -> ClientState:
    """One-time client setup: solve the response probabilities and fix the
    permanently perturbed bit vector. Deterministic per (master seed, id)."""
    h = len(items)
    if h < 1:
        raise ValueError(f"client {client_id} has no ratings and cannot participate")
    bits = np.zeros(n_items, dtype=np.uint8)
    bits[items] = 1

    if budget is None:
        rr = _disabled_rr(h)
        bits_prime = bits.copy()
    else:
        if z_target is None:
            raise ValueError("z_target is required when privacy is enabled")
        try:
            rr = randresp.calibrate(
                budget.eps_i, h, n_items, z_target, eps_p=budget.resolved_eps_p()
            )
        except randresp.CalibrationError as exc:
            raise randresp.CalibrationError(f"client {client_id}: {exc}") from exc
        rng0 = derive_rng(master_seed, TAG_CLIENT_INIT, client_id)
        bits_prime = randresp.prr(bits, rr.f, rng0)

    return ClientState(
        client_id=client_id,
        u=np.array(u0, dtype=np.float64),
        items=np.asarray(items, dtype=np.int64),
        ratings=np.asarray(ratings, dtype=np.float64),
        bits=bits,
        bits_prime=bits_prime,
        rr=rr,
        budget=budget,
        hp=hp,
        master_seed=master_seed,
        unrated=np.flatnonzero(bits == 0).astype(np.int64),
    )


def client_iteration(
    state: ClientState, v_snapshot: np.ndarray, t: int
) -> list[Message]:
    """One client round: local user update, send-set draw, gradient messages.

    Messages are emitted in ascending item-id order with the finish marker
    last; the user factor is updated in place after emission, from the
    per-rated-item deltas averaged over the number of ratings.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    hp = state.hp
    eta = learning_rate(t, hp)
    rng = derive_rng(state.master_seed, TAG_CLIENT_ROUND, state.client_id, t)

    errs = prediction_errors(state.u, v_snapshot, state.items, state.ratings)
    du = np.zeros(hp.k, dtype=np.float64)
    for pos in range(state.h):
        du += user_step(state.u, errs[pos], v_snapshot[state.items[pos]], eta, hp, rng)

    stats = fakegrad.error_stats(errs)
    alpha = np.inf
    if state.budget is not None and state.budget.eps_g is not None:
        sigma = stats.sigma
        if sigma <= 0.0:
            logger.warning(
                "client %d: degenerate error spread, substituting sigma=%g",
                state.client_id,
                fakegrad.SIGMA_FLOOR,
            )
            sigma = fakegrad.SIGMA_FLOOR
        alpha = fakegrad.solve_alpha(state.budget.eps_g, stats.mu, sigma, ALPHA_DELTA).alpha
    sample_sigma = stats.sigma if stats.sigma > 0.0 else fakegrad.SIGMA_FLOOR

    send = randresp.irr(state.bits_prime, state.rr.p, state.rr.q, rng)

    pos_of = np.full(len(v_snapshot), -1, dtype=np.int64)
    pos_of[state.items] = np.arange(state.h)

    selected = np.flatnonzero(send)
    n_fake = int(np.sum(state.bits[selected] == 0))
    fakes: np.ndarray | None = None
    if n_fake:
        try:
            # one batched rejection run for the round; same truncated
            # distribution as drawing each item's error separately
            fakes = fakegrad.sample_fake_errors(stats.mu, sample_sigma, alpha, n_fake, rng)
        except fakegrad.DegenerateBoundError:
            fakes = None  # fall back to per-item draws below, skipping failures

    messages: list[Message] = []
    fake_pos = 0
    for j in selected:
        j = int(j)
        if state.bits[j]:
            e = errs[pos_of[j]]
        elif fakes is not None:
            e = fakes[fake_pos]
            fake_pos += 1
        else:
            try:
                e = fakegrad.sample_fake_error(stats.mu, sample_sigma, alpha, rng)
            except fakegrad.DegenerateBoundError as exc:
                logger.warning("client %d skipping item %d: %s", state.client_id, j, exc)
                continue
        delta = item_step(v_snapshot[j], e, state.u, eta, hp, rng)
        messages.append(GradientMessage(j, delta))
    messages.append(FinishMessage(state.client_id))

    state.u += du / state.h
    return messages


class MemoryTransport:
    """In-process queue of decoded messages, delivered in emission order."""

    def __init__(self):
        self._queue: deque[Message] = deque()

    def send(self, msg: Message) -> None:
        self._queue.append(msg)

    def drain(self):
        while self._queue:
            yield self._queue.popleft()


class ByteTransport:
    """Loopback byte-stream transport: every message crosses the wire
    format, so a full run exercises the codec end to end."""

    def __init__(self, k: int, n_items: int):
        self.k = k
        self.n_items = n_items
        self._buf = bytearray(encode_message(Handshake(k, n_items)))

    def send(self, msg: Message) -> None:
        self._buf += encode_message(msg)

    def drain(self):
        data = bytes(self._buf)
        self._buf = bytearray()
        for msg in iter_messages(data, expect_k=self.k):
            if isinstance(msg, Handshake):
                if (msg.k, msg.n_items) != (self.k, self.n_items):
                    raise ProtocolError(f"handshake mismatch: {msg} vs session ({self.k}, {self.n_items})")
                continue
            yield msg


def server_begin_round(server: ServerState) -> np.ndarray:
    """Broadcast snapshot of the item factors; accumulator reset to zero."""
    server.accumulator = np.zeros_like(server.v)
    server.count = 0
    snapshot = server.v.copy()
    snapshot.setflags(write=False)
    return snapshot


def server_collect(server: ServerState, messages, n_clients: int) -> int:
    """Consume one round's message stream until every client finished.

    Returns the number of gradient messages received. Raises ProtocolError
    if the stream ends with finish markers outstanding (aborted round).
    """
    finished: set[int] = set()
    round_deltas: list[tuple[int, np.ndarray]] = []
    for msg in messages:
        if isinstance(msg, GradientMessage):
            if not (0 <= msg.item_id < server.n_items):
                raise ProtocolError(f"gradient for unknown item {msg.item_id}")
            round_deltas.append((msg.item_id, np.asarray(msg.delta, dtype=np.float64)))
        elif isinstance(msg, FinishMessage):
            finished.add(msg.client_id)
            if len(finished) == n_clients:
                break
        else:
            raise ProtocolError(f"unexpected frame {type(msg).__name__} in round")
    if len(finished) != n_clients:
        raise ProtocolError(
            f"round aborted: finish received from {len(finished)}/{n_clients} clients"
        )
    acc, count = reduce_item_deltas(round_deltas, server.n_items, server.k)
    server.accumulator = acc
    server.count = count
    counts = np.zeros(server.n_items, dtype=np.int64)
    for item, _ in round_deltas:
        counts[item] += 1
    server.item_counts = counts
    return count


def server_end_round(server: ServerState) -> None:
    """Apply the averaged item deltas; a round with no messages is a no-op."""
    if server.count > 0:
        if server.per_item_average:
            divisor = np.maximum(server.item_counts, 1)[:, None]
            server.v += server.accumulator / divisor
        else:
            server.v += server.accumulator / server.count
    server.accumulator = None
    server.item_counts = None
    server.t += 1


def server_round(server: ServerState, clients, transport, step_fn=None) -> int:
    """Run one synchronous round over all clients; returns messages received."""
    step = step_fn or client_iteration
    snapshot = server_begin_round(server)
    for client in clients:
        for msg in step(client, snapshot, server.t):
            transport.send(msg)
    n_grad = server_collect(server, transport.drain(), n_clients=len(clients))
    server_end_round(server)
    return n_grad


@dataclass
class RoundRecord:
    t: int
    metric: float | None
    messages: int
    seconds: float


@dataclass
class TrainingResult:
    model: FactorModel
    curve: list[RoundRecord]

    def final_metric(self) -> float | None:
        return self.curve[-1].metric if self.curve else None


def run_training(
    train: RatingDataset,
    hp: Hyperparams,
    n_rounds: int,
    budget: randresp.PrivacyBudget | None = None,
    z_target: float | None = None,
    task: str = "numerical",
    transport: str = "memory",
    evaluator=None,
    master_seed: int | None = None,
    per_item_average: bool = False,
) -> TrainingResult:
    """Drive a full simulated training session.

    ``budget=None`` disables all privacy machinery (send-set = rated set,
    no perturbation, unbounded fake errors), which reproduces the
    centralized trainer bit for bit when SGLD noise is also off.
    ``evaluator`` is called with the assembled FactorModel after each round.
    """
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    if task not in ("numerical", "one-class"):
        raise ValueError(f"unknown task {task!r}")
    master = hp.seed if master_seed is None else master_seed

    if budget is not None and z_target is None:
        z_target = len(train) / train.n_users

    model0 = init_model(train.n_users, train.n_items, hp)
    clients: list[ClientState] = []
    excluded = 0
    for i in range(train.n_users):
        items, ratings = train.user_items(i)
        if len(items) == 0:
            excluded += 1
            continue
        clients.append(
            client_init(i, items, ratings, model0.u[i], train.n_items, hp, budget, z_target, master)
        )
    if excluded:
        logger.warning("excluded %d client(s) with no ratings", excluded)
    if not clients:
        raise ProtocolError("no clients with ratings")

    if task == "one-class":
        from .bpr import sd_bpr_client_iteration as step_fn
    else:
        step_fn = client_iteration

    server = ServerState(
        v=model0.v.copy(), n_items=train.n_items, k=hp.k, per_item_average=per_item_average
    )
    channel = ByteTransport(hp.k, train.n_items) if transport == "bytes" else MemoryTransport()

    curve: list[RoundRecord] = []
    for _ in range(n_rounds):
        started = time.perf_counter()
        t = server.t
        n_grad = server_round(server, clients, channel, step_fn)
        metric = None
        if evaluator is not None:
            metric = float(evaluator(assemble_model(model0, clients, server)))
        curve.append(RoundRecord(t, metric, n_grad, time.perf_counter() - started))

    return TrainingResult(assemble_model(model0, clients, server), curve)


def assemble_model(model0: FactorModel, clients: list[ClientState], server: ServerState) -> FactorModel:
    """Combine client-held user rows with the server's item factors."""
    u = model0.u.copy()
    for c in clients:
        u[c.client_id] = c.u
    return FactorModel(u, server.v.copy())
