"""Federated Averaging engine with fault-aware rounds, plus centralized/local baselines."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datagen import Dataset, Shard
from .faults import FaultPlan, RoundPlan
from .metrics import Evaluation, RoundRecord, RunHistory, evaluate_probabilities
from .model import (
    LOG_FLOOR,
    Hyperparams,
    ModelArch,
    ParamVector,
    class_weights_from_labels,
    forward,
    init_params,
    raw_loss_and_grad,
)
from .rng import substream

log = logging.getLogger(__name__)


class NonFiniteWeights(FloatingPointError):
    """Local training produced NaN/Inf weights at a known epoch and batch."""

    def __init__(self, client_id: int, epoch: int, batch: int, params: ParamVector):
        super().__init__(f"client {client_id}: non-finite weights at epoch {epoch}, batch {batch}")
        self.client_id = client_id
        self.epoch = epoch
        self.batch = batch
        self.params = params


@dataclass
class ClientState:
    client_id: int
    local_params: ParamVector
    shard: Shard
    hyperparams: Hyperparams
    rng: np.random.Generator
    class_weights: np.ndarray | None = None


@dataclass
class FederationState:
    global_params: ParamVector
    clients: list[ClientState]
    arch: ModelArch
    round: int = 0
    # None: renormalise over received updates; otherwise divide by this total
    strict_total: int | None = None


@dataclass
class RoundOutcome:
    round: int
    participated: np.ndarray
    downloaded: np.ndarray
    uploaded: np.ndarray
    warnings: list[str] = field(default_factory=list)
    nonfinite_events: list[str] = field(default_factory=list)


def bitstring(flags: np.ndarray) -> str:
    return "".join("1" if f else "0" for f in flags)


def client_update(
    state: ClientState, start_params: ParamVector, hyperparams: Hyperparams | None = None
) -> ParamVector:
    """Run ``E`` epochs of minibatch SGD on the client's shard.

    Each epoch reshuffles with the client's own generator; the last batch of an
    epoch may be short.
    """
    hp = hyperparams or state.hyperparams
    data = state.shard.data
    if len(data) == 0:
        raise ValueError(f"client {state.client_id} has an empty shard")
    x, y = data.features, data.labels
    if y.max() >= start_params.arch.num_classes:
        raise ValueError(f"client {state.client_id}: label out of range")
    omega = None if state.class_weights is None else state.class_weights[y]
    n = y.size
    arch = start_params.arch
    values = start_params.values
    for epoch in range(hp.local_epochs):
        order = state.rng.permutation(n)
        for batch, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start : start + hp.batch_size]
            # overflow on the way to divergence is caught by the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                _, grad = raw_loss_and_grad(
                    values, arch, x[idx], y[idx], None if omega is None else omega[idx]
                )
                values = values - hp.eta * grad
            if not np.isfinite(values).all():
                raise NonFiniteWeights(state.client_id, epoch, batch, ParamVector(values, arch))
    return ParamVector(values, arch)


def aggregate(
    updates: Sequence[tuple[ParamVector, int]], total: int | None = None
) -> ParamVector:
    """Sample-count weighted mean of the received client models.

    Weights are ``n_k / sum(received n_k)``. Passing ``total`` switches to the
    literal ``n_k / n`` weighting over a fixed population size.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    arch = updates[0][0].arch
    sizes = [len(p) for p, _ in updates]
    if len(set(sizes)) != 1:
        raise ValueError(f"updates differ in length: {sorted(set(sizes))}")
    counts = np.array([n for _, n in updates], dtype=np.float64)
    if (counts <= 0).any():
        raise ValueError("sample counts must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        if total is not None:
            out = np.zeros(sizes[0])
            for (params, _), n_k in zip(updates, counts):
                out += (n_k / total) * params.values
            return ParamVector(out, arch)
        # Accumulate offsets from the first update so identical inputs come back
        # bit-for-bit unchanged.
        ref = updates[0][0].values
        weights = counts / counts.sum()
        offset = np.zeros(sizes[0])
        for (params, _), weight in zip(updates[1:], weights[1:]):
            offset += weight * (params.values - ref)
        return ParamVector(ref + offset, arch)


def run_round(state: FederationState, plan: RoundPlan) -> tuple[FederationState, RoundOutcome]:
    """Advance the federation by one round under the given fault decisions."""
    t = state.round + 1
    participated = np.asarray(plan.participates, dtype=bool)
    downloaded = participated & plan.download_ok
    uploaded = participated & plan.upload_ok
    outcome = RoundOutcome(t, participated, downloaded, uploaded)
    received: list[tuple[ParamVector, int]] = []
    for client in state.clients:
        k = client.client_id
        if not participated[k]:
            continue
        if downloaded[k]:
            client.local_params = state.global_params
        hp = client.hyperparams
        if k in plan.overrides:
            hp = dataclasses.replace(hp, **plan.overrides[k])
        try:
            result = client_update(client, client.local_params, hp)
        except NonFiniteWeights as exc:
            outcome.nonfinite_events.append(f"round {t}: {exc}")
            log.debug("round %d: %s", t, exc)
            result = exc.params
        client.local_params = result
        if uploaded[k]:
            received.append((result, client.shard.n_k))
    if received:
        state.global_params = aggregate(received, state.strict_total)
    else:
        outcome.warnings.append(f"round {t}: zero uploads, global model unchanged")
    state.round = t
    return state, outcome


@dataclass
class SessionConfig:
    """Everything a single simulated run needs besides its fault plan."""

    arch: ModelArch
    hyperparams: Hyperparams
    rounds: int
    shards: list[Shard]
    test: Dataset
    seed: int = 0
    eval_every: int = 10
    class_weighting: bool = False
    strict_weights: bool = False

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not self.shards:
            raise ValueError("need at least one client shard")

    def is_eval_round(self, t: int) -> bool:
        return t == 0 or t % self.eval_every == 0 or t == self.rounds

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.arch, self.hyperparams, self.rounds, self.seed, self.eval_every,
                       self.class_weighting, self.strict_weights)).encode())
        for shard in self.shards:
            h.update(shard.data.features.tobytes())
            h.update(shard.data.labels.tobytes())
        return h.hexdigest()[:16]


class Evaluator:
    """Global-test accuracy/AUROC and loss over the pooled training data."""

    def __init__(self, test: Dataset, train: Dataset, class_weights: np.ndarray | None = None):
        self.test = test
        self.train = train
        self.class_weights = class_weights

    def __call__(self, params: ParamVector) -> tuple[Evaluation, float]:
        with np.errstate(all="ignore"):
            result = evaluate_probabilities(forward(params, self.test.features), self.test.labels)
            probs = forward(params, self.train.features)
        y = self.train.labels
        p_true = probs[np.arange(y.size), y]
        omega = np.ones(y.size) if self.class_weights is None else self.class_weights[y]
        if not np.isfinite(p_true).all():
            return result, float("nan")
        loss = float(-(omega * np.log(np.maximum(p_true, LOG_FLOOR))).mean())
        return result, loss


EvalHook = Callable[[ParamVector], "tuple[Evaluation, float]"]


def default_evaluator(config: SessionConfig) -> Evaluator:
    pooled = Dataset.concat([s.data for s in config.shards])
    weights = (
        class_weights_from_labels(pooled.labels, pooled.num_classes)
        if config.class_weighting
        else None
    )
    return Evaluator(config.test, pooled, weights)


def init_state(
    config: SessionConfig, streams: Sequence[np.random.Generator] | None = None
) -> FederationState:
    """Initial global model ``w_0`` copied to every client."""
    w0 = init_params(config.arch, substream(config.seed, "init"))
    clients = []
    for k, shard in enumerate(config.shards):
        if shard.client_id != k:
            raise ValueError(f"shard {k} carries client_id {shard.client_id}")
        rng = streams[k] if streams is not None else substream(config.seed, "shuffle", k)
        weights = (
            class_weights_from_labels(shard.data.labels, config.arch.num_classes)
            if config.class_weighting
            else None
        )
        clients.append(ClientState(k, w0, shard, config.hyperparams, rng, weights))
    total = sum(s.n_k for s in config.shards) if config.strict_weights else None
    return FederationState(w0, clients, config.arch, 0, total)


def _record(t: int, hook: EvalHook, params: ParamVector, flags=None, nonfinite=False) -> RoundRecord:
    result, loss = hook(params)
    participated, uploaded, downloaded = flags if flags is not None else ("", "", "")
    return RoundRecord(
        t, result.accuracy, result.auroc, loss, participated, uploaded, downloaded,
        nonfinite or result.nonfinite or not params.is_finite(),
    )


def run_session(
    config: SessionConfig,
    fault_plan: FaultPlan | None = None,
    eval_hook: EvalHook | None = None,
    state: FederationState | None = None,
) -> RunHistory:
    """Run ``config.rounds`` federated rounds, evaluating the global model on cadence."""
    k = len(config.shards)
    plan = fault_plan if fault_plan is not None else FaultPlan.fault_free(k, config.rounds)
    if len(plan) < config.rounds or plan.num_clients != k:
        raise ValueError(
            f"fault plan covers {len(plan)} rounds x {plan.num_clients} clients; "
            f"need {config.rounds} x {k}"
        )
    hook = eval_hook or default_evaluator(config)
    state = state or init_state(config)
    history = RunHistory(fingerprint=config.fingerprint(), label="federated")
    zeros = "0" * k
    history.append(_record(0, hook, state.global_params, (zeros, zeros, zeros)))
    for t in range(config.rounds):
        state, outcome = run_round(state, plan[t])
        history.events.extend(outcome.nonfinite_events)
        if config.is_eval_round(outcome.round):
            flags = (
                bitstring(outcome.participated),
                bitstring(outcome.uploaded),
                bitstring(outcome.downloaded),
            )
            history.append(
                _record(outcome.round, hook, state.global_params, flags, bool(outcome.nonfinite_events))
            )
    return history


def _train_alone(
    config: SessionConfig, shard: Shard, rng: np.random.Generator, label: str, hook: EvalHook
) -> RunHistory:
    weights = (
        class_weights_from_labels(shard.data.labels, config.arch.num_classes)
        if config.class_weighting
        else None
    )
    w = init_params(config.arch, substream(config.seed, "init"))
    client = ClientState(shard.client_id, w, shard, config.hyperparams, rng, weights)
    history = RunHistory(fingerprint=config.fingerprint(), label=label)
    history.append(_record(0, hook, w))
    diverged = False
    for t in range(1, config.rounds + 1):
        failed = False
        if not diverged:
            try:
                w = client_update(client, w)
            except NonFiniteWeights as exc:
                history.events.append(f"round {t}: {exc}")
                w, diverged, failed = exc.params, True, True
        if config.is_eval_round(t):
            history.append(_record(t, hook, w, nonfinite=failed))
    return history


def centralized_train(config: SessionConfig, eval_hook: EvalHook | None = None) -> RunHistory:
    """Plain minibatch SGD on all shards pooled, with the federated step budget.

    One "round" is ``E`` epochs over the pooled data. Uses client 0's shuffle
    stream, so a single-shard setup reproduces ``local_train(config, 0)``.
    """
    pooled = Shard(Dataset.concat([s.data for s in config.shards]), 0)
    hook = eval_hook or default_evaluator(config)
    return _train_alone(config, pooled, substream(config.seed, "shuffle", 0), "centralized", hook)


def local_train(
    config: SessionConfig, client_id: int, eval_hook: EvalHook | None = None
) -> RunHistory:
    """Train on one client's shard only; evaluate on the global test set."""
    shard = config.shards[client_id]
    hook = eval_hook or default_evaluator(config)
    rng = substream(config.seed, "shuffle", client_id)
    return _train_alone(config, shard, rng, f"local-{client_id}", hook)
