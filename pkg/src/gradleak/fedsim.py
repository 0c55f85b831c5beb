from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_NUM_CLIENTS, DEFAULT_ROUNDS
from .diagnostics import log_info
from .errors import EmptyInput, InvalidConfig, ShapeMismatch, TooManyClients
from .models import GradientRecord, LabeledDataset, LayerGradient, Model, SnapshotLog
from .seeding import derive_seeds
from .tensor_nn import forward, loss_gradients, sgd_step
from .worker import ordered_map

ALGORITHMS = ("fedsgd", "fedavg")


@dataclass
class FLConfig:
    num_clients: int = DEFAULT_NUM_CLIENTS
    rounds: int = DEFAULT_ROUNDS
    lr: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH_SIZE
    algorithm: str = "fedsgd"
    local_batches_per_round: int = 1
    snapshot_every: int = 1
    seed: int = 0
    weighted: bool = False  # weight client contributions by partition size
    max_workers: int = 1

    def validate(self) -> None:
        if self.num_clients < 1:
            raise InvalidConfig("num_clients must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.lr > 0:
            raise InvalidConfig("lr must be > 0")
        if self.rounds < 0:
            raise InvalidConfig("rounds must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise InvalidConfig(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.local_batches_per_round < 1:
            raise InvalidConfig("local_batches_per_round must be >= 1")
        if self.snapshot_every < 1:
            raise InvalidConfig("snapshot_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class ClientState:
    """One client's partition and its seeded, reshuffled-per-epoch batch schedule."""

    def __init__(self, client_id: int, data: LabeledDataset, seed: int):
        self.client_id = client_id
        self.data = data
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(len(data))
        self.position = 0
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.data)

    def next_indices(self, batch_size: int) -> np.ndarray:
        idx = self._order[self.position : self.position + batch_size]
        self.position += idx.size
        if self.position >= len(self.data):
            self._order = self._rng.permutation(len(self.data))
            self.position = 0
            self.epoch += 1
        return idx

    def next_batch(self, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.next_indices(batch_size)
        return self.data.inputs[idx], self.data.labels[idx]


def partition(dataset: LabeledDataset, num_clients: int, seed: int) -> List[ClientState]:
    """IID split into ``num_clients`` disjoint partitions whose sizes differ by at most one."""
    if len(dataset) == 0:
        raise EmptyInput("cannot partition an empty dataset")
    if num_clients < 1 or num_clients > len(dataset):
        raise TooManyClients(f"{num_clients} clients for {len(dataset)} samples")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    seeds = derive_seeds(seed, num_clients, salt=1)
    return [
        ClientState(c, dataset.subset(np.sort(part)), seeds[c])
        for c, part in enumerate(np.array_split(perm, num_clients))
    ]


def aggregate_gradients(records: Sequence[GradientRecord]) -> GradientRecord:
    """Element-wise sum in the given order (FedAvg-style aggregation of batch gradients)."""
    if not records:
        raise EmptyInput("no gradient records to aggregate")
    first = records[0]
    weights = [g.weight.copy() for g in first.layers]
    biases = [g.bias.copy() for g in first.layers]
    for rec in records[1:]:
        if len(rec.layers) != len(first.layers):
            raise ShapeMismatch("gradient records have different layer counts")
        for i, g in enumerate(rec.layers):
            if g.weight.shape != weights[i].shape or g.bias.shape != biases[i].shape:
                raise ShapeMismatch(f"layer {i + 1}: gradient shape {g.weight.shape} != {weights[i].shape}")
            weights[i] += g.weight
            biases[i] += g.bias
    return GradientRecord(
        layers=tuple(LayerGradient(w, b) for w, b in zip(weights, biases)),
        batch_size=sum(r.batch_size for r in records),
        round=first.round,
        seed_kind=first.seed_kind if len(records) == 1 else "aggregate",
    )


def _client_weights(config: FLConfig, clients: Sequence[ClientState]) -> List[float]:
    if config.weighted:
        total = sum(len(c) for c in clients)
        return [len(c) / total for c in clients]
    return [1.0 / len(clients)] * len(clients)


def _model_delta(global_model: Model, local_model: Model, round_index: int) -> GradientRecord:
    """global - local, so applying it with lr 1 moves the global model onto the local one."""
    return GradientRecord(
        layers=tuple(
            LayerGradient(g.weight - l.weight, g.bias - l.bias) for g, l in zip(global_model.params, local_model.params)
        ),
        round=round_index,
        seed_kind="model_delta",
    )


def _server_mean(config: FLConfig, clients: Sequence[ClientState], records: Sequence[GradientRecord]) -> GradientRecord:
    if config.weighted:
        weights = _client_weights(config, clients)
        return aggregate_gradients([r.scaled(w) for r, w in zip(records, weights)])
    return aggregate_gradients(records).scaled(1.0 / len(records))


def run_round(config: FLConfig, model: Model, clients: Sequence[ClientState], round_index: int = 0) -> Tuple[Model, GradientRecord]:
    ordered = sorted(clients, key=lambda c: c.client_id)
    if config.algorithm == "fedsgd":

        def client_grad(client: ClientState) -> GradientRecord:
            x, y = client.next_batch(config.batch_size)
            _, grads = loss_gradients(model, x, y, round_index=round_index)
            return grads

        records = ordered_map(client_grad, ordered, max_workers=config.max_workers, label="fedsgd-clients")
        mean = _server_mean(config, ordered, records)
        return sgd_step(model, mean, config.lr), mean

    def client_update(client: ClientState) -> GradientRecord:
        local = model
        for _ in range(config.local_batches_per_round):
            x, y = client.next_batch(config.batch_size)
            _, grads = loss_gradients(local, x, y, round_index=round_index)
            local = sgd_step(local, grads, config.lr)
        return _model_delta(model, local, round_index)

    deltas = ordered_map(client_update, ordered, max_workers=config.max_workers, label="fedavg-clients")
    mean = _server_mean(config, ordered, deltas)
    return sgd_step(model, mean, 1.0), mean


def train(config: FLConfig, model: Model, dataset: LabeledDataset) -> SnapshotLog:
    config.validate()
    clients = partition(dataset, config.num_clients, config.seed)
    log_info(
        "train start algorithm=%s clients=%s sizes=%s rounds=%s lr=%s batch=%s",
        config.algorithm,
        config.num_clients,
        [len(c) for c in clients],
        config.rounds,
        config.lr,
        config.batch_size,
    )
    log = SnapshotLog()
    log.add(0, model)
    for t in range(1, config.rounds + 1):
        model, agg = run_round(config, model, clients, t)
        log.aggregates.append(agg)
        if t % config.snapshot_every == 0 or t == config.rounds:
            log.add(t, model)
    log_info("train finished rounds=%s snapshots=%s", config.rounds, len(log))
    return log


def train_centralized(config: FLConfig, model: Model, dataset: LabeledDataset) -> Model:
    """Plain minibatch SGD over the whole dataset with the one-client batch schedule."""
    config.validate()
    (client,) = partition(dataset, 1, config.seed)
    for t in range(1, config.rounds + 1):
        x, y = client.next_batch(config.batch_size)
        _, grads = loss_gradients(model, x, y, round_index=t)
        model = sgd_step(model, grads, config.lr)
    return model


def accuracy(model: Model, dataset: LabeledDataset, batch_size: int = 512) -> float:
    if len(dataset) == 0:
        raise EmptyInput("cannot score an empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        probs = forward(model, dataset.inputs[start : start + batch_size]).probs
        correct += int(np.sum(probs.argmax(axis=1) == dataset.labels[start : start + batch_size]))
    return correct / len(dataset)
