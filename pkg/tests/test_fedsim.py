import numpy as np
import pytest

from gradleak.datagen import SynthConfig, generate
from gradleak.errors import EmptyInput, InvalidConfig, ShapeMismatch, TooManyClients
from gradleak.fedsim import (
    FLConfig,
    accuracy,
    aggregate_gradients,
    partition,
    run_round,
    train,
    train_centralized,
)
from gradleak.models import GradientRecord, LayerGradient, LayerParams, LayerSpec
from gradleak.tensor_nn import build_model, loss_gradients, same_parameters, sgd_step, with_params
from gradleak.zoo import build_preset


def _record(w, b=0.0):
    return GradientRecord(layers=(LayerGradient(np.array([[w]], dtype=float), np.array([b], dtype=float)),), batch_size=1)


def _small_model(seed=0, dim=8):
    return build_model([LayerSpec.dense(dim, 16), LayerSpec.relu(), LayerSpec.dense(16, 2)], seed)


def test_partition_sizes_and_determinism():
    data = generate(SynthConfig(num_samples=100, feature_dim=8, seed=0))
    assert sorted(len(c) for c in partition(data, 2, seed=1)) == [50, 50]
    odd = generate(SynthConfig(num_samples=101, feature_dim=8, seed=0))
    assert sorted(len(c) for c in partition(odd, 2, seed=1)) == [50, 51]

    a = partition(data, 3, seed=4)
    b = partition(data, 3, seed=4)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.data.inputs, cb.data.inputs)
    with pytest.raises(TooManyClients):
        partition(data, 101, seed=0)


def test_client_batches_reshuffle_after_each_epoch():
    data = generate(SynthConfig(num_samples=10, feature_dim=8, seed=0))
    (client,) = partition(data, 1, seed=3)
    seen = np.concatenate([client.next_indices(4) for _ in range(3)])
    assert seen.size == 10
    assert sorted(seen.tolist()) == list(range(10))
    assert client.epoch == 1


def test_aggregate_gradients():
    total = aggregate_gradients([_record(1.0, 2.0), _record(3.0, 4.0)])
    assert total.layer(1).weight[0, 0] == 4.0
    assert total.layer(1).bias[0] == 6.0

    single = aggregate_gradients([_record(2.5)])
    assert single.layer(1).weight[0, 0] == 2.5

    rng = np.random.default_rng(0)
    g = GradientRecord(layers=(LayerGradient(rng.normal(size=(3, 4)), rng.normal(size=3)),))
    k = aggregate_gradients([g] * 7)
    np.testing.assert_allclose(k.layer(1).weight, 7 * g.layer(1).weight, atol=1e-12)

    with pytest.raises(EmptyInput):
        aggregate_gradients([])
    bad = GradientRecord(layers=(LayerGradient(np.zeros((2, 2)), np.zeros(2)),))
    with pytest.raises(ShapeMismatch):
        aggregate_gradients([_record(1.0), bad])


def test_server_mean_step_arithmetic():
    model = with_params(build_model([LayerSpec.dense(1, 1)], 0), [LayerParams(np.array([[1.0]]), np.array([0.0]))])
    mean = aggregate_gradients([_record(2.0), _record(4.0)]).scaled(0.5)
    assert sgd_step(model, mean, 0.01).params[0].weight[0, 0] == pytest.approx(0.97, abs=1e-15)


def test_rounds_zero_keeps_only_initial_snapshot():
    data = generate(SynthConfig(num_samples=40, feature_dim=8, seed=0))
    model = _small_model()
    log = train(FLConfig(rounds=0), model, data)
    assert log.rounds == [0]
    assert log.final_model is model


def test_snapshot_schedule():
    data = generate(SynthConfig(num_samples=64, feature_dim=8, seed=0))
    log = train(FLConfig(rounds=100, snapshot_every=10, batch_size=8), _small_model(), data)
    assert log.rounds == list(range(0, 101, 10))
    assert len(log) == 11
    assert len(log.aggregates) == 100


def test_one_client_fedsgd_equals_centralized_sgd():
    data = generate(SynthConfig(num_samples=120, feature_dim=8, seed=1))
    config = FLConfig(num_clients=1, rounds=50, lr=0.05, batch_size=16, seed=3)
    federated = train(config, _small_model(2), data).final_model
    central = train_centralized(config, _small_model(2), data)
    assert same_parameters(federated, central)


def test_fedavg_single_local_step_matches_fedsgd():
    data = generate(SynthConfig(num_samples=80, feature_dim=8, seed=2))
    model = _small_model(5)
    sgd_config = FLConfig(num_clients=2, lr=0.1, batch_size=8, algorithm="fedsgd", seed=7)
    avg_config = FLConfig(num_clients=2, lr=0.1, batch_size=8, algorithm="fedavg", local_batches_per_round=1, seed=7)
    sgd_model, _ = run_round(sgd_config, model, partition(data, 2, 7), 1)
    avg_model, _ = run_round(avg_config, model, partition(data, 2, 7), 1)
    for a, b in zip(sgd_model.params, avg_model.params):
        np.testing.assert_allclose(a.weight, b.weight, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.bias, b.bias, rtol=0, atol=1e-12)


def test_weighted_aggregation_uses_partition_sizes():
    data = generate(SynthConfig(num_samples=31, feature_dim=8, seed=3))
    model = _small_model(1)
    clients = partition(data, 2, 0)
    _, agg = run_round(FLConfig(num_clients=2, batch_size=64, weighted=True), model, partition(data, 2, 0), 1)
    grads = [loss_gradients(model, c.data.inputs, c.data.labels)[1] for c in clients]
    sizes = [len(c) for c in clients]
    assert sorted(sizes) == [15, 16]
    for l in (1, 2):
        expected = sum(n / 31 * g.layer(l).weight for n, g in zip(sizes, grads))
        np.testing.assert_allclose(agg.layer(l).weight, expected, rtol=0, atol=1e-12)


def test_two_clients_train_fcnet_on_separable_data():
    config = SynthConfig(num_samples=1000, feature_dim=64, class_strength=6.0, noise_std=1.0, seed=4)
    data = generate(config)
    log = train(FLConfig(num_clients=2, rounds=300, lr=0.1, batch_size=32, seed=1), build_preset("fcnet", 64, 2, seed=3), data)
    assert accuracy(log.final_model, data) >= 0.9


def test_invalid_fl_config():
    with pytest.raises(InvalidConfig):
        FLConfig(algorithm="fedprox").validate()
    with pytest.raises(InvalidConfig):
        FLConfig(lr=0).validate()
