from dataclasses import replace

import numpy as np
import pytest

from gradleak.datagen import PropertyConfig, SynthConfig, generate, split
from gradleak.errors import InvalidConfig, LengthMismatch, MissingPropertyValue, SingleClass
from gradleak.fedsim import FLConfig, partition, train
from gradleak.leak_metrics import v_information
from gradleak.models import LayerSpec, PropertySample, SnapshotLog
from gradleak.pia import (
    AttackConfig,
    _plan_batches,
    auc,
    choose_main_label,
    collect_gradient_samples,
    resolve_label_condition,
    run_attack,
    run_layer_attacks,
)
from gradleak.predictors import PredictiveFamily
from gradleak.tensor_nn import build_model
from gradleak.zoo import build_preset


def _model(seed=0):
    return build_model([LayerSpec.dense(8, 16), LayerSpec.relu(), LayerSpec.dense(16, 2)], seed)


def _data(n=400, rho=0.0, signal=1.0, seed=0):
    prop = PropertyConfig(name="p", signal_strength=signal, correlation_with_main=rho)
    return generate(SynthConfig(num_samples=n, feature_dim=8, properties=[prop], seed=seed))


def _log(snapshots=10):
    log = SnapshotLog()
    model = _model()
    for r in range(snapshots):
        log.add(r, model)
    return log


def _pairwise_auc(scores, labels):
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def test_auc_examples():
    scores = [0.1, 0.4, 0.35, 0.8]
    assert auc(scores, [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)
    assert auc(scores, [1, 1, 0, 0]) == pytest.approx(0.25, abs=1e-15)
    assert auc(np.exp(3 * np.array(scores) + 1), [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == pytest.approx(0.5, abs=1e-15)


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 501))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.random(n), 2)
        assert auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels), abs=1e-12)


def test_auc_input_errors():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(LengthMismatch):
        auc([0.1, 0.2, 0.3], [0, 1])


def test_collect_counts_and_balance():
    config = AttackConfig(property="p", batches_per_snapshot=20, batch_size=8)
    samples = collect_gradient_samples(_log(10), _data(), config)
    assert sorted(samples) == [1, 2]
    for layer, items in samples.items():
        assert len(items) == 200
        assert sum(s.property for s in items) == 100
        assert all(s.layer == layer for s in items)
    assert samples[1][0].features.size == 8 * 16 + 16
    assert samples[2][0].features.size == 16 * 2 + 2


def test_collect_layer_subset_without_bias():
    config = AttackConfig(property="p", layers=[2], batches_per_snapshot=3, include_bias=False, snapshot_stride=4)
    samples = collect_gradient_samples(_log(10), _data(), config)
    assert list(samples) == [2]
    assert len(samples[2]) == 3 * 3
    assert {s.round for s in samples[2]} == {0, 4, 8}
    assert samples[2][0].features.size == 32


def test_planned_batches_are_property_pure():
    props = np.random.default_rng(1).integers(0, 2, 300)
    rng = np.random.default_rng(2)
    for _, _, value, idx in _plan_batches(props, [0, 1], 10, AttackConfig(batch_size=8), rng):
        assert np.all(props[idx] == value)
    for _, _, value, idx in _plan_batches(props, [0], 10, AttackConfig(batch_size=8, mixing=0.25), rng):
        assert int(np.sum(props[idx] == value)) == 6
    labels = np.random.default_rng(3).integers(0, 2, 300)
    for _, _, value, idx in _plan_batches(props, [0, 1], 10, AttackConfig(batch_size=8, mixing=0.25), rng, labels == 1):
        assert np.all(labels[idx] == 1)
        assert int(np.sum(props[idx] == value)) == 6


def test_choose_main_label():
    labels = np.array([0, 0, 0, 1, 1, 1, 1, 2, 2])
    props = np.array([0, 0, 1, 0, 0, 1, 1, 1, 1])
    assert choose_main_label([(labels, props)]) == 1
    assert choose_main_label([(labels, props), (np.array([0, 0, 1]), np.array([0, 1, 0]))]) == 0
    assert choose_main_label([(np.array([0, 0, 1, 1]), np.array([0, 0, 1, 1]))]) is None
    assert choose_main_label([]) is None


def test_label_condition_is_shared_by_both_datasets():
    aux, victim = _data(seed=1), _data(seed=2)
    resolved = resolve_label_condition(AttackConfig(property="p"), [aux, victim])
    assert resolved.condition_on_label and resolved.main_label in (0, 1)
    assert resolved.main_label == choose_main_label([(d.labels, d.properties["p"]) for d in (victim, aux)])
    explicit = AttackConfig(property="p", main_label=0)
    assert resolve_label_condition(explicit, [aux, victim]) is explicit
    tied = _data(rho=1.0)
    assert not resolve_label_condition(AttackConfig(property="p"), [tied]).condition_on_label


def test_explicit_main_label_needs_both_property_values():
    tied = _data(rho=1.0)
    with pytest.raises(MissingPropertyValue, match="main class 0"):
        collect_gradient_samples(_log(1), tied, AttackConfig(property="p", main_label=0))
    samples = collect_gradient_samples(_log(2), tied, AttackConfig(property="p", condition_on_label=False, batches_per_snapshot=4))
    assert len(samples[1]) == 8


def test_collect_needs_the_property():
    data = _data()
    with pytest.raises(MissingPropertyValue):
        collect_gradient_samples(_log(1), data, AttackConfig(property="missing"))
    data.properties["p"] = np.zeros(len(data), dtype=np.int64)
    with pytest.raises(MissingPropertyValue):
        collect_gradient_samples(_log(1), data, AttackConfig(property="p"))
    with pytest.raises(InvalidConfig):
        collect_gradient_samples(SnapshotLog(), data, AttackConfig(property="p"))


def test_run_attack_rejects_single_class_sets():
    one = [PropertySample(features=np.array([float(i)]), property=1, layer=1) for i in range(5)]
    two = one + [PropertySample(features=np.array([-1.0]), property=0, layer=1)]
    with pytest.raises(SingleClass):
        run_attack(one, two, PredictiveFamily())


def test_attack_config_validation():
    with pytest.raises(InvalidConfig):
        AttackConfig(mixing=0.5).validate()
    with pytest.raises(InvalidConfig):
        AttackConfig(aux_fraction=1.0).validate()


def _trained():
    data = _data(n=800, rho=1.0)
    aux, victim = data.subset(np.arange(400)), data.subset(np.arange(400, 800))
    log = train(FLConfig(num_clients=2, rounds=5, lr=0.1, batch_size=16, seed=3), _model(1), victim)
    return log, aux, victim


def test_label_correlated_property_leaks_from_the_last_layer():
    log, aux, victim = _trained()
    config = AttackConfig(property="p", layers=[2], batches_per_snapshot=20, batch_size=16, seed=5)
    (result,) = run_layer_attacks(log, aux, victim, config)
    assert result.layer == 2 and result.property == "p"
    assert result.auc >= 0.95
    assert result.train_ce_nats < 0.1
    assert result.n_train == result.n_eval == 6 * 20


def test_shuffled_labels_remove_the_training_signal():
    log, aux, victim = _trained()
    config = AttackConfig(property="p", layers=[2], batches_per_snapshot=20, batch_size=16, shuffle_labels=True, seed=5)
    (result,) = run_layer_attacks(log, aux, victim, config)
    assert result.train_ce_nats > 0.3


def test_no_signal_property_stays_near_chance():
    aucs = []
    for seed in range(20):
        data = _data(n=800, rho=0.0, signal=0.0, seed=seed)
        aux, victim = data.subset(np.arange(400)), data.subset(np.arange(400, 800))
        log = train(FLConfig(num_clients=2, rounds=5, lr=0.1, batch_size=16, seed=seed), _model(seed), victim)
        config = AttackConfig(property="p", batches_per_snapshot=20, eval_batches_per_snapshot=40, batch_size=16, seed=seed)
        results = run_layer_attacks(log, aux, victim, config)
        assert [r.n_eval for r in results] == [6 * 40, 6 * 40]
        aucs.append([r.auc for r in results])
    for layer_median in np.median(aucs, axis=0):
        assert 0.45 <= layer_median <= 0.55


def _fcnet_run(signal, seed, rounds=20):
    prop = PropertyConfig(name="p", signal_strength=signal)
    data = generate(SynthConfig(num_samples=1200, feature_dim=64, properties=[prop], seed=seed))
    aux, federated = split(data, [0.3, 0.7], seed)
    fl = FLConfig(num_clients=2, rounds=rounds, seed=seed)
    log = train(fl, build_preset("fcnet", 64, 2, seed), federated)
    victim = partition(federated, fl.num_clients, fl.seed)[0].data
    return log, aux, victim


def test_planted_property_leaks_from_the_first_fcnet_layer():
    aucs, infos = [], []
    for seed in range(3):
        log, aux, victim = _fcnet_run(3.0, seed)
        config = AttackConfig(property="p", layers=[1], batches_per_snapshot=40, snapshot_stride=2, seed=seed)
        (result,) = run_layer_attacks(log, aux, victim, config)
        aucs.append(result.auc)

        final = SnapshotLog()
        final.add(log.rounds[-1], log.final_model)
        shared = resolve_label_condition(replace(config, snapshot_stride=1), [aux, victim])
        samples = collect_gradient_samples(final, victim, shared, batches_per_snapshot=400, seed=seed)
        infos.append(v_information(samples[1], PredictiveFamily(), seed=seed).v_info_nats)
    assert np.median(aucs) >= 0.95
    assert np.median(infos) >= 0.6


def test_v_information_grows_with_signal_strength():
    medians = []
    for signal in (0.0, 1.0, 3.0):
        values = []
        for seed in range(5):
            prop = PropertyConfig(name="p", signal_strength=signal)
            data = generate(SynthConfig(num_samples=600, feature_dim=64, properties=[prop], seed=seed))
            log = SnapshotLog()
            log.add(0, build_preset("fcnet", 64, 2, seed))
            config = AttackConfig(property="p", layers=[1], seed=seed)
            samples = collect_gradient_samples(log, data, config, batches_per_snapshot=200, seed=seed)
            values.append(v_information(samples[1], PredictiveFamily(), seed=seed).v_info_nats)
        medians.append(float(np.median(values)))
    assert medians[0] <= medians[1] + 0.03
    assert medians[1] <= medians[2] + 0.03
    assert medians[2] > 0.3
