import numpy as np
import pytest

from gradleak.datagen import (
    PropertyConfig,
    SynthConfig,
    generate,
    load_csv,
    load_dataset,
    planted_directions,
    save_dataset,
    split,
)
from gradleak.errors import BadFractions, InvalidConfig, MissingColumn, NonBinaryProperty, ParseError


def _corr(a, b):
    return float(np.corrcoef(np.asarray(a, dtype=float), np.asarray(b, dtype=float))[0, 1])


def test_generate_is_deterministic():
    config = SynthConfig(num_samples=300, feature_dim=16, seed=9)
    a = generate(config)
    b = generate(config)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.properties["property"], b.properties["property"])


def test_uncorrelated_property_is_independent_of_label():
    data = generate(SynthConfig(num_samples=10_000, feature_dim=16, seed=1))
    assert abs(_corr(data.labels, data.properties["property"])) <= 0.05


def test_zero_signal_property_is_invisible_to_random_projections():
    config = SynthConfig(num_samples=10_000, feature_dim=16, properties=[PropertyConfig(signal_strength=0.0)], seed=2)
    data = generate(config)
    direction = np.random.default_rng(0).normal(size=16)
    assert abs(_corr(data.inputs @ direction, data.properties["property"])) <= 0.05


def test_full_correlation_ties_property_to_label():
    config = SynthConfig(num_samples=500, feature_dim=8, properties=[PropertyConfig(correlation_with_main=1.0)], seed=3)
    data = generate(config)
    assert np.array_equal(data.properties["property"], data.labels)

    anti = generate(SynthConfig(num_samples=500, feature_dim=8, properties=[PropertyConfig(correlation_with_main=-1.0)], seed=3))
    assert np.array_equal(anti.properties["property"], 1 - anti.labels)


def test_planted_property_shifts_the_planted_direction():
    config = SynthConfig(num_samples=4000, feature_dim=16, properties=[PropertyConfig(signal_strength=2.0)], seed=4)
    data = generate(config)
    direction = planted_directions(config)[config.num_classes]
    projection = data.inputs @ direction
    p = data.properties["property"]
    assert projection[p == 1].mean() - projection[p == 0].mean() == pytest.approx(4.0, abs=0.2)


def test_image_mode_directions_are_orthonormal():
    config = SynthConfig(num_samples=50, image_shape=(1, 8, 8), pattern_block=2, seed=5)
    dirs = planted_directions(config)
    assert dirs.shape == (3, 64)
    np.testing.assert_allclose(dirs @ dirs.T, np.eye(3), atol=1e-12)
    assert generate(config).inputs.shape == (50, 1, 8, 8)


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        SynthConfig(feature_dim=2).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(properties=[PropertyConfig(correlation_with_main=1.5)]).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(image_shape=(1, 6, 6), pattern_block=4).validate()


def test_load_csv_fixture(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,x2,label,smile\n0.5,1,cat,yes\n-1,2.5,dog,no\n3,0,cat,no\n", encoding="utf-8")
    data = load_csv(path, "label", ["smile"])
    assert len(data) == 3
    np.testing.assert_array_equal(data.inputs, [[0.5, 1.0], [-1.0, 2.5], [3.0, 0.0]])
    np.testing.assert_array_equal(data.labels, [0, 1, 0])
    np.testing.assert_array_equal(data.properties["smile"], [1, 0, 0])


def test_load_csv_orders_numeric_labels_and_strips_whitespace(tmp_path):
    path = tmp_path / "numeric.csv"
    path.write_text("x,label,p\n1,10, b\n2,2,a \n3, 10,b\n4,1,a\n", encoding="utf-8")
    data = load_csv(path, "label", ["p"])
    np.testing.assert_array_equal(data.labels, [2, 1, 2, 0])
    assert data.num_classes == 3
    np.testing.assert_array_equal(data.properties["p"], [1, 0, 1, 0])


def test_load_csv_needs_two_property_values(tmp_path):
    path = tmp_path / "single.csv"
    path.write_text("x,label,p\n1,0,a\n2,1,a\n3,0,a\n", encoding="utf-8")
    with pytest.raises(NonBinaryProperty, match="exactly 2"):
        load_csv(path, "label", ["p"])


def test_load_csv_errors(tmp_path):
    three = tmp_path / "three.csv"
    three.write_text("x,label,p\n1,0,a\n2,1,b\n3,0,c\n", encoding="utf-8")
    with pytest.raises(NonBinaryProperty):
        load_csv(three, "label", ["p"])
    with pytest.raises(MissingColumn):
        load_csv(three, "label", ["q"])

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ParseError):
        load_csv(empty, "label", ["p"])

    bad = tmp_path / "bad.csv"
    bad.write_text("x,label,p\n1,0,a\nnope,1,b\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_csv(bad, "label", ["p"])
    assert info.value.row == 3
    assert info.value.column == "x"


def test_split_fractions():
    data = generate(SynthConfig(num_samples=100, feature_dim=8, seed=6))
    a, b = split(data, [0.5, 0.5], seed=1)
    assert (len(a), len(b)) == (50, 50)
    (whole,) = split(data, [1.0], seed=1)
    assert sorted(map(tuple, whole.inputs.tolist())) == sorted(map(tuple, data.inputs.tolist()))
    with pytest.raises(BadFractions):
        split(data, [0.5, 0.6], seed=1)
    with pytest.raises(BadFractions):
        split(data, [], seed=1)


def test_stratified_split_keeps_property_balance():
    data = generate(SynthConfig(num_samples=400, feature_dim=8, seed=7))
    aux, rest = split(data, [0.25, 0.75], seed=2, stratify="property")
    rate = data.properties["property"].mean()
    assert aux.properties["property"].mean() == pytest.approx(rate, abs=0.02)
    assert len(aux) + len(rest) == 400


def test_dataset_container_round_trip(tmp_path):
    data = generate(SynthConfig(num_samples=40, image_shape=(1, 4, 4), pattern_block=2, seed=8))
    path = save_dataset(tmp_path / "d.fldata", data, {"note": "x"})
    loaded = load_dataset(path)
    assert np.array_equal(loaded.inputs, data.inputs)
    assert np.array_equal(loaded.labels, data.labels)
    assert np.array_equal(loaded.properties["property"], data.properties["property"])
    assert loaded.num_classes == 2
