import math

import numpy as np
import pytest

from gradleak.errors import ConstantVector, EmptyInput, InvalidConfig, LengthMismatch
from gradleak.stats import confidence_half_width, delta_r, finite_mean, pearson, pearson_pvalue


def test_pearson_examples():
    assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3, 4], [8, 6, 4, 2]) == pytest.approx(-1.0, abs=1e-15)
    assert pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-12)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_is_invariant_to_affine_maps():
    rng = np.random.default_rng(0)
    x = rng.normal(size=30)
    y = x + rng.normal(size=30)
    r = pearson(x, y)
    assert pearson(3.0 * x - 7.0, 0.5 * y + 2.0) == pytest.approx(r, abs=1e-12)
    assert pearson(y, x) == pytest.approx(r, abs=1e-15)
    assert pearson(-x, y) == pytest.approx(-r, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ConstantVector):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(LengthMismatch):
        pearson([1, 2], [1, 2])


def test_pvalue_of_perfect_linear_relation():
    x = np.arange(10, dtype=float)
    p = pearson_pvalue(x, 2 * x + 1, num_permutations=10_000, seed=0)
    assert p <= 0.001
    assert p >= 1 / 10_001


def test_pvalue_is_seeded_and_bounded():
    rng = np.random.default_rng(1)
    x = rng.normal(size=8)
    y = rng.normal(size=8)
    a = pearson_pvalue(x, y, num_permutations=2000, seed=4)
    assert a == pearson_pvalue(x, y, num_permutations=2000, seed=4)
    assert 0.0 < a <= 1.0


def test_pvalue_is_calibrated_under_independence():
    rng = np.random.default_rng(7)
    ps = [pearson_pvalue(rng.normal(size=10), rng.normal(size=10), num_permutations=1000, seed=i) for i in range(50)]
    assert 0.3 <= float(np.median(ps)) <= 0.7


def test_pvalue_needs_enough_permutations():
    with pytest.raises(InvalidConfig):
        pearson_pvalue([1, 2, 3], [3, 1, 2], num_permutations=999)


def test_delta_r():
    assert delta_r(0.8, 0.6) == pytest.approx(-0.2, abs=1e-15)
    assert delta_r(0.2, 0.2) == 0.0
    assert delta_r(0.3, -0.4) == -delta_r(-0.4, 0.3)


def test_confidence_half_width():
    assert confidence_half_width([1.0, 2.0, 3.0]) == pytest.approx(1.96 / math.sqrt(3), abs=1e-12)
    assert math.isnan(confidence_half_width([5.0]))
    assert math.isnan(confidence_half_width([5.0, float("nan")]))
    with pytest.raises(EmptyInput):
        confidence_half_width([float("nan")])


def test_finite_mean():
    assert finite_mean([1.0, float("nan"), 3.0]) == 2.0
    assert math.isnan(finite_mean([float("nan")]))
