import pytest

from gradleak import diagnostics


@pytest.fixture(autouse=True)
def isolated_state(monkeypatch, tmp_path):
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "state"))
    diagnostics.reset_logging_for_tests()
    yield
    diagnostics.reset_logging_for_tests()


@pytest.fixture
def tiny_config():
    """A full pipeline config small enough for unit tests."""
    family = {"kind": "logistic", "epochs": 50}
    return {
        "name": "tiny",
        "seed": 7,
        "data": {"num_samples": 400, "feature_dim": 16},
        "fl": {"rounds": 3, "batch_size": 32, "lr": 0.05},
        "metrics": {"family": family, "vinfo_batches": 40, "sensitivity_samples": 4, "num_permutations": 1000},
        "attack": {"family": family, "batches_per_snapshot": 10},
    }
