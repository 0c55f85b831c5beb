from __future__ import annotations

APP_NAME = "gradleak"
APP_ID = "gradleak"

SNAPSHOT_MAGIC = b"FLSNAP1\x00"
DATASET_MAGIC = b"FLDATA1\x00"

DEFAULT_LR = 0.01  # plain SGD, no momentum
DEFAULT_BATCH_SIZE = 32
DEFAULT_NUM_CLIENTS = 2
DEFAULT_ROUNDS = 100

RANGE_EPS = 1e-12  # floor for range(g) in the sensitivity ratio
PROB_CLAMP = 1e-12  # predictor probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
DEFAULT_PERMUTATIONS = 10_000
CI_Z = 1.96

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
