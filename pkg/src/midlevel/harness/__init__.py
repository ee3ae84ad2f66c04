"""Configuration, manifests, CLI commands and experiment recipes."""

from .commands import (
    EVAL_COLUMNS, NEVER, UsageError, compare, curves, evaluate_checkpoint, evaluate_random, feature_catalog,
    frames_fraction, gen_worlds, grid_search, load_worlds, parse_grid, pretrain_features, read_eval_csv,
    select_set, train,
)
from .config import ConfigError, ExperimentConfig, dumps, load_config, loads, save_config
from .experiments import DirectionalResult, directional_experiment
from .manifest import RunManifest, code_version, sha256_file, verify_manifest
