"""Actor-critic networks and off-policy PPO with experience replay."""

from .envs import CorridorEnv, FeatureNavEnv
from .network import N_ACTIONS, PolicyParams, backward, forward, init_policy
from .ppo import Batch, Trajectory, compute_gae, ppo_loss
from .trainer import (
    CURVE_COLUMNS,
    Checkpoint,
    CurveRow,
    PPOConfig,
    PPOTrainer,
    ReplayBuffer,
    collect,
    curve_csv,
    evaluate,
    read_curve_csv,
    train,
)
