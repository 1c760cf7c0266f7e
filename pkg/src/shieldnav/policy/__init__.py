"""Policies over the depth-and-proprioception observation: a privileged
geodesic-descent baseline and a PPO-trained Gaussian MLP with an
asymmetric (privileged-critic) training loop."""

from .baseline import BaselineGains, geodesic_baseline
from .features import FeatureConfig, PolicyObservation, featurize, privileged_features
from .network import Mlp
from .ppo import (
    MlpPolicy,
    PpoConfig,
    RolloutBuffer,
    TrainStats,
    TrainingDivergence,
    act,
    compute_gae,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
)
from .rollout import RolloutSummary, collect_rollouts
from .simenv import EnvParams, SceneBundle, SimEnv

__all__ = [
    "BaselineGains",
    "geodesic_baseline",
    "FeatureConfig",
    "PolicyObservation",
    "featurize",
    "privileged_features",
    "Mlp",
    "MlpPolicy",
    "PpoConfig",
    "RolloutBuffer",
    "TrainStats",
    "TrainingDivergence",
    "act",
    "compute_gae",
    "ppo_update",
    "save_checkpoint",
    "load_checkpoint",
    "RolloutSummary",
    "collect_rollouts",
    "EnvParams",
    "SceneBundle",
    "SimEnv",
]
