"""Experiment configuration: TOML file -> typed sections -> env factories.

One config file pins everything a run needs (scenes, dynamics, noise,
reward, shield, PPO, evaluation grid), so (config, seed) determines every
emitted artifact byte-exactly in single-worker mode. The JSON summaries
embed a hash of the config bytes for traceability.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DynamicsParams, NoiseModel
from .fields import compute_esdf, compute_geodesic, euclidean_goal_field
from .gridworld import SceneSpec, VoxelGrid, generate_scene
from .policy.features import FeatureConfig
from .policy.ppo import PpoConfig
from .policy.simenv import EnvParams, SceneBundle, SimEnv
from .reward import (
    NavRewardParams,
    RewardWeights,
    SafetyRewardParams,
    SmoothRewardParams,
    TerminalLimits,
)
from .sensing import CameraModel
from .shield import ShieldParams

REWARD_MODES = ("distance", "dijkstra", "dijkstra_cbf")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    role: str  # "train" | "eval"
    spec: SceneSpec


@dataclass
class ExperimentConfig:
    seed: int
    reward_mode: str
    shield_enabled: bool
    target_speeds: List[float]
    trials_per_cell: int
    scenes: List[SceneEntry]
    camera: CameraModel
    dynamics: DynamicsParams
    noise: NoiseModel
    env: EnvParams
    weights: RewardWeights
    nav: NavRewardParams
    safety: SafetyRewardParams
    smooth: SmoothRewardParams
    limits: TerminalLimits
    shield: ShieldParams
    ppo: PpoConfig
    features: FeatureConfig
    inflation_radius: float
    eval_deterministic: bool
    config_hash: str = ""

    def train_scenes(self) -> List[SceneEntry]:
        return [s for s in self.scenes if s.role == "train"]

    def eval_scenes(self) -> List[SceneEntry]:
        return [s for s in self.scenes if s.role == "eval"]


def _get(table: dict, key: str, default):
    return table.get(key, default)


def _parse_scene(entry: dict, resolution_default: float) -> SceneEntry:
    try:
        spawn = entry["spawn"]
        spec = SceneSpec(
            arena_size=tuple(entry["arena_size"]),
            mode=_get(entry, "mode", "primitives"),
            obstacle_count=int(_get(entry, "obstacle_count", 0)),
            size_range={k: tuple(v) for k, v in _get(entry, "size_range", {}).items()},
            seed=int(_get(entry, "seed", 0)),
            goal=tuple(entry["goal"]),
            spawn_region=(tuple(spawn["lo"]), tuple(spawn["hi"])),
            resolution=float(_get(entry, "resolution", resolution_default)),
            perlin_threshold=float(_get(entry, "perlin_threshold", 0.25)),
            perlin_cell=float(_get(entry, "perlin_cell", 4.0)),
            fixed_boxes=tuple(
                (tuple(b["center"]), tuple(b["size"])) for b in _get(entry, "boxes", [])
            ),
        )
        spec.validate()
        return SceneEntry(
            scene_id=str(entry["id"]), role=_get(entry, "role", "train"), spec=spec
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scene entry {entry.get('id', '?')!r}: {exc}") from exc


def load_config(path, seed_override: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
        data = tomllib.loads(raw_bytes.decode("utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc

    try:
        seed = int(data.get("seed", 0)) if seed_override is None else int(seed_override)
        reward_mode = data.get("reward_mode", "dijkstra_cbf")
        if reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward_mode must be one of {REWARD_MODES}, got {reward_mode!r}")

        cam_t = data.get("camera", {})
        camera = CameraModel(
            width=int(_get(cam_t, "width", 100)),
            height=int(_get(cam_t, "height", 60)),
            fov_h=float(_get(cam_t, "fov_h", 1.518)),
            fov_v=float(_get(cam_t, "fov_v", 1.012)),
            max_depth=float(_get(cam_t, "max_depth", 7.0)),
        )

        dyn_t = data.get("dynamics", {})
        dynamics = DynamicsParams(
            g=float(_get(dyn_t, "g", 9.81)),
            tau_att=float(_get(dyn_t, "tau_att", 0.15)),
            drag_coeff=float(_get(dyn_t, "drag_coeff", 0.05)),
            dt_ctrl=float(_get(dyn_t, "dt_ctrl", 0.01)),
            substeps=int(_get(dyn_t, "substeps", 5)),
            f_max=float(_get(dyn_t, "f_max", 2.5 * 9.81)),
            tilt_max=float(_get(dyn_t, "tilt_max", 0.6)),
        )

        noise_t = data.get("noise", {})
        noise = NoiseModel(
            pos_sigma=float(_get(noise_t, "pos_sigma", 0.0)),
            vel_scale_sigma=float(_get(noise_t, "vel_scale_sigma", 0.0)),
            att_sigma=float(_get(noise_t, "att_sigma", 0.0)),
            action_frac=float(_get(noise_t, "action_frac", 0.0)),
            depth_dropout_rate=float(_get(noise_t, "depth_dropout_rate", 0.0)),
            seed=seed,
        )

        env_t = data.get("env", {})
        env = EnvParams(
            robot_radius=float(_get(env_t, "robot_radius", 0.15)),
            dropout_rate=noise.depth_dropout_rate,
            dropout_blobs=int(_get(env_t, "dropout_blobs", 0)),
            delay_enabled=bool(_get(env_t, "delay_enabled", False)),
            cloud_stride=int(_get(env_t, "cloud_stride", 4)),
            cloud_memory=int(_get(env_t, "cloud_memory", 1)),
            timeout_factor=float(_get(env_t, "timeout_factor", 2.0)),
            timeout_pad=float(_get(env_t, "timeout_pad", 10.0)),
            use_safety_term=reward_mode == "dijkstra_cbf",
        )

        rew_t = data.get("reward", {})
        w = _get(rew_t, "weights", [1.0, 0.5, 0.1, 10.0, 10.0, 0.05, 0.05])
        if len(w) != 7:
            raise ConfigError("reward.weights must have exactly 7 entries")
        weights = RewardWeights(*[float(x) for x in w])
        nav = NavRewardParams(
            lam=float(_get(rew_t, "lam", 1.0)), clip_c=float(_get(rew_t, "clip_c", 0.5))
        )
        safety = SafetyRewardParams(
            gamma_cbf=float(_get(rew_t, "gamma_cbf", 1.0)),
            d_safe=float(_get(rew_t, "d_safe", 0.4)),
            delta_min=float(_get(rew_t, "delta_min", -2.0)),
        )
        smooth = SmoothRewardParams(
            w_mag=float(_get(rew_t, "w_mag", 0.5)),
            w_delta=float(_get(rew_t, "w_delta", 0.5)),
            f_max=dynamics.f_max,
            tilt_max=dynamics.tilt_max,
        )
        limits = TerminalLimits(
            v_target=float(_get(rew_t, "v_target", 3.0)),
            z_low=float(_get(rew_t, "z_low", 0.3)),
            z_high=float(_get(rew_t, "z_high", 2.7)),
            success_radius=float(_get(rew_t, "success_radius", 5.0)),
        )

        shield_t = data.get("shield", {})
        shield = ShieldParams(
            alpha_0=float(_get(shield_t, "alpha_0", 4.0)),
            alpha_1=float(_get(shield_t, "alpha_1", 4.0)),
            r_safe=float(_get(shield_t, "r_safe", 0.4)),
            k_obstacles=int(_get(shield_t, "k_obstacles", 8)),
            accel_bound=float(_get(shield_t, "accel_bound", 13.0)),
        )

        ppo_t = data.get("ppo", {})
        ppo = PpoConfig(
            discount=float(_get(ppo_t, "discount", 0.99)),
            gae_lambda=float(_get(ppo_t, "gae_lambda", 0.95)),
            clip_epsilon=float(_get(ppo_t, "clip_epsilon", 0.2)),
            epochs_per_update=int(_get(ppo_t, "epochs_per_update", 4)),
            minibatch_size=int(_get(ppo_t, "minibatch_size", 256)),
            learning_rate=float(_get(ppo_t, "learning_rate", 3e-4)),
            entropy_coeff=float(_get(ppo_t, "entropy_coeff", 3e-3)),
            value_coeff=float(_get(ppo_t, "value_coeff", 0.5)),
            rollout_length=int(_get(ppo_t, "rollout_length", 128)),
            num_envs=int(_get(ppo_t, "num_envs", 8)),
            seed=seed,
            iterations=int(_get(ppo_t, "iterations", 40)),
            hidden_sizes=tuple(int(x) for x in _get(ppo_t, "hidden_sizes", [64, 64])),
            log_std_init=float(_get(ppo_t, "log_std_init", -0.5)),
            max_grad_norm=float(_get(ppo_t, "max_grad_norm", 0.5)),
            action_repeat=int(_get(ppo_t, "action_repeat", 4)),
        )

        feat_t = data.get("features", {})
        scenes = [
            _parse_scene(e, float(data.get("resolution", 0.25)))
            for e in data.get("scenes", [])
        ]
        if not scenes:
            raise ConfigError("config declares no scenes")
        arena_diag = max(
            float(np.linalg.norm(np.asarray(s.spec.arena_size))) for s in scenes
        )
        features = FeatureConfig(
            n_azimuth=int(_get(feat_t, "n_azimuth", 16)),
            n_elevation=int(_get(feat_t, "n_elevation", 4)),
            max_depth=camera.max_depth,
            v_norm=float(_get(feat_t, "v_norm", 10.0)),
            d_xy_norm=float(_get(feat_t, "d_xy_norm", arena_diag)),
            z_norm=float(_get(feat_t, "z_norm", max(s.spec.arena_size[2] for s in scenes))),
            f_max=dynamics.f_max,
            tilt_max=dynamics.tilt_max,
            frame_stack=int(_get(feat_t, "frame_stack", 1)),
        )

        return ExperimentConfig(
            seed=seed,
            reward_mode=reward_mode,
            shield_enabled=bool(data.get("shield_enabled", True)),
            target_speeds=[float(v) for v in data.get("target_speeds", [3.0, 5.0])],
            trials_per_cell=int(data.get("trials_per_cell", 20)),
            scenes=scenes,
            camera=camera,
            dynamics=dynamics,
            noise=noise,
            env=env,
            weights=weights,
            nav=nav,
            safety=safety,
            smooth=smooth,
            limits=limits,
            shield=shield,
            ppo=ppo,
            features=features,
            inflation_radius=float(data.get("inflation_radius", env.robot_radius + 0.1)),
            eval_deterministic=bool(data.get("eval_deterministic", True)),
            config_hash=hashlib.sha256(raw_bytes).hexdigest()[:16],
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def with_reward_mode(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    """Variant of a config with a different navigation-reward ablation."""
    if mode not in REWARD_MODES:
        raise ConfigError(f"unknown reward_mode {mode!r}")
    return replace(
        cfg, reward_mode=mode, env=replace(cfg.env, use_safety_term=mode == "dijkstra_cbf")
    )


def build_bundle(cfg: ExperimentConfig, entry: SceneEntry, grid: Optional[VoxelGrid] = None) -> SceneBundle:
    """Grid + fields for one scene, honoring the reward-mode potential."""
    if grid is None:
        grid = generate_scene(entry.spec)
    esdf = compute_esdf(grid)
    if cfg.reward_mode == "distance":
        phi = euclidean_goal_field(grid, entry.spec.goal)
    else:
        phi = compute_geodesic(grid, entry.spec.goal, cfg.inflation_radius, esdf=esdf)
    return SceneBundle(
        scene_id=entry.scene_id,
        grid=grid,
        esdf=esdf,
        phi=phi,
        goal=np.asarray(entry.spec.goal, dtype=float),
        spawn_lo=np.asarray(entry.spec.spawn_region[0], dtype=float),
        spawn_hi=np.asarray(entry.spec.spawn_region[1], dtype=float),
    )


def make_env(
    cfg: ExperimentConfig,
    bundle: SceneBundle,
    rng: np.random.Generator,
    v_target: Optional[float] = None,
    training: bool = True,
) -> SimEnv:
    limits = cfg.limits if v_target is None else replace(cfg.limits, v_target=v_target)
    noise = cfg.noise if training else NoiseModel.disabled()
    env_params = cfg.env if training else replace(cfg.env, dropout_rate=0.0, dropout_blobs=0, delay_enabled=False)
    return SimEnv(
        bundle=bundle,
        cam=cfg.camera,
        dyn=cfg.dynamics,
        noise=noise,
        nav_params=cfg.nav,
        safety_params=cfg.safety,
        smooth_params=cfg.smooth,
        limits=limits,
        weights=cfg.weights,
        feature_cfg=cfg.features,
        env_params=env_params,
        shield_params=cfg.shield,
        rng=rng,
        action_repeat=cfg.ppo.action_repeat,
    )
