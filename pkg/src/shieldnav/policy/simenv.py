"""Episode simulation: the MDP realized by grid + fields + dynamics +
sensing + reward, with the sim-to-real randomizations and an optional
deployment-time shield.

One SimEnv owns one scene (immutable, shareable) and one rng stream, so
parallel episode workers stay independent and reproducible. The step
pipeline per policy tick:

    act -> +-10% action noise -> delay buffer -> averaged command
        -> dynamics at 100 Hz (action_repeat ticks) -> collision check
        -> reward terms -> termination

Observation (separate call, so eval loops can skip it when a scripted
policy doesn't need it): render -> pixel dropout -> inpaint -> featurize
on the noise-perturbed state; the privileged vector is built from the true
state and the fields and never touches that degraded path.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from ..dynamics import (
    AttitudeCommand,
    DelayBuffer,
    DynamicsParams,
    NoiseModel,
    QuadState,
    delayed_command,
    euler_zyx_to_rotation,
    perturb_action,
    perturb_observation,
    step as dynamics_step,
)
from ..fields import ScalarField, interpolate
from ..gridworld import VoxelGrid, is_colliding
from ..reward import (
    NavRewardParams,
    RewardBreakdown,
    RewardWeights,
    SafetyRewardParams,
    SmoothRewardParams,
    StepEvents,
    TerminalLimits,
    nav_reward,
    safety_reward,
    smooth_reward,
    terminal_and_shaping,
    total_reward,
)
from ..sensing import CameraModel, DepthImage, apply_dropout, depth_to_points, inpaint
from ..shield import ShieldParams, ShieldStepInfo, filter_command_ex
from .features import FeatureConfig, featurize, privileged_features


@dataclass(frozen=True)
class SceneBundle:
    """Immutable per-scene data shared by all envs bound to the scene."""

    scene_id: str
    grid: VoxelGrid
    esdf: ScalarField
    phi: ScalarField  # navigation potential (geodesic or euclidean ablation)
    goal: np.ndarray
    spawn_lo: np.ndarray
    spawn_hi: np.ndarray


@dataclass(frozen=True)
class EnvParams:
    robot_radius: float = 0.15
    dropout_rate: float = 0.0
    dropout_blobs: int = 0
    delay_enabled: bool = False
    cloud_stride: int = 4
    cloud_memory: int = 1  # frames of world-frame cloud kept for the shield
    timeout_factor: float = 2.0  # timeout = factor * geodesic_time + timeout_pad
    timeout_pad: float = 10.0  # s
    use_safety_term: bool = True  # off for the distance/dijkstra ablations
    spawn_yaw_to_goal: bool = True


@dataclass
class StepResult:
    breakdown: RewardBreakdown
    done: bool
    outcome: Optional[str]  # success | collision | timeout | None
    shield_info: ShieldStepInfo = dc_field(default_factory=ShieldStepInfo)


class SimEnv:
    def __init__(
        self,
        bundle: SceneBundle,
        cam: CameraModel,
        dyn: DynamicsParams,
        noise: NoiseModel,
        nav_params: NavRewardParams,
        safety_params: SafetyRewardParams,
        smooth_params: SmoothRewardParams,
        limits: TerminalLimits,
        weights: RewardWeights,
        feature_cfg: FeatureConfig,
        env_params: EnvParams,
        shield_params: ShieldParams,
        rng: np.random.Generator,
        action_repeat: int = 1,
    ):
        self.bundle = bundle
        self.cam = cam
        self.dyn = dyn
        self.noise = noise
        self.nav_params = nav_params
        self.safety_params = safety_params
        self.smooth_params = smooth_params
        self.limits = limits
        self.weights = weights
        self.feature_cfg = feature_cfg
        self.env_params = env_params
        self.shield_params = shield_params
        self.rng = rng
        self.action_repeat = action_repeat

        self.state: QuadState = QuadState.hover_at(bundle.goal)
        self.t = 0.0
        self.a_prev = AttitudeCommand.hover(g=dyn.g)
        self.delay = DelayBuffer(window=0.07)
        self.timeout = np.inf
        self.last_image: Optional[DepthImage] = None
        self._obs_stack: list = []
        self._cloud_history: list = []
        # per-episode telemetry for benchmark records
        self.path_length = 0.0
        self.min_clearance = np.inf
        self.shield_interventions = 0
        self.shield_emergencies = 0

    # -- episode control -------------------------------------------------

    def reset(self) -> QuadState:
        p0 = self.rng.uniform(self.bundle.spawn_lo, self.bundle.spawn_hi)
        if self.env_params.spawn_yaw_to_goal:
            d = self.bundle.goal - p0
            yaw = float(np.arctan2(d[1], d[0]))
        else:
            yaw = self.rng.uniform(-np.pi, np.pi)
        self.state = QuadState(p=p0, v=np.zeros(3), R=euler_zyx_to_rotation(0.0, 0.0, yaw))
        self.t = 0.0
        self.a_prev = AttitudeCommand.hover(g=self.dyn.g)
        window = self.rng.uniform(0.06, 0.08) if self.env_params.delay_enabled else 0.07
        self.delay = DelayBuffer(window=window)
        geo = interpolate(self.bundle.phi, p0).value
        if np.isfinite(geo):
            self.timeout = (
                self.env_params.timeout_factor * geo / max(self.limits.v_target, 0.1)
                + self.env_params.timeout_pad
            )
        else:
            self.timeout = self.env_params.timeout_pad
        self.last_image = None
        self._obs_stack = []
        self._cloud_history = []
        self.path_length = 0.0
        self.min_clearance = np.inf
        self.shield_interventions = 0
        self.shield_emergencies = 0
        return self.state

    # -- observation pipeline ---------------------------------------------

    def observe(self):
        """(actor observation vector, privileged vector) for the current state.

        The actor path renders, degrades, inpaints, and featurizes against
        noise-perturbed proprioception; the privileged path reads the true
        state and the fields directly.
        """
        from ..sensing import render_depth

        img = render_depth(self.bundle.grid, self.state, self.cam)
        if self.env_params.dropout_rate > 0 or self.env_params.dropout_blobs > 0:
            img = apply_dropout(
                img, self.env_params.dropout_rate, self.env_params.dropout_blobs, self.rng
            )
            img = inpaint(img)
        self.last_image = img

        noisy_state = perturb_observation(self.state, self.noise, self.rng)
        obs = featurize(img, noisy_state, self.bundle.goal, self.a_prev, self.feature_cfg)
        vec = obs.vector()
        if self.feature_cfg.frame_stack > 1:
            self._obs_stack.append(vec)
            while len(self._obs_stack) < self.feature_cfg.frame_stack:
                self._obs_stack.insert(0, vec)
            self._obs_stack = self._obs_stack[-self.feature_cfg.frame_stack :]
            vec = np.concatenate(self._obs_stack)
        priv = privileged_features(
            self.state, self.bundle.goal, self.a_prev, self.bundle.esdf, self.bundle.phi,
            self.feature_cfg,
        )
        return vec, priv

    # -- transition ---------------------------------------------------------

    def _shield_cloud(self):
        """Current-frame back-projection, optionally merged with the last
        few frames (world-frame points stay valid against the static grid,
        and the memory covers what the forward camera no longer sees)."""
        from ..sensing import PointCloud

        cloud = depth_to_points(
            self.last_image, self.state, self.cam, self.env_params.cloud_stride
        )
        if self.env_params.cloud_memory <= 1:
            return cloud
        self._cloud_history.append(cloud)
        self._cloud_history = self._cloud_history[-self.env_params.cloud_memory :]
        pts = [c.points for c in self._cloud_history if len(c)]
        if not pts:
            return cloud
        return PointCloud(
            points=np.concatenate(pts),
            pixel_indices=np.concatenate(
                [c.pixel_indices for c in self._cloud_history if len(c)]
            ),
        )

    def step(self, cmd: AttitudeCommand, shield_enabled: bool = False) -> StepResult:
        shield_info = ShieldStepInfo()
        if shield_enabled and self.last_image is not None:
            cloud = self._shield_cloud()
            cmd, shield_info = filter_command_ex(
                cmd, self.state, cloud, self.shield_params, self.dyn
            )
            if shield_info.modified:
                self.shield_interventions += 1
            if shield_info.emergency:
                self.shield_emergencies += 1

        executed = cmd
        if self.noise.action_frac > 0:
            executed = perturb_action(executed, self.noise, self.rng, self.dyn)
        self.delay.push(self.t, executed)
        if self.env_params.delay_enabled:
            executed = delayed_command(self.delay, self.t)

        p_before = self.state.p.copy()
        collided = False
        for _ in range(self.action_repeat):
            nxt = dynamics_step(self.state, executed, self.dyn)
            self.t += self.dyn.dt_ctrl
            self.path_length += float(np.linalg.norm(nxt.p - self.state.p))
            self.state = nxt
            clearance = interpolate(self.bundle.esdf, self.state.p).value
            self.min_clearance = min(self.min_clearance, clearance)
            if is_colliding(
                self.bundle.grid, self.state.p, self.env_params.robot_radius, self.bundle.esdf
            ):
                collided = True
                break

        nav = nav_reward(self.bundle.phi, p_before, self.state.p, self.nav_params)
        safety = (
            safety_reward(self.bundle.esdf, self.state.p, self.state.v, self.safety_params)
            if self.env_params.use_safety_term
            else 0.0
        )
        smooth = smooth_reward(cmd, self.a_prev, self.smooth_params)
        collision, success, speed, height = terminal_and_shaping(
            self.state, self.bundle.goal, StepEvents(collision=collided), self.limits
        )
        breakdown = total_reward(
            nav, safety, smooth, collision, success, speed, height, self.weights
        )
        self.a_prev = cmd

        outcome = None
        if collided:
            outcome = "collision"
        elif success > 0:
            outcome = "success"
        elif self.t >= self.timeout:
            outcome = "timeout"
        return StepResult(
            breakdown=breakdown, done=outcome is not None, outcome=outcome,
            shield_info=shield_info,
        )
