"""Observation featurization: sector-min depth rays plus normalized
proprioception for the actor, and a privileged noise-free vector (with
direct field lookups) for the critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import AttitudeCommand, QuadState
from ..fields import ScalarField, interpolate_many
from ..sensing import DepthImage


@dataclass(frozen=True)
class FeatureConfig:
    """Normalization constants and the ray-sector layout.

    The depth image collapses to n_azimuth x n_elevation sector minima,
    each normalized by the camera's max depth; proprioceptive entries are
    scaled by the constants below so everything lands in roughly [-1, 1].
    """

    n_azimuth: int = 16
    n_elevation: int = 4
    max_depth: float = 7.0
    v_norm: float = 10.0  # m/s
    d_xy_norm: float = 30.0  # m, typically the arena diagonal
    z_norm: float = 3.0  # m, arena height
    f_max: float = 2.5 * 9.81
    tilt_max: float = 0.6
    frame_stack: int = 1

    @property
    def ray_dim(self) -> int:
        return self.n_azimuth * self.n_elevation

    @property
    def obs_dim(self) -> int:
        return (self.ray_dim + 3 + 9 + 4 + 2 + 2) * self.frame_stack

    @property
    def priv_dim(self) -> int:
        return 3 + 9 + 4 + 2 + 2 + 8


@dataclass(frozen=True)
class PolicyObservation:
    ray_features: np.ndarray
    v_body: np.ndarray
    r_flat: np.ndarray
    a_prev: np.ndarray
    d_xy: np.ndarray
    h_self: float
    h_goal: float

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.ray_features,
                self.v_body,
                self.r_flat,
                self.a_prev,
                self.d_xy,
                [self.h_self, self.h_goal],
            ]
        )


def _sector_minima(data: np.ndarray, n_elevation: int, n_azimuth: int) -> np.ndarray:
    """Per-sector minimum over an (elevation x azimuth) partition."""
    h, w = data.shape
    row_edges = np.linspace(0, h, n_elevation + 1).astype(int)[:-1]
    col_edges = np.linspace(0, w, n_azimuth + 1).astype(int)[:-1]
    rows = np.minimum.reduceat(data, row_edges, axis=0)
    return np.minimum.reduceat(rows, col_edges, axis=1)


def _normalized_command(a_prev: AttitudeCommand, cfg: FeatureConfig) -> np.ndarray:
    return a_prev.as_array() / np.array([cfg.f_max, cfg.tilt_max, cfg.tilt_max, np.pi])


def featurize(
    depth: DepthImage,
    state: QuadState,
    goal,
    a_prev: AttitudeCommand,
    cfg: FeatureConfig,
) -> PolicyObservation:
    """Actor observation from an (inpainted) depth image and the state.

    ``state`` is whatever proprioception the caller trusts; during training
    it is the noise-perturbed state, so the actor never sees ground truth.
    """
    goal = np.asarray(goal, dtype=float)
    sectors = _sector_minima(depth.data, cfg.n_elevation, cfg.n_azimuth)
    return PolicyObservation(
        ray_features=(sectors / cfg.max_depth).reshape(-1),
        v_body=state.v_body / cfg.v_norm,
        r_flat=state.R.reshape(-1),
        a_prev=_normalized_command(a_prev, cfg),
        d_xy=(goal[:2] - state.p[:2]) / cfg.d_xy_norm,
        h_self=float(state.p[2]) / cfg.z_norm,
        h_goal=float(goal[2]) / cfg.z_norm,
    )


def privileged_features(
    state: QuadState,
    goal,
    a_prev: AttitudeCommand,
    esdf: ScalarField,
    phi: ScalarField,
    cfg: FeatureConfig,
) -> np.ndarray:
    """Critic input: clean proprioception plus direct map lookups (obstacle
    clearance and its gradient, remaining geodesic cost and its descent
    direction). Never touches the rendered/degraded observation path."""
    goal = np.asarray(goal, dtype=float)
    p = np.asarray(state.p, dtype=float)[None, :]
    vals, grads, _ = interpolate_many(esdf, p)
    e_val, e_grad = vals[0], grads[0]
    pvals, pgrads, _ = interpolate_many(phi, p)
    p_val, p_grad = pvals[0], pgrads[0]
    return np.concatenate(
        [
            state.v_body / cfg.v_norm,
            state.R.reshape(-1),
            _normalized_command(a_prev, cfg),
            (goal[:2] - state.p[:2]) / cfg.d_xy_norm,
            [state.p[2] / cfg.z_norm, goal[2] / cfg.z_norm],
            [min(e_val, cfg.max_depth) / cfg.max_depth],
            e_grad,
            [min(p_val, cfg.d_xy_norm * 2) / cfg.d_xy_norm],
            p_grad / max(1.0, np.linalg.norm(p_grad)),
        ]
    )
