"""Depth sensing: raycast rendering, degradation, inpainting, back-projection.

The exteroceptive observation is a 100x60 depth image rendered by marching
every pixel ray through the voxel grid (Amanatides-Woo DDA, vectorized
across rays). The sim-to-real degradation invalidates pixels (independent
dropout plus rectangular blobs, saturating to max depth); invalid regions
are restored by harmonic diffusion with the valid pixels as Dirichlet
boundary. The shield consumes the image back-projected to a world-frame
point cloud.

Camera frame follows the OpenCV convention (x right, y down, z forward);
the default mount points the camera along body +x. Depth is range along
the ray, not z-depth, so back-projection is origin + depth * unit ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import QuadState
from .gridworld import VoxelGrid

# camera -> body: cam z (forward) -> body +x, cam x (right) -> body -y,
# cam y (down) -> body -z
DEFAULT_MOUNT = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole depth camera; defaults follow the D435i class of sensor."""

    width: int = 100
    height: int = 60
    fov_h: float = 1.518  # ~87 deg
    fov_v: float = 1.012  # ~58 deg
    max_depth: float = 7.0
    mount_rotation: np.ndarray = field(default_factory=lambda: DEFAULT_MOUNT.copy())

    def __post_init__(self):
        if self.width * self.height <= 0:
            raise ValueError("image must have at least one pixel")
        if not (0.0 < self.fov_h < np.pi and 0.0 < self.fov_v < np.pi):
            raise ValueError("fov must lie in (0, pi)")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame, shape (height, width, 3)."""
        return _ray_directions(self.width, self.height, self.fov_h, self.fov_v)


@lru_cache(maxsize=8)
def _ray_directions(width: int, height: int, fov_h: float, fov_v: float) -> np.ndarray:
    fx = (width / 2.0) / np.tan(fov_h / 2.0)
    fy = (height / 2.0) / np.tan(fov_v / 2.0)
    u = (np.arange(width) + 0.5) - width / 2.0
    v = (np.arange(height) + 0.5) - height / 2.0
    x = u[None, :] / fx
    y = v[:, None] / fy
    d = np.stack(
        [
            np.broadcast_to(x, (height, width)),
            np.broadcast_to(y, (height, width)),
            np.ones((height, width)),
        ],
        axis=-1,
    )
    out = d / np.linalg.norm(d, axis=-1, keepdims=True)
    out.setflags(write=False)
    return out


@dataclass
class DepthImage:
    """Per-pixel range (m), shape (height, width); invalid pixels carry the
    max-depth sentinel with valid=False."""

    data: np.ndarray
    valid: np.ndarray
    max_depth: float

    def __post_init__(self):
        if self.data.shape != self.valid.shape:
            raise ValueError("data/valid shape mismatch")

    def copy(self) -> "DepthImage":
        return DepthImage(self.data.copy(), self.valid.copy(), self.max_depth)


@dataclass
class PointCloud:
    """World-frame obstacle returns with their source pixel indices."""

    points: np.ndarray  # (n, 3)
    pixel_indices: np.ndarray  # (n,) flattened v * width + u

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(points=np.zeros((0, 3)), pixel_indices=np.zeros(0, dtype=int))


def render_depth(grid: VoxelGrid, state: QuadState, cam: CameraModel) -> DepthImage:
    """Raycast the grid into a depth image (deterministic, all pixels valid).

    Depth is the Euclidean distance along the ray to the boundary of the
    first occupied voxel, clipped to max_depth; rays that exit the arena or
    exceed max_depth saturate to max_depth with valid=True (non-returns are
    sky, not sensor faults).
    """
    if not grid.contains(state.p):
        raise ValueError(f"camera origin {state.p} outside the arena")

    dirs_cam = cam.ray_directions().reshape(-1, 3)
    dirs = dirs_cam @ (state.R @ cam.mount_rotation).T
    depth = _march_rays(grid, state.p, dirs, cam.max_depth)
    return DepthImage(
        data=depth.reshape(cam.height, cam.width),
        valid=np.ones((cam.height, cam.width), dtype=bool),
        max_depth=cam.max_depth,
    )


def _march_rays(grid: VoxelGrid, origin: np.ndarray, dirs: np.ndarray, max_depth: float) -> np.ndarray:
    """Amanatides-Woo DDA for a batch of unit rays from a common origin.

    Returns range to the first occupied-voxel boundary per ray, saturated
    at max_depth. The working arrays are flat and updated in place under
    masks; this keeps per-iteration overhead low for thousands of rays.
    """
    n = dirs.shape[0]
    res = grid.resolution
    nx, ny, nz = grid.dims
    occ_flat = np.ascontiguousarray(grid.occupancy).reshape(-1)  # C order

    sv = np.floor((origin - grid.origin) / res).astype(np.int64)
    depth = np.full(n, max_depth)
    if occ_flat[(sv[0] * ny + sv[1]) * nz + sv[2]]:
        return np.zeros(n)

    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    with np.errstate(divide="ignore"):
        invx = np.where(np.abs(dx) > 1e-12, 1.0 / dx, np.inf)
        invy = np.where(np.abs(dy) > 1e-12, 1.0 / dy, np.inf)
        invz = np.where(np.abs(dz) > 1e-12, 1.0 / dz, np.inf)

    stepx = np.where(dx > 0, 1, -1).astype(np.int64)
    stepy = np.where(dy > 0, 1, -1).astype(np.int64)
    stepz = np.where(dz > 0, 1, -1).astype(np.int64)
    tdx, tdy, tdz = np.abs(res * invx), np.abs(res * invy), np.abs(res * invz)
    tmx = np.where(np.isfinite(invx), ((sv[0] + (stepx > 0)) * res + grid.origin[0] - origin[0]) * invx, np.inf)
    tmy = np.where(np.isfinite(invy), ((sv[1] + (stepy > 0)) * res + grid.origin[1] - origin[1]) * invy, np.inf)
    tmz = np.where(np.isfinite(invz), ((sv[2] + (stepz > 0)) * res + grid.origin[2] - origin[2]) * invz, np.inf)

    vx = np.full(n, sv[0])
    vy = np.full(n, sv[1])
    vz = np.full(n, sv[2])
    active = np.ones(n, dtype=bool)

    max_iters = int(np.ceil(max_depth / res * np.sqrt(3.0))) + 4
    for _ in range(max_iters):
        t_hit = np.minimum(np.minimum(tmx, tmy), tmz)
        active &= t_hit <= max_depth
        if not active.any():
            break
        mx = active & (tmx == t_hit)
        my = active & ~mx & (tmy == t_hit)
        mz = active & ~mx & ~my
        vx += stepx * mx
        vy += stepy * my
        vz += stepz * mz
        tmx += tdx * mx
        tmy += tdy * my
        tmz += tdz * mz

        active &= (vx >= 0) & (vx < nx) & (vy >= 0) & (vy < ny) & (vz >= 0) & (vz < nz)
        lin = (vx * ny + vy) * nz + vz
        hit = active & occ_flat[np.clip(lin, 0, occ_flat.size - 1)]
        if hit.any():
            depth[hit] = t_hit[hit]
            active &= ~hit
    return depth


def apply_dropout(
    img: DepthImage, rate: float, blob_count: int, rng: np.random.Generator
) -> DepthImage:
    """Invalidate pixels: independent Bernoulli(rate) dropout plus
    blob_count random rectangles of at most 10% of the image area each.
    Invalidated pixels saturate to max_depth with valid=False."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("dropout rate must lie in [0, 1]")
    h, w = img.data.shape
    kill = rng.random((h, w)) < rate
    area_cap = max(1, int(0.10 * h * w))
    for _ in range(blob_count):
        bw = int(rng.integers(1, max(2, w // 3)))
        bh_max = max(1, min(h, area_cap // bw))
        bh = int(rng.integers(1, bh_max + 1))
        u0 = int(rng.integers(0, w - bw + 1))
        v0 = int(rng.integers(0, h - bh + 1))
        kill[v0 : v0 + bh, u0 : u0 + bw] = True

    out = img.copy()
    out.data[kill] = img.max_depth
    out.valid[kill] = False
    return out


def inpaint(img: DepthImage, tol: float = 1e-3, max_sweeps: int = 500) -> DepthImage:
    """Fill invalid pixels by harmonic (Laplace) diffusion.

    Valid pixels are Dirichlet boundary and pass through unchanged; image
    borders replicate. Invalid pixels start at the mean of the valid ones,
    so every iterate (and the result) obeys the maximum principle. With no
    valid pixels at all, returns an all-max_depth image.
    """
    valid = img.valid
    if valid.all():
        out = img.copy()
        out.valid[:] = True
        return out
    if not valid.any():
        full = np.full_like(img.data, img.max_depth)
        return DepthImage(data=full, valid=np.ones_like(valid), max_depth=img.max_depth)

    data = img.data.copy()
    hole = ~valid

    # wavefront init: grow the known region inward by neighbor means, so the
    # Jacobi relaxation below starts near the harmonic solution; every value
    # written is a mean of in-range values, preserving the maximum principle
    known = valid.copy()
    data[hole] = 0.0
    while not known.all():
        kp = np.pad(known, 1)
        dp = np.pad(data * known, 1)
        counts = (
            kp[:-2, 1:-1].astype(int) + kp[2:, 1:-1] + kp[1:-1, :-2] + kp[1:-1, 2:]
        )
        sums = dp[:-2, 1:-1] + dp[2:, 1:-1] + dp[1:-1, :-2] + dp[1:-1, 2:]
        front = ~known & (counts > 0)
        if not front.any():
            break  # disconnected region; cannot happen on a 2D image
        data[front] = sums[front] / counts[front]
        known |= front

    for _ in range(max_sweeps):
        padded = np.pad(data, 1, mode="edge")
        neighbors = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        ) / 4.0
        delta = np.abs(neighbors[hole] - data[hole]).max()
        data[hole] = neighbors[hole]
        if delta < tol:
            break
    return DepthImage(data=data, valid=np.ones_like(valid), max_depth=img.max_depth)


def depth_to_points(
    img: DepthImage, state: QuadState, cam: CameraModel, stride: int = 4
) -> PointCloud:
    """Back-project every stride-th valid obstacle return to world frame.

    Pixels at (or numerically at) max_depth are non-returns and excluded;
    an empty cloud is a legal result.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = img.data.shape
    vs = np.arange(0, h, stride)
    us = np.arange(0, w, stride)
    sub_depth = img.data[np.ix_(vs, us)]
    sub_valid = img.valid[np.ix_(vs, us)]
    keep = sub_valid & (sub_depth < img.max_depth - 1e-6)
    if not keep.any():
        return PointCloud.empty()

    dirs = cam.ray_directions()[np.ix_(vs, us)]
    R_wc = state.R @ cam.mount_rotation
    d = sub_depth[keep][:, None]
    pts = state.p + (dirs[keep] * d) @ R_wc.T

    vv, uu = np.meshgrid(vs, us, indexing="ij")
    pix = (vv * w + uu)[keep]
    return PointCloud(points=pts, pixel_indices=pix)


def nearest_points(cloud: PointCloud, p, k: int) -> np.ndarray:
    """The k cloud points nearest to p, ascending; ties break on pixel index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cloud) == 0:
        return np.zeros((0, 3))
    d = np.linalg.norm(cloud.points - np.asarray(p, dtype=float), axis=1)
    order = np.lexsort((cloud.pixel_indices, d))
    return cloud.points[order[:k]]


def save_pgm(img: DepthImage, path) -> None:
    """Dump as 16-bit PGM in millimeters for eyeballing renders."""
    mm = np.clip(np.round(img.data * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.data.shape[1]} {img.data.shape[0]}\n65535\n".encode())
        fh.write(mm.tobytes())
