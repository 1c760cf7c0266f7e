"""Voxelized arena: procedural scene generation and collision queries.

The world is a dense boolean occupancy lattice over an axis-aligned box.
Scenes are generated either from random geometric primitives (boxes,
z-aligned cylinder pillars, ellipsoids) or from a thresholded 2D Perlin
noise field extruded over the full arena height. Generation is a pure
function of the scene spec: the same spec (same seed) always produces a
bit-identical grid.

All spatial quantities are in meters. Voxel indices are (ix, iy, iz) with
voxel centers at ``origin + (index + 0.5) * resolution``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Tuple

import numpy as np

DEFAULT_RESOLUTION = 0.25
CARVE_RADIUS = 1.0
PLACEMENT_RETRIES = 100

_HEADER_FMT = "<3dd3q"  # origin (3 f64), resolution (f64), dims (3 i64)
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class SceneGenerationError(RuntimeError):
    """Raised when a scene spec is too dense to satisfy spawn/goal carving."""


@dataclass(frozen=True)
class VoxelGrid:
    """Dense boolean occupancy over an axis-aligned arena.

    Attributes
    ----------
    origin : ndarray, shape (3,)
        World coordinates of the arena's min corner (m).
    resolution : float
        Voxel edge length (m), identical on all axes.
    dims : tuple of int
        Lattice size (nx, ny, nz).
    occupancy : ndarray of bool, shape dims
        True where the voxel is occupied. Treated as immutable after
        generation; safe to share across episode workers.
    """

    origin: np.ndarray
    resolution: float
    dims: Tuple[int, int, int]
    occupancy: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if self.occupancy.shape != tuple(self.dims):
            raise ValueError("occupancy shape does not match dims")

    @property
    def arena_size(self) -> np.ndarray:
        """Arena extent (m) per axis."""
        return np.asarray(self.dims, dtype=float) * self.resolution

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + self.arena_size

    def voxel_center(self, index) -> np.ndarray:
        """World position of a voxel center. Accepts (3,) or (n, 3) indices."""
        idx = np.asarray(index, dtype=float)
        return self.origin + (idx + 0.5) * self.resolution

    def contains(self, p) -> bool:
        """True iff p lies inside the arena box (min corner inclusive)."""
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p < self.max_corner))

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))


@dataclass
class SceneSpec:
    """Parameters for procedural scene generation.

    ``size_range`` maps a primitive class name ("box", "cylinder",
    "ellipsoid") to its (min, max) characteristic size in meters: box edge
    length, cylinder radius, ellipsoid semi-axis. Only listed classes are
    sampled. Cylinders are rendered as floor-to-ceiling pillars.

    ``spawn_region`` is an axis-aligned box (min corner, max corner) from
    which episode start positions are drawn; it and the goal are kept free
    by carving all occupancy within CARVE_RADIUS of them.

    ``fixed_boxes`` places deterministic axis-aligned boxes (center, size)
    before any random primitives; hand-built arenas like U-shaped traps
    are specified this way.
    """

    arena_size: Tuple[float, float, float]
    mode: str = "primitives"  # "primitives" | "perlin"
    obstacle_count: int = 0
    size_range: dict = field(default_factory=lambda: {"cylinder": (0.3, 0.8)})
    seed: int = 0
    goal: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    spawn_region: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = (
        (0.0, 0.0, 0.0),
        (0.0, 0.0, 0.0),
    )
    resolution: float = DEFAULT_RESOLUTION
    perlin_threshold: float = 0.25
    perlin_cell: float = 4.0  # gradient-lattice cell size (m)
    fixed_boxes: Tuple[Tuple[Tuple[float, float, float], Tuple[float, float, float]], ...] = ()

    def validate(self) -> None:
        size = np.asarray(self.arena_size, dtype=float)
        if np.any(size <= 0):
            raise ValueError(f"arena_size must be positive, got {self.arena_size}")
        if self.mode not in ("primitives", "perlin"):
            raise ValueError(f"unknown scene mode {self.mode!r}")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")
        goal = np.asarray(self.goal, dtype=float)
        if np.any(goal < 0) or np.any(goal > size):
            raise ValueError(f"goal {self.goal} outside arena {self.arena_size}")
        lo = np.asarray(self.spawn_region[0], dtype=float)
        hi = np.asarray(self.spawn_region[1], dtype=float)
        if np.any(lo > hi) or np.any(lo < 0) or np.any(hi > size):
            raise ValueError(f"spawn_region {self.spawn_region} outside arena")


def _axis_centers(n: int, resolution: float) -> np.ndarray:
    return (np.arange(n) + 0.5) * resolution


def _dist_to_box(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return float(np.linalg.norm(d))


class _Primitive:
    """One rasterizable obstacle; center/size in arena-local coordinates."""

    def __init__(self, kind: str, center: np.ndarray, size: np.ndarray):
        self.kind = kind
        self.center = center
        self.size = size  # box: full edges; cylinder: (r, r, h); ellipsoid: semi-axes

    def bounding_radius(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.size / 2.0))
        if self.kind == "cylinder":
            return float(np.hypot(self.size[0], self.size[2] / 2.0))
        return float(np.max(self.size))

    def mask(self, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Voxel-center-inside test over the full lattice (vectorized)."""
        dx = xs[:, None, None] - self.center[0]
        dy = ys[None, :, None] - self.center[1]
        dz = zs[None, None, :] - self.center[2]
        if self.kind == "box":
            hx, hy, hz = self.size / 2.0
            return (np.abs(dx) < hx) & (np.abs(dy) < hy) & (np.abs(dz) < hz)
        if self.kind == "cylinder":
            r, _, h = self.size
            return (dx * dx + dy * dy < r * r) & (np.abs(dz) < h / 2.0)
        sx, sy, sz = self.size
        return (dx / sx) ** 2 + (dy / sy) ** 2 + (dz / sz) ** 2 < 1.0


def _sample_primitive(rng: np.random.Generator, spec: SceneSpec, arena: np.ndarray) -> _Primitive:
    classes = sorted(spec.size_range.keys())
    kind = classes[int(rng.integers(len(classes)))]
    lo, hi = spec.size_range[kind]
    if kind == "box":
        size = rng.uniform(lo, hi, size=3)
        cz = rng.uniform(size[2] / 2.0, max(arena[2] - size[2] / 2.0, size[2] / 2.0))
    elif kind == "cylinder":
        r = rng.uniform(lo, hi)
        size = np.array([r, r, arena[2]])  # full-height pillar
        cz = arena[2] / 2.0
    else:
        size = rng.uniform(lo, hi, size=3)
        cz = rng.uniform(size[2], max(arena[2] - size[2], size[2]))
    cx = rng.uniform(0.0, arena[0])
    cy = rng.uniform(0.0, arena[1])
    return _Primitive(kind, np.array([cx, cy, cz]), size)


def _perlin2d(xs: np.ndarray, ys: np.ndarray, cell: float, rng: np.random.Generator) -> np.ndarray:
    """Classic 2D Perlin noise sampled on the (xs × ys) Cartesian grid.

    Gradient vectors live on an integer lattice of pitch ``cell``; output is
    in roughly [-0.7, 0.7] with zero mean.
    """
    gx = xs / cell
    gy = ys / cell
    nx = int(np.floor(gx.max())) + 2
    ny = int(np.floor(gy.max())) + 2
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(nx, ny))
    grad = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    ix = np.floor(gx).astype(int)
    iy = np.floor(gy).astype(int)
    fx = (gx - ix)[:, None]
    fy = (gy - iy)[None, :]

    def dot_corner(ox: int, oy: int) -> np.ndarray:
        g = grad[ix[:, None] + ox, iy[None, :] + oy]
        return g[..., 0] * (fx - ox) + g[..., 1] * (fy - oy)

    def fade(t: np.ndarray) -> np.ndarray:
        return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)

    u, v = fade(fx), fade(fy)
    n0 = dot_corner(0, 0) * (1 - u) + dot_corner(1, 0) * u
    n1 = dot_corner(0, 1) * (1 - u) + dot_corner(1, 1) * u
    return n0 * (1 - v) + n1 * v


def generate_scene(spec: SceneSpec) -> VoxelGrid:
    """Generate the occupancy grid for a scene spec.

    Deterministic: identical specs yield bit-identical grids. Primitives
    that cannot be placed clear of the goal/spawn protection zones after
    PLACEMENT_RETRIES re-samples raise SceneGenerationError (overdense
    spec). The goal sphere and spawn box are additionally carved free
    within CARVE_RADIUS as a final guarantee.
    """
    spec.validate()
    arena = np.asarray(spec.arena_size, dtype=float)
    res = spec.resolution
    dims = tuple(int(round(s / res)) for s in arena)
    xs = _axis_centers(dims[0], res)
    ys = _axis_centers(dims[1], res)
    zs = _axis_centers(dims[2], res)
    rng = np.random.default_rng(spec.seed)

    goal = np.asarray(spec.goal, dtype=float)
    spawn_lo = np.asarray(spec.spawn_region[0], dtype=float)
    spawn_hi = np.asarray(spec.spawn_region[1], dtype=float)

    occupancy = np.zeros(dims, dtype=bool)

    for center, size in spec.fixed_boxes:
        prim = _Primitive("box", np.asarray(center, dtype=float), np.asarray(size, dtype=float))
        occupancy |= prim.mask(xs, ys, zs)

    if spec.mode == "perlin":
        noise = _perlin2d(xs, ys, spec.perlin_cell, rng)
        occupancy[:] = (noise > spec.perlin_threshold)[:, :, None]
    else:
        for _ in range(spec.obstacle_count):
            placed = False
            for _ in range(PLACEMENT_RETRIES):
                prim = _sample_primitive(rng, spec, arena)
                margin = prim.bounding_radius() + CARVE_RADIUS
                # keep the primitive's bounding sphere clear of both
                # protection zones; cylinders are full-height so only the
                # horizontal clearance matters for them
                if prim.kind == "cylinder":
                    clear_goal = np.linalg.norm(prim.center[:2] - goal[:2]) > prim.size[0] + CARVE_RADIUS
                    clear_spawn = _dist_to_box(
                        np.array([prim.center[0], prim.center[1], 0.0]),
                        np.array([spawn_lo[0], spawn_lo[1], 0.0]),
                        np.array([spawn_hi[0], spawn_hi[1], 0.0]),
                    ) > prim.size[0] + CARVE_RADIUS
                else:
                    clear_goal = np.linalg.norm(prim.center - goal) > margin
                    clear_spawn = _dist_to_box(prim.center, spawn_lo, spawn_hi) > margin
                if clear_goal and clear_spawn:
                    occupancy |= prim.mask(xs, ys, zs)
                    placed = True
                    break
            if not placed:
                raise SceneGenerationError(
                    f"could not place obstacle clear of goal/spawn after "
                    f"{PLACEMENT_RETRIES} tries (seed {spec.seed}); reduce "
                    f"obstacle_count or sizes"
                )

    _carve_protected(occupancy, xs, ys, zs, goal, spawn_lo, spawn_hi)
    return VoxelGrid(
        origin=np.zeros(3),
        resolution=res,
        dims=dims,
        occupancy=occupancy,
    )


def _carve_protected(occupancy, xs, ys, zs, goal, spawn_lo, spawn_hi) -> None:
    dxg = xs[:, None, None] - goal[0]
    dyg = ys[None, :, None] - goal[1]
    dzg = zs[None, None, :] - goal[2]
    occupancy[dxg * dxg + dyg * dyg + dzg * dzg <= CARVE_RADIUS**2] = False

    ex = np.maximum(np.maximum(spawn_lo[0] - xs, 0.0), xs - spawn_hi[0])
    ey = np.maximum(np.maximum(spawn_lo[1] - ys, 0.0), ys - spawn_hi[1])
    ez = np.maximum(np.maximum(spawn_lo[2] - zs, 0.0), zs - spawn_hi[2])
    d2 = ex[:, None, None] ** 2 + ey[None, :, None] ** 2 + ez[None, None, :] ** 2
    occupancy[d2 <= CARVE_RADIUS**2] = False


def world_to_voxel(grid: VoxelGrid, p) -> Optional[Tuple[int, int, int]]:
    """Map a world point to its voxel index, or None when out of bounds.

    Floor semantics: a point on a voxel's min face belongs to that voxel.
    Total function; never wraps.
    """
    p = np.asarray(p, dtype=float)
    idx = np.floor((p - grid.origin) / grid.resolution).astype(int)
    if np.any(idx < 0) or np.any(idx >= np.asarray(grid.dims)):
        return None
    return (int(idx[0]), int(idx[1]), int(idx[2]))


def is_colliding(grid: VoxelGrid, p, robot_radius: float, esdf) -> bool:
    """Collision test for a spherical robot against the voxel world.

    True when the obstacle clearance at p is below robot_radius, or p is
    outside the arena in x/y, or below the floor / above the ceiling. The
    ESDF measures distance to occupied voxel *centers*, so half a voxel is
    subtracted to approximate distance to the obstacle surface.
    """
    p = np.asarray(p, dtype=float)
    lo, hi = grid.origin, grid.max_corner
    if p[0] < lo[0] or p[0] >= hi[0] or p[1] < lo[1] or p[1] >= hi[1]:
        return True
    if p[2] < lo[2] or p[2] > hi[2]:
        return True
    from .fields import interpolate  # lazy: fields depends on gridworld

    clearance = interpolate(esdf, p).value - grid.resolution / 2.0
    return bool(clearance < robot_radius)


def save_grid(grid: VoxelGrid, path) -> None:
    """Write the grid as a flat little-endian blob (header + occupancy bytes)."""
    with open(path, "wb") as fh:
        _write_header(fh, grid.origin, grid.resolution, grid.dims)
        fh.write(np.asfortranarray(grid.occupancy).astype(np.uint8).tobytes(order="F"))


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        origin, resolution, dims = _read_header(fh)
        body = np.frombuffer(fh.read(), dtype=np.uint8)
    n = dims[0] * dims[1] * dims[2]
    if body.size != n:
        raise ValueError(f"grid blob {path}: expected {n} voxels, got {body.size}")
    occupancy = body.astype(bool).reshape(dims, order="F")
    return VoxelGrid(origin=origin, resolution=resolution, dims=dims, occupancy=occupancy)


def _write_header(fh: BinaryIO, origin, resolution: float, dims) -> None:
    fh.write(struct.pack(_HEADER_FMT, *np.asarray(origin, dtype=float), float(resolution), *dims))


def _read_header(fh: BinaryIO):
    raw = fh.read(_HEADER_SIZE)
    if len(raw) != _HEADER_SIZE:
        raise ValueError("truncated blob header")
    vals = struct.unpack(_HEADER_FMT, raw)
    origin = np.array(vals[0:3])
    resolution = float(vals[3])
    dims = (int(vals[4]), int(vals[5]), int(vals[6]))
    return origin, resolution, dims
