# core/scene.py
"""Voxel volumes, score bins, grasp candidates and TSDF integration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from core.errors import InputError
from core.se3 import Pose

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 40
DEFAULT_EXTENT = 0.3          # metres covered by the grid along each axis
TRUNCATION_VOXELS = 4.0
VALIDITY_CORE_VOXELS = 1.0    # validity is 1 up to here
VALIDITY_FADE_VOXELS = 2.0    # then decays to 0 over this many voxels

LOW_EDGE = 15.0
HIGH_EDGE = 30.0


# ---------- Score bins ----------

class ScoreBin(IntEnum):
    LOW = 0
    MID = 1
    HIGH = 2

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(3)
        v[int(self)] = 1.0
        return v

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "ScoreBin":
        try:
            return cls[text.strip().upper()]
        except KeyError as e:
            raise InputError(f"unknown score bin {text!r} (expected low, mid or high)") from e

    @classmethod
    def from_one_hot(cls, v) -> "ScoreBin":
        v = np.asarray(v, dtype=float)
        if v.shape != (3,) or sorted(v.tolist()) != [0.0, 0.0, 1.0]:
            raise InputError(f"not a one-hot bin vector: {v.tolist()}")
        return cls(int(np.argmax(v)))


BIN_REPRESENTATIVE = {ScoreBin.LOW: 10.0, ScoreBin.MID: 20.0, ScoreBin.HIGH: 40.0}
FALLBACK_ORDER = (ScoreBin.HIGH, ScoreBin.MID, ScoreBin.LOW)


def score_to_bin(score: float) -> ScoreBin:
    """low: [0, 15) N, mid: [15, 30] N, high: (30, inf) N."""
    if not np.isfinite(score) or score < 0:
        raise InputError(f"gravity rejection score must be a non-negative number, got {score}")
    if score < LOW_EDGE:
        return ScoreBin.LOW
    if score <= HIGH_EDGE:
        return ScoreBin.MID
    return ScoreBin.HIGH


def bin_representative(b: ScoreBin) -> float:
    return BIN_REPRESENTATIVE[b]


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    pose: Pose
    score: float
    width: float
    object_id: int = 0
    bin: ScoreBin = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "bin", score_to_bin(self.score))
        if self.width <= 0:
            raise InputError("grasp width must be positive")


# ---------- Grids and volumes ----------

@dataclass(frozen=True, eq=False)
class GridSpec:
    resolution: int
    origin: np.ndarray      # world position of the grid's minimum corner
    voxel_size: float

    def __post_init__(self):
        if self.resolution < 2:
            raise InputError("grid resolution must be at least 2")
        if self.voxel_size <= 0:
            raise InputError("voxel size must be positive")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    @property
    def extent(self) -> float:
        return self.resolution * self.voxel_size

    def centers(self) -> np.ndarray:
        """(D, D, D, 3) voxel centres, indexed [x, y, z]."""
        ax = (np.arange(self.resolution) + 0.5) * self.voxel_size
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([X, Y, Z], axis=-1) + self.origin

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.resolution == other.resolution
            and np.allclose(self.origin, other.origin, atol=1e-12)
            and abs(self.voxel_size - other.voxel_size) <= 1e-12
        )


def grid_spec_for_region(
    center_xy: Sequence[float],
    extent: float = DEFAULT_EXTENT,
    resolution: int = DEFAULT_RESOLUTION,
    z_min: float = 0.0,
) -> GridSpec:
    """Cube of side ``extent`` standing on z = z_min, centred over ``center_xy``."""
    cx, cy = center_xy
    return GridSpec(resolution, (cx - extent / 2, cy - extent / 2, z_min), extent / resolution)


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    grid: GridSpec
    values: np.ndarray
    semantics: str = "tsdf"

    def __post_init__(self):
        D = self.grid.resolution
        v = np.asarray(self.values, dtype=float)
        if v.size != D**3:
            raise InputError(f"volume needs {D**3} values, got {v.size}")
        object.__setattr__(self, "values", v.reshape(D, D, D))

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size


@dataclass(frozen=True, eq=False)
class SceneVolumes:
    tsdf_full: VoxelVolume
    tsdf_object: VoxelVolume
    grasp_validity: VoxelVolume
    gravity_score: VoxelVolume

    def __post_init__(self):
        grid = self.tsdf_full.grid
        for v in (self.tsdf_object, self.grasp_validity, self.gravity_score):
            if not v.grid.same_as(grid):
                raise InputError("scene volumes must share one grid")
        val = self.grasp_validity.values
        if val.min(initial=0.0) < 0.0 or val.max(initial=0.0) > 1.0:
            raise InputError("grasp validity values must lie in [0, 1]")

    @property
    def grid(self) -> GridSpec:
        return self.tsdf_full.grid


# ---------- Lookup ----------

def lookup_trilinear(volume: VoxelVolume, point) -> tuple[float, bool]:
    """Trilinear value at ``point`` and whether the point lies outside the grid."""
    g = volume.grid
    D = g.resolution
    p = np.asarray(point, dtype=float)
    rel = (p - g.origin) / g.voxel_size
    out_of_bounds = bool(np.any(rel < 0.0) or np.any(rel > D))
    u = np.clip(rel - 0.5, 0.0, D - 1.0)
    i0 = np.minimum(np.floor(u).astype(int), D - 2)
    f = u - i0
    V = volume.values
    value = 0.0
    for dx in (0, 1):
        wx = f[0] if dx else 1.0 - f[0]
        for dy in (0, 1):
            wy = f[1] if dy else 1.0 - f[1]
            for dz in (0, 1):
                wz = f[2] if dz else 1.0 - f[2]
                value += wx * wy * wz * V[i0[0] + dx, i0[1] + dy, i0[2] + dz]
    return float(value), out_of_bounds


# ---------- TSDF ----------

@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; pixel (row r, col c) has its centre at u = c, v = r."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose   # world_from_camera, camera looks along +z

    def project(self, points_world: np.ndarray):
        """Pixel coordinates (u, v) and camera depth z for world points."""
        pc = (np.asarray(points_world, dtype=float) - self.pose.translation) @ self.pose.rotation
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) world directions scaled so the ray parameter equals camera depth."""
        cols, rows = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack(
            [(cols - self.cx) / self.fx, (rows - self.cy) / self.fy, np.ones_like(cols, dtype=float)],
            axis=-1,
        )
        return d @ self.pose.rotation.T


class TsdfResult(NamedTuple):
    volume: VoxelVolume
    all_invalid: bool


def depth_to_tsdf(
    depth: np.ndarray,
    camera: Camera,
    grid: GridSpec,
    mask: Optional[np.ndarray] = None,
    truncation: Optional[float] = None,
    semantics: str = "tsdf_full",
) -> TsdfResult:
    """
    Projective TSDF in units of the truncation distance, clamped to [-1, 1].
    Voxels that project outside the image or onto invalid (or masked-out)
    depth keep +1.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (camera.height, camera.width):
        raise InputError(f"depth image shape {depth.shape} does not match camera {camera.height}x{camera.width}")
    trunc = truncation if truncation is not None else TRUNCATION_VOXELS * grid.voxel_size
    valid = np.isfinite(depth) & (depth > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)

    D = grid.resolution
    out = np.ones((D, D, D))
    if not np.any(valid):
        log.warning("depth image has no valid pixels; TSDF is all +1")
        return TsdfResult(VoxelVolume(grid, out, semantics), True)

    u, v, z = camera.project(grid.centers())
    with np.errstate(invalid="ignore"):
        cols = np.rint(u)
        rows = np.rint(v)
    inside = (z > 0) & (cols >= 0) & (cols < camera.width) & (rows >= 0) & (rows < camera.height)
    ci = np.where(inside, cols, 0).astype(int)
    ri = np.where(inside, rows, 0).astype(int)
    seen = inside & valid[ri, ci]
    sdf = depth[ri, ci] - z
    out[seen] = np.clip(sdf[seen] / trunc, -1.0, 1.0)
    return TsdfResult(VoxelVolume(grid, out, semantics), False)


# ---------- Decoder volumes ----------

def validity_falloff(dist_voxels: np.ndarray) -> np.ndarray:
    r = np.asarray(dist_voxels, dtype=float)
    t = np.clip((r - VALIDITY_CORE_VOXELS) / VALIDITY_FADE_VOXELS, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def bake_decoder_volumes(grasps: Sequence[GraspCandidate], grid: GridSpec) -> tuple[VoxelVolume, VoxelVolume]:
    """Validity (1 near a grasp TCP, fading to 0) and max nearby gravity score."""
    D = grid.resolution
    validity = np.zeros((D, D, D))
    score = np.zeros((D, D, D))
    reach = int(np.ceil(VALIDITY_CORE_VOXELS + VALIDITY_FADE_VOXELS)) + 1
    for g in grasps:
        rel = (g.pose.translation - grid.origin) / grid.voxel_size - 0.5
        lo = np.maximum(np.floor(rel).astype(int) - reach, 0)
        hi = np.minimum(np.floor(rel).astype(int) + reach + 1, D - 1)
        if np.any(hi < lo):
            continue
        idx = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
        I, J, K = np.meshgrid(*idx, indexing="ij")
        dist = np.sqrt((I - rel[0]) ** 2 + (J - rel[1]) ** 2 + (K - rel[2]) ** 2)
        w = validity_falloff(dist)
        near = w > 0
        sub_v = validity[I, J, K]
        sub_s = score[I, J, K]
        validity[I, J, K] = np.maximum(sub_v, w)
        score[I, J, K] = np.where(near, np.maximum(sub_s, g.score), sub_s)
    return (
        VoxelVolume(grid, validity, "grasp_validity"),
        VoxelVolume(grid, score, "gravity_score"),
    )
