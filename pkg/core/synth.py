# core/synth.py
"""
Synthetic tabletop scenes: primitive objects, a top-down depth camera,
ray-cast rendering, rejection-sampled clutter and analytic antipodal grasps
with a distance-to-centroid score.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from core.collision import CollisionBody, box_body, cloud_body, sphere_distances, table_body
from core.errors import InputError, SceneGenerationError
from core.kinematics import SphereGroup
from core.scene import Camera, GraspCandidate, GridSpec, grid_spec_for_region
from core.se3 import Pose, exp_so3

log = logging.getLogger(__name__)

MAX_HAND_WIDTH = 0.085
MIN_HAND_WIDTH = 0.01
GRASP_DEPTH = 0.02
GRASP_CLEARANCE = 0.02     # min hand distance to non-target geometry for a kept grasp [m]
MAX_SCORE = 45.0
SCORE_FALLOFF = 0.1          # metres of TCP-to-centroid distance where the score reaches 0
SURFACE_SPACING = 0.01
PLACEMENT_GAP = 0.01
MAX_PLACEMENT_RETRIES = 200
OBJECT_KINDS = ("box", "cylinder")


# ---------- Objects ----------

@dataclass(frozen=True, eq=False)
class SceneObject:
    """Upright primitive. Boxes use half_extents; cylinders (radius, radius, half_height)."""

    id: int
    kind: str
    pose: Pose
    half_extents: np.ndarray

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise InputError(f"object {self.id}: unknown kind {self.kind!r}")
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(h <= 0):
            raise InputError(f"object {self.id}: extents must be positive")
        object.__setattr__(self, "half_extents", h)

    @property
    def centroid(self) -> np.ndarray:
        return self.pose.translation

    @property
    def radius(self) -> float:
        return float(self.half_extents[0])

    @property
    def half_height(self) -> float:
        return float(self.half_extents[2])

    @property
    def footprint_radius(self) -> float:
        if self.kind == "cylinder":
            return self.radius
        return float(np.hypot(*self.half_extents[:2]))

    def local_surface_points(self, spacing: float = SURFACE_SPACING) -> np.ndarray:
        h = self.half_extents
        if self.kind == "box":
            pts = []
            for axis in range(3):
                a, b = [k for k in range(3) if k != axis]
                ua = np.linspace(-h[a], h[a], max(2, int(np.ceil(2 * h[a] / spacing)) + 1))
                ub = np.linspace(-h[b], h[b], max(2, int(np.ceil(2 * h[b] / spacing)) + 1))
                A, B = np.meshgrid(ua, ub, indexing="ij")
                for sign in (-1.0, 1.0):
                    face = np.zeros((A.size, 3))
                    face[:, a] = A.ravel()
                    face[:, b] = B.ravel()
                    face[:, axis] = sign * h[axis]
                    pts.append(face)
            return np.unique(np.round(np.vstack(pts), 12), axis=0)
        r, hh = self.radius, self.half_height
        n_ring = max(8, int(np.ceil(2 * np.pi * r / spacing)))
        ang = np.linspace(0, 2 * np.pi, n_ring, endpoint=False)
        zs = np.linspace(-hh, hh, max(2, int(np.ceil(2 * hh / spacing)) + 1))
        A, Z = np.meshgrid(ang, zs, indexing="ij")
        side = np.column_stack([r * np.cos(A).ravel(), r * np.sin(A).ravel(), Z.ravel()])
        caps = []
        for rr in np.arange(spacing, r, spacing):
            m = max(6, int(np.ceil(2 * np.pi * rr / spacing)))
            t = np.linspace(0, 2 * np.pi, m, endpoint=False)
            caps.append(np.column_stack([rr * np.cos(t), rr * np.sin(t), np.zeros(m)]))
        disk = np.vstack([np.zeros((1, 3))] + caps)
        top = disk + [0.0, 0.0, hh]
        bottom = disk - [0.0, 0.0, hh]
        return np.vstack([side, top, bottom])

    def surface_points(self, spacing: float = SURFACE_SPACING) -> np.ndarray:
        return self.pose.apply(self.local_surface_points(spacing))

    def body(self) -> CollisionBody:
        name = f"object{self.id}"
        if self.kind == "box":
            return box_body(name, self.pose, self.half_extents)
        return cloud_body(name, self.surface_points())

    def contains(self, points_world: np.ndarray) -> np.ndarray:
        local = self.pose.inverse().apply(points_world)
        if self.kind == "box":
            return np.all(np.abs(local) <= self.half_extents + 1e-12, axis=-1)
        radial = np.hypot(local[..., 0], local[..., 1])
        return (radial <= self.radius + 1e-12) & (np.abs(local[..., 2]) <= self.half_height + 1e-12)


def upright_pose(x: float, y: float, half_height: float, yaw: float = 0.0, base_z: float = 0.0) -> Pose:
    return Pose(exp_so3(np.array([0.0, 0.0, yaw])), (x, y, base_z + half_height))


# ---------- Scene ----------

def top_down_camera(center_xy: Sequence[float], height: float = 0.8, size: int = 128, focal: float = 160.0) -> Camera:
    R_wc = np.diag([1.0, -1.0, -1.0])
    c = (size - 1) / 2.0
    return Camera(focal, focal, c, c, size, size, Pose(R_wc, (center_xy[0], center_xy[1], height)))


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[SceneObject, ...]
    region_center: np.ndarray
    region_size: float = 0.3
    fixtures: tuple[CollisionBody, ...] = ()
    table: CollisionBody = field(default_factory=table_body)
    seed: Optional[int] = None
    camera: Optional[Camera] = None

    def __post_init__(self):
        object.__setattr__(self, "region_center", np.asarray(self.region_center, dtype=float).reshape(2))
        if self.camera is None:
            object.__setattr__(self, "camera", top_down_camera(self.region_center))

    def object(self, object_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise InputError(f"no object with id {object_id}")

    def without(self, object_id: int) -> "Scene":
        return replace(self, objects=tuple(o for o in self.objects if o.id != object_id))

    def bodies(self, exclude: Iterable[int] = ()) -> list[CollisionBody]:
        skip = set(exclude)
        return [self.table, *self.fixtures] + [o.body() for o in self.objects if o.id not in skip]

    def grid(self, resolution: int = 40) -> GridSpec:
        return grid_spec_for_region(self.region_center, self.region_size, resolution)

    def render(self) -> tuple[np.ndarray, np.ndarray]:
        boxes = [f for f in self.fixtures if f.kind == "box"]
        return render_depth(self.camera, self.objects, boxes)


# ---------- Ray casting ----------

def _ray_box(o, d, pose: Pose, h) -> np.ndarray:
    ol = (o - pose.translation) @ pose.rotation
    dl = d @ pose.rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - ol) / dl
        t2 = (h - ol) / dl
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    return np.where(hit, np.where(tmin > 0, tmin, tmax), np.inf)


def _ray_cylinder(o, d, pose: Pose, r: float, hh: float) -> np.ndarray:
    ol = (o - pose.translation) @ pose.rotation
    dl = d @ pose.rotation
    best = np.full(dl.shape[:-1], np.inf)
    a = dl[..., 0] ** 2 + dl[..., 1] ** 2
    b = 2 * (ol[..., 0] * dl[..., 0] + ol[..., 1] * dl[..., 1])
    c = ol[..., 0] ** 2 + ol[..., 1] ** 2 - r**2
    disc = b**2 - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
        z_side = ol[..., 2] + t_side * dl[..., 2]
        ok = (disc >= 0) & (a > 1e-15) & (t_side > 0) & (np.abs(z_side) <= hh)
        best = np.where(ok, np.minimum(best, t_side), best)
        for cap in (-hh, hh):
            t_cap = (cap - ol[..., 2]) / dl[..., 2]
            x = ol[..., 0] + t_cap * dl[..., 0]
            y = ol[..., 1] + t_cap * dl[..., 1]
            ok = np.isfinite(t_cap) & (t_cap > 0) & (x**2 + y**2 <= r**2)
            best = np.where(ok, np.minimum(best, t_cap), best)
    return best


def render_depth(
    camera: Camera,
    objects: Sequence[SceneObject],
    fixtures: Sequence[CollisionBody] = (),
    table_height: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Depth image (camera z, inf where nothing is hit) and per-pixel object ids (-1 otherwise)."""
    d = camera.ray_directions()
    o = np.broadcast_to(camera.pose.translation, d.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = (table_height - o[..., 2]) / d[..., 2]
    depth = np.where(np.isfinite(t_table) & (t_table > 0), t_table, np.inf)
    labels = np.full(depth.shape, -1, dtype=int)
    for f in fixtures:
        t = _ray_box(o, d, f.pose, f.half_extents)
        closer = t < depth
        depth = np.where(closer, t, depth)
    for obj in objects:
        if obj.kind == "box":
            t = _ray_box(o, d, obj.pose, obj.half_extents)
        else:
            t = _ray_cylinder(o, d, obj.pose, obj.radius, obj.half_height)
        closer = t < depth
        depth = np.where(closer, t, depth)
        labels = np.where(closer, obj.id, labels)
    return depth, labels


# ---------- Scene sampling ----------

@dataclass(frozen=True)
class SceneSpec:
    count: int
    region_center: tuple[float, float]
    region_size: float = 0.3
    kinds: tuple[str, ...] = OBJECT_KINDS
    box_side: tuple[float, float] = (0.04, 0.065)
    height: tuple[float, float] = (0.06, 0.12)
    cylinder_radius: tuple[float, float] = (0.02, 0.035)


def _sample_object(rng: np.random.Generator, spec: SceneSpec, object_id: int) -> SceneObject:
    kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
    hh = rng.uniform(*spec.height) / 2
    yaw = rng.uniform(-np.pi, np.pi)
    if kind == "box":
        h = np.array([rng.uniform(*spec.box_side) / 2, rng.uniform(*spec.box_side) / 2, hh])
    else:
        r = rng.uniform(*spec.cylinder_radius)
        h = np.array([r, r, hh])
    return SceneObject(object_id, kind, upright_pose(0.0, 0.0, hh, yaw), h)


def synthesize_scene(
    spec: SceneSpec,
    seed: int,
    fixtures: Sequence[CollisionBody] = (),
) -> Scene:
    """Rejection-sample ``spec.count`` upright objects inside the square region."""
    if not 1 <= spec.count <= 5:
        raise InputError("scenes hold between 1 and 5 objects")
    rng = np.random.default_rng(seed)
    half = spec.region_size / 2
    cx, cy = spec.region_center
    placed: list[SceneObject] = []
    for object_id in range(spec.count):
        for attempt in range(MAX_PLACEMENT_RETRIES):
            obj = _sample_object(rng, spec, object_id)
            reach = half - obj.footprint_radius
            if reach <= 0:
                continue
            x = cx + rng.uniform(-reach, reach)
            y = cy + rng.uniform(-reach, reach)
            clear = all(
                np.hypot(x - o.centroid[0], y - o.centroid[1])
                >= obj.footprint_radius + o.footprint_radius + PLACEMENT_GAP
                for o in placed
            )
            if clear:
                R = obj.pose.rotation
                placed.append(replace(obj, pose=Pose(R, (x, y, obj.half_height))))
                break
        else:
            raise SceneGenerationError(
                f"could not place object {object_id} after {MAX_PLACEMENT_RETRIES} tries "
                f"({len(placed)} placed in a {spec.region_size} m region)"
            )
    log.debug("scene seed=%d: %d objects", seed, len(placed))
    return Scene(tuple(placed), (cx, cy), spec.region_size, tuple(fixtures), seed=seed)


def blocked_high_bin_scene(center_xy: Sequence[float] = (0.5, 0.0), gap: float = 0.02, fixtures=()) -> Scene:
    """
    A tall 5 cm box fenced on four sides by lower boxes. Its power (side)
    grasps collide with the fence; only top precision grasps, which score in
    the mid bin, stay free.
    """
    cx, cy = center_xy
    tall = SceneObject(0, "box", upright_pose(cx, cy, 0.07), (0.025, 0.025, 0.07))
    fence = []
    side = 0.025 + gap + 0.025
    for k, (dx, dy) in enumerate([(side, 0), (-side, 0), (0, side), (0, -side)], start=1):
        fence.append(SceneObject(k, "box", upright_pose(cx + dx, cy + dy, 0.04), (0.025, 0.025, 0.04)))
    return Scene((tall, *fence), (cx, cy), 0.3, tuple(fixtures))


# ---------- Fixtures ----------

RACK_HALF_EXTENTS = (0.04, 0.04, 0.025)
WALL_THICKNESS = 0.02
WALL_LENGTH = 0.2
WALL_HEIGHT = 0.3


def rack_fixtures(
    center_xy: Sequence[float],
    half_extents: Sequence[float] = RACK_HALF_EXTENTS,
    wall_gap: Optional[float] = None,
) -> list[CollisionBody]:
    """Placement rack standing on the table, optionally flanked along x by two walls ``wall_gap`` apart."""
    x, y = center_xy
    h = np.asarray(half_extents, dtype=float)
    out = [box_body("rack", Pose.from_translation((x, y, h[2])), h)]
    if wall_gap is not None:
        if wall_gap <= 0:
            raise InputError("wall gap must be positive")
        off = wall_gap / 2 + WALL_THICKNESS / 2
        for k, s in enumerate((-1.0, 1.0)):
            out.append(
                box_body(
                    f"wall{k}",
                    Pose.from_translation((x + s * off, y, WALL_HEIGHT / 2)),
                    (WALL_THICKNESS / 2, WALL_LENGTH / 2, WALL_HEIGHT / 2),
                )
            )
    return out


# ---------- Grasps ----------

def grasp_score(tcp: np.ndarray, centroid: np.ndarray) -> float:
    d = float(np.linalg.norm(np.asarray(tcp) - np.asarray(centroid)))
    return MAX_SCORE * max(0.0, 1.0 - d / SCORE_FALLOFF)


def _frame(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    y = y / np.linalg.norm(y)
    z = z / np.linalg.norm(z)
    return np.column_stack([np.cross(y, z), y, z])


def _box_grasps(obj: SceneObject, max_width: float):
    R, c, h = obj.pose.rotation, obj.centroid, obj.half_extents
    for k in range(3):
        width = 2 * h[k]
        if not MIN_HAND_WIDTH <= width <= max_width:
            continue
        for m in (a for a in range(3) if a != k):
            l = 3 - k - m
            for s in (1.0, -1.0):
                approach = -s * R[:, m]
                if approach[2] > 0.2:      # from below
                    continue
                depth = min(GRASP_DEPTH, h[m])
                for t in (-0.5, 0.0, 0.5):
                    offset = t * max(h[l] - 0.01, 0.0)
                    tcp = c + s * (h[m] - depth) * R[:, m] + offset * R[:, l]
                    for sign in (1.0, -1.0):
                        yield Pose(_frame(sign * R[:, k], approach), tcp), width


def _cylinder_grasps(obj: SceneObject, max_width: float):
    width = 2 * obj.radius
    if not MIN_HAND_WIDTH <= width <= max_width:
        return
    R, c = obj.pose.rotation, obj.centroid
    axis = R[:, 2]
    hh = obj.half_height
    for phi in np.arange(12) * np.pi / 6:
        y = R @ np.array([np.cos(phi), np.sin(phi), 0.0])
        yield Pose(_frame(y, -axis), c + (hh - min(GRASP_DEPTH, hh)) * axis), width
    for phi in np.arange(8) * np.pi / 4:
        radial = R @ np.array([np.cos(phi), np.sin(phi), 0.0])
        tangent = np.cross(axis, radial)
        for t in (-0.5, 0.0, 0.5):
            tcp = c + t * max(hh - 0.01, 0.0) * axis
            yield Pose(_frame(tangent, -radial), tcp), width


def hand_clearance(pose: Pose, hand: Sequence[SphereGroup], bodies: Sequence[CollisionBody]) -> float:
    best = float("inf")
    for g in hand:
        centers = pose.apply(g.centers)
        for b in bodies:
            best = min(best, float(np.min(sphere_distances(b, centers, g.radii)[0])))
    return best


def synthesize_grasps(
    obj: SceneObject,
    others: Sequence[CollisionBody],
    hand: Sequence[SphereGroup],
    clearance: float = GRASP_CLEARANCE,
    max_width: float = MAX_HAND_WIDTH,
) -> list[GraspCandidate]:
    """
    Antipodal parallel-jaw grasps on ``obj``. Grasps whose hand comes closer
    than ``clearance`` to any body in ``others`` (table, fixtures, other
    objects) or penetrates the object itself are dropped.
    """
    raw = _box_grasps(obj, max_width) if obj.kind == "box" else _cylinder_grasps(obj, max_width)
    own = [obj.body()]
    out = []
    for pose, width in raw:
        if hand and hand_clearance(pose, hand, others) < clearance:
            continue
        if hand and hand_clearance(pose, hand, own) < 0.0:
            continue
        out.append(GraspCandidate(pose, grasp_score(pose.translation, obj.centroid), width, obj.id))
    log.debug("object %d (%s): %d grasps", obj.id, obj.kind, len(out))
    return out


def closing_contacts(obj: SceneObject, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """
    Where the two fingers touch ``obj`` when closing along the hand y axis
    from the TCP: contact points (2, 3) and outward surface normals (2, 3).
    """
    y = pose.rotation[:, 1]
    tcp = pose.translation
    pts, normals = [], []
    for sign in (1.0, -1.0):
        start = tcp + sign * y * (MAX_HAND_WIDTH + 0.05)
        d = -sign * y
        o = start[None]
        if obj.kind == "box":
            t = _ray_box(o, d[None], obj.pose, obj.half_extents)[0]
        else:
            t = _ray_cylinder(o, d[None], obj.pose, obj.radius, obj.half_height)[0]
        p = start + t * d
        local = obj.pose.inverse().apply(p)
        if obj.kind == "box":
            k = int(np.argmax(np.abs(local) / obj.half_extents))
            n_local = np.zeros(3)
            n_local[k] = np.sign(local[k])
        else:
            n_local = np.array([local[0], local[1], 0.0])
            n_local /= np.linalg.norm(n_local)
        pts.append(p)
        normals.append(obj.pose.rotation @ n_local)
    return np.array(pts), np.array(normals)
