# core/fileio.py
"""
On-disk formats.

Binary payloads (volumes, point clouds, binary trajectories) share one layout:
ASCII header lines ``key value...`` ending with ``end_header``, then
little-endian float32 values (float64 for binary trajectories). Text
trajectories are a commented header followed by a CSV table. Structured
files (grasps, scenes, environments) are JSON with every float kept at 17 significant digits.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from core.collision import CollisionBody
from core.diffik import PlacementTarget
from core.errors import InputError
from core.guidance import encode_message
from core.scene import GraspCandidate, GridSpec, SceneVolumes, VoxelVolume
from core.se3 import Pose
from core.synth import Scene, SceneObject
from core.trajectory import JointTrajectory, Phase, PickPlaceSolution, WaypointSchedule, Waypoints

log = logging.getLogger(__name__)

VOLUME_MAGIC = "pickplace-volume v1"
CLOUD_MAGIC = "pickplace-cloud v1"
TRAJECTORY_MAGIC = "pickplace-trajectory v1"
VOLUME_NAMES = ("tsdf_full", "tsdf_object", "grasp_validity", "gravity_score")


# ---------- Header + binary payload ----------

def _write_binary(path: Path, magic: str, header: dict[str, str], values: np.ndarray, dtype: str = "<f4") -> None:
    lines = [magic] + [f"{k} {v}" for k, v in header.items()] + ["end_header"]
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(values, dtype=dtype).tobytes())


def _read_binary(path: Path, magic: str, dtype: str = "<f4") -> tuple[dict[str, str], np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    header: dict[str, str] = {}
    pos = 0
    first = True
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise InputError(f"{path}: truncated header")
        line = data[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if first:
            if line != magic:
                raise InputError(f"{path}: expected {magic!r} header, got {line!r}")
            first = False
            continue
        if line == "end_header":
            break
        key, _, value = line.partition(" ")
        header[key] = value
    values = np.frombuffer(data[pos:], dtype=dtype).astype(float)
    return header, values


# ---------- Volumes ----------

def write_volume(volume: VoxelVolume, path: str | Path) -> None:
    g = volume.grid
    header = {
        "resolution": str(g.resolution),
        "origin": " ".join(format(v, ".17g") for v in g.origin),
        "voxel_size": format(g.voxel_size, ".17g"),
        "semantics": volume.semantics,
        "order": "xyz-z-fastest",
    }
    _write_binary(Path(path), VOLUME_MAGIC, header, volume.values.ravel(order="C"))


def read_volume(path: str | Path) -> VoxelVolume:
    header, values = _read_binary(Path(path), VOLUME_MAGIC)
    try:
        grid = GridSpec(
            int(header["resolution"]),
            [float(v) for v in header["origin"].split()],
            float(header["voxel_size"]),
        )
    except (KeyError, ValueError) as e:
        raise InputError(f"{path}: bad volume header ({e})") from e
    return VoxelVolume(grid, values, header.get("semantics", "unknown"))


def write_scene_volumes(volumes: SceneVolumes, directory: str | Path) -> dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in VOLUME_NAMES:
        p = directory / f"{name}.vol"
        write_volume(getattr(volumes, name), p)
        paths[name] = str(p)
    (directory / "volumes.json").write_text(json.dumps({"format_version": 1, "files": paths}, indent=2))
    return paths


def read_scene_volumes(directory: str | Path) -> SceneVolumes:
    directory = Path(directory)
    return SceneVolumes(**{name: read_volume(directory / f"{name}.vol") for name in VOLUME_NAMES})


def volume_paths(directory: str | Path) -> dict[str, str]:
    directory = Path(directory)
    return {name: str(directory / f"{name}.vol") for name in VOLUME_NAMES}


# ---------- Point clouds ----------

def write_cloud(points: np.ndarray, path: str | Path, frame: str = "world") -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    _write_binary(Path(path), CLOUD_MAGIC, {"count": str(len(pts)), "frame": frame}, pts.ravel())


def read_cloud(path: str | Path) -> np.ndarray:
    header, values = _read_binary(Path(path), CLOUD_MAGIC)
    count = int(header.get("count", -1))
    if count < 0 or values.size != 3 * count:
        raise InputError(f"{path}: point count {count} does not match payload ({values.size} floats)")
    return values.reshape(count, 3)


# ---------- Poses ----------

def pose_to_json(pose: Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def pose_from_json(doc: dict) -> Pose:
    try:
        return Pose(np.asarray(doc["rotation"], dtype=float), np.asarray(doc["translation"], dtype=float))
    except (KeyError, ValueError) as e:
        raise InputError(f"bad pose record: {e}") from e


def _dump(doc: dict, path: str | Path) -> None:
    Path(path).write_text(encode_message(doc) + "\n")


def _load(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from e


# ---------- Grasps ----------

def write_grasps(grasps: Sequence[GraspCandidate], path: str | Path) -> None:
    _dump(
        {
            "format_version": 1,
            "grasps": [
                {"pose": pose_to_json(g.pose), "score": g.score, "width": g.width, "object_id": g.object_id}
                for g in grasps
            ],
        },
        path,
    )


def read_grasps(path: str | Path) -> list[GraspCandidate]:
    doc = _load(path)
    try:
        return [
            GraspCandidate(pose_from_json(g["pose"]), float(g["score"]), float(g["width"]), int(g.get("object_id", 0)))
            for g in doc["grasps"]
        ]
    except (KeyError, TypeError) as e:
        raise InputError(f"{path}: bad grasp record ({e})") from e


# ---------- Environments ----------

def body_to_json(body: CollisionBody, cloud_dir: Optional[Path] = None) -> dict:
    doc = {"name": body.name, "kind": body.kind, "exclude_links": sorted(body.exclude_links)}
    if body.kind == "point-cloud":
        if cloud_dir is None:
            doc["points"] = body.points.tolist()
        else:
            ref = cloud_dir / f"{body.name}.cloud"
            write_cloud(body.points, ref)
            doc["cloud"] = ref.name
    else:
        doc["pose"] = pose_to_json(body.pose)
        if body.kind in ("sphere", "capsule"):
            doc["radius"] = body.radius
        if body.kind == "capsule":
            doc["half_length"] = body.half_length
        if body.kind == "box":
            doc["half_extents"] = body.half_extents.tolist()
    return doc


def body_from_json(doc: dict, base_dir: Optional[Path] = None) -> CollisionBody:
    try:
        kind = doc["kind"]
        kwargs = {"exclude_links": frozenset(doc.get("exclude_links", []))}
        if kind == "point-cloud":
            if "cloud" in doc:
                kwargs["points"] = read_cloud((base_dir or Path(".")) / doc["cloud"])
            else:
                kwargs["points"] = np.asarray(doc["points"], dtype=float)
        else:
            kwargs["pose"] = pose_from_json(doc["pose"])
            kwargs["radius"] = float(doc.get("radius", 0.0))
            kwargs["half_length"] = float(doc.get("half_length", 0.0))
            if "half_extents" in doc:
                kwargs["half_extents"] = np.asarray(doc["half_extents"], dtype=float)
        return CollisionBody(doc["name"], kind, **kwargs)
    except KeyError as e:
        raise InputError(f"environment body missing field {e}") from e


def write_environment(bodies: Sequence[CollisionBody], path: str | Path) -> None:
    path = Path(path)
    _dump({"format_version": 1, "bodies": [body_to_json(b, path.parent) for b in bodies]}, path)


def read_environment(path: str | Path) -> list[CollisionBody]:
    path = Path(path)
    doc = _load(path)
    return [body_from_json(b, path.parent) for b in doc.get("bodies", [])]


# ---------- Scenes ----------

def scene_to_json(scene: Scene, extra: Optional[dict] = None) -> dict:
    doc = {
        "format_version": 1,
        "seed": scene.seed,
        "region_center": scene.region_center.tolist(),
        "region_size": scene.region_size,
        "objects": [
            {"id": o.id, "kind": o.kind, "pose": pose_to_json(o.pose), "half_extents": o.half_extents.tolist()}
            for o in scene.objects
        ],
        "fixtures": [body_to_json(b) for b in scene.fixtures],
    }
    doc.update(extra or {})
    return doc


def scene_from_json(doc: dict) -> Scene:
    try:
        objects = tuple(
            SceneObject(int(o["id"]), o["kind"], pose_from_json(o["pose"]), np.asarray(o["half_extents"], dtype=float))
            for o in doc["objects"]
        )
        fixtures = tuple(body_from_json(b) for b in doc.get("fixtures", []))
        return Scene(objects, doc["region_center"], float(doc.get("region_size", 0.3)), fixtures, seed=doc.get("seed"))
    except (KeyError, TypeError) as e:
        raise InputError(f"bad scene manifest: {e}") from e


def write_scene(scene: Scene, path: str | Path, extra: Optional[dict] = None) -> None:
    _dump(scene_to_json(scene, extra), path)


def read_scene(path: str | Path) -> tuple[Scene, dict]:
    doc = _load(path)
    if doc.get("format_version") != 1:
        raise InputError(f"{path}: unsupported scene format_version {doc.get('format_version')!r}")
    return scene_from_json(doc), doc


# ---------- Placement targets ----------

def placement_to_json(target: PlacementTarget) -> dict:
    return {
        "poses": [pose_to_json(p) for p in target.poses],
        "free_yaw": target.free_yaw,
        "region": None if target.region is None else target.region.tolist(),
        "weights": target.weights.tolist(),
        "support": target.support,
    }


def placement_from_json(doc: dict) -> PlacementTarget:
    try:
        return PlacementTarget(
            tuple(pose_from_json(p) for p in doc["poses"]),
            bool(doc.get("free_yaw", False)),
            doc.get("region"),
            doc.get("weights"),
            doc.get("support"),
        )
    except (KeyError, TypeError) as e:
        raise InputError(f"bad placement record: {e}") from e


# ---------- Trajectories ----------

def _flat(pose: Optional[Pose]) -> Optional[list[float]]:
    return None if pose is None else pose.as_matrix().ravel().tolist()


def _unflat(values) -> Optional[Pose]:
    if values is None:
        return None
    return Pose.from_matrix(np.asarray(values, dtype=float).reshape(4, 4))


def _trajectory_header(solution: PickPlaceSolution, extra: Optional[dict]) -> dict:
    traj = solution.trajectory
    waypoints = {
        side: {name: _flat(getattr(w, name)) for name in ("entry", "approach", "grasp", "lift")}
        for side, w in (("pick", solution.schedule.pick), ("place", solution.schedule.place))
    }
    return {
        "chain": traj.chain_name,
        "joints": int(traj.configs.shape[1]),
        "samples": len(traj),
        "resolution": list(traj.resolution),
        "in_hand": _flat(solution.in_hand),
        "place_in_hand": _flat(solution.place_in_hand),
        "waypoints": waypoints,
        **(extra or {}),
    }


def _solution_from(header: dict, configs: np.ndarray, phases: Sequence[str], path) -> PickPlaceSolution:
    try:
        w = header["waypoints"]
        schedule = WaypointSchedule(
            *(Waypoints(*(_unflat(w[side][n]) for n in ("entry", "approach", "grasp", "lift"))) for side in ("pick", "place")),
            tuple(header["resolution"]),
        )
        traj = JointTrajectory(configs, tuple(Phase(p) for p in phases), (), header["chain"], tuple(header["resolution"]))
        return PickPlaceSolution(True, traj, schedule, _unflat(header["in_hand"]), _unflat(header.get("place_in_hand")))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: bad trajectory header ({e})") from e


def write_trajectory(solution: PickPlaceSolution, path: str | Path, extra: Optional[dict] = None) -> None:
    """
    Text export: ``# key: json`` header lines, then one CSV row per sample with
    index, phase, joint values and the TCP pose (xyz, rotation vector).
    """
    if not solution.ok or solution.trajectory is None:
        raise InputError("only successful solutions can be exported")
    traj = solution.trajectory
    header = _trajectory_header(solution, extra)
    n = traj.configs.shape[1]
    df = pd.DataFrame(traj.configs, columns=[f"q{j}" for j in range(n)])
    df.insert(0, "phase", [p.value for p in traj.phases])
    df.insert(0, "index", np.arange(len(traj)))
    if traj.poses:
        df[["x", "y", "z"]] = np.array([p.translation for p in traj.poses])
        df[["rx", "ry", "rz"]] = Rotation.from_matrix(np.array([p.rotation for p in traj.poses])).as_rotvec()
    lines = [f"# {TRAJECTORY_MAGIC}"] + [f"# {k}: {json.dumps(v)}" for k, v in header.items()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
        df.to_csv(f, index=False, float_format="%.17g")


def read_trajectory(path: str | Path) -> tuple[PickPlaceSolution, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    lines = text.splitlines()
    if not lines or lines[0] != f"# {TRAJECTORY_MAGIC}":
        raise InputError(f"{path}: not a text trajectory")
    header = {}
    skip = 0
    for line in lines:
        if not line.startswith("#"):
            break
        skip += 1
        key, sep, value = line[1:].strip().partition(": ")
        if sep:
            try:
                header[key] = json.loads(value)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}: bad header line {key!r}") from e
    df = pd.read_csv(path, skiprows=skip, float_precision="round_trip")
    cols = [c for c in df.columns if c.startswith("q")]
    if len(df) != header.get("samples") or len(cols) != header.get("joints"):
        raise InputError(f"{path}: table does not match the header ({len(df)} rows, {len(cols)} joints)")
    return _solution_from(header, df[cols].to_numpy(dtype=float), df["phase"].tolist(), path), header


def write_trajectory_binary(solution: PickPlaceSolution, path: str | Path, extra: Optional[dict] = None) -> None:
    """Binary export: JSON header values, then float64 phase codes and joint values per sample."""
    if not solution.ok or solution.trajectory is None:
        raise InputError("only successful solutions can be exported")
    traj = solution.trajectory
    header = {k: json.dumps(v, separators=(",", ":")) for k, v in _trajectory_header(solution, extra).items()}
    codes = np.array([list(Phase).index(p) for p in traj.phases], dtype=float)
    _write_binary(Path(path), TRAJECTORY_MAGIC, header, np.column_stack([codes, traj.configs]).ravel(), "<f8")


def read_trajectory_binary(path: str | Path) -> tuple[PickPlaceSolution, dict]:
    raw, values = _read_binary(Path(path), TRAJECTORY_MAGIC, "<f8")
    try:
        header = {k: json.loads(v) for k, v in raw.items()}
        m, n = int(header["samples"]), int(header["joints"])
    except (KeyError, ValueError) as e:
        raise InputError(f"{path}: bad trajectory header ({e})") from e
    if values.size != m * (n + 1):
        raise InputError(f"{path}: payload holds {values.size} values, header says {m}x{n + 1}")
    table = values.reshape(m, n + 1)
    phases = [list(Phase)[int(c)].value for c in table[:, 0]]
    return _solution_from(header, table[:, 1:], phases, path), header


def load_trajectory(path: str | Path) -> tuple[PickPlaceSolution, dict]:
    """Text or binary, by the first line."""
    try:
        with open(path, "rb") as f:
            first = f.readline().strip()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    if first == TRAJECTORY_MAGIC.encode():
        return read_trajectory_binary(path)
    return read_trajectory(path)
