# core/guidance.py
"""
Guidance fields: given the hand pose, the denoising step and the score-bin
condition, return the desired hand twist.

``OracleField`` is an annealed attractor toward the nearest dataset grasp in
the requested bin. ``ExternalField`` forwards queries to another process over
a line-delimited JSON protocol (see README, "External guidance protocol").
"""
from __future__ import annotations

import json
import logging
import os
import select
import socket
import subprocess
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from core.errors import BinExhausted, InputError, ProtocolError
from core.scene import GraspCandidate, SceneVolumes, ScoreBin, lookup_trilinear
from core.se3 import Pose, Twist, encode_pose_points, log_pose_error

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
TWIST_FRAME = "world-spatial"
TWIST_ORDER = "angular-first"
METRIC_SCALE = 2.0      # metres -> radians in the nearest-grasp metric
VALIDITY_THRESHOLD = 0.5


# ---------- Queries and schedule ----------

@dataclass(frozen=True)
class NoiseSchedule:
    steps: int = 100
    dt: float = 1.0
    sigma_angular: float = 0.3
    sigma_linear: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise InputError("schedule needs at least one step")
        if self.dt <= 0:
            raise InputError("dt must be positive")

    def gain(self, k: int) -> float:
        """Fraction of the remaining error to cover per unit time at step k."""
        return 1.0 / ((k + 1) * self.dt)

    def sigma(self, k: int) -> tuple[float, float]:
        frac = k / self.steps
        return self.sigma_angular * frac, self.sigma_linear * frac


@dataclass(frozen=True, eq=False)
class GuidanceQuery:
    pose: Pose
    k: int
    bin: Optional[ScoreBin]          # None: unconditioned
    steps: int = 100
    stream: int = 0
    attempt: int = 0
    volumes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.k <= self.steps:
            raise InputError(f"timestep {self.k} outside [0, {self.steps}]")

    @property
    def points(self) -> np.ndarray:
        return encode_pose_points(self.pose)


class GuidanceField(Protocol):
    def twist(self, query: GuidanceQuery) -> Twist: ...

    def close(self) -> None: ...


# ---------- Oracle ----------

def nearest_grasp(pose: Pose, grasps: Sequence[GraspCandidate], metric_scale: float = METRIC_SCALE) -> int:
    """Index of the grasp minimising rotation angle + metric_scale * translation distance."""
    Rs = np.stack([g.pose.rotation for g in grasps])
    ps = np.stack([g.pose.translation for g in grasps])
    tr = np.einsum("nij,ij->n", Rs, pose.rotation)   # trace(R_g R_h^T)
    ang = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    d = ang + metric_scale * np.linalg.norm(ps - pose.translation, axis=1)
    return int(np.argmin(d))


def oracle_field(
    query: GuidanceQuery,
    grasps: Sequence[GraspCandidate],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    metric_scale: float = METRIC_SCALE,
) -> Twist:
    pool = [g for g in grasps if query.bin is None or g.bin == query.bin]
    if not pool:
        raise BinExhausted(query.bin.label if query.bin is not None else "any")
    target = pool[nearest_grasp(query.pose, pool, metric_scale)]
    err = log_pose_error(query.pose, target.pose).vector
    noise = rng.standard_normal(6)
    sw, sv = schedule.sigma(query.k)
    xi = schedule.gain(query.k) * err
    xi[:3] += sw * noise[:3]
    xi[3:] += sv * noise[3:]
    return Twist.from_vector(xi)


class OracleField:
    """In-process oracle; one rng stream per (stream, attempt) derived from ``seed``."""

    def __init__(
        self,
        grasps: Sequence[GraspCandidate],
        schedule: NoiseSchedule = NoiseSchedule(),
        seed: int = 0,
        metric_scale: float = METRIC_SCALE,
    ):
        self.grasps = list(grasps)
        self.schedule = schedule
        self.seed = seed
        self.metric_scale = metric_scale
        self._rngs: dict[tuple[int, int], np.random.Generator] = {}

    def _rng(self, stream: int, attempt: int) -> np.random.Generator:
        key = (stream, attempt)
        if key not in self._rngs:
            self._rngs[key] = np.random.default_rng(np.random.SeedSequence([self.seed, stream, attempt]))
        return self._rngs[key]

    def twist(self, query: GuidanceQuery) -> Twist:
        return oracle_field(query, self.grasps, self.schedule, self._rng(query.stream, query.attempt), self.metric_scale)

    def close(self) -> None:
        self._rngs.clear()


# ---------- Wire format ----------

def encode_message(obj) -> str:
    """JSON with every float written as 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{encode_message(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(encode_message(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            raise ProtocolError(f"cannot send non-finite number {x}")
        return format(x, ".17g")
    return json.dumps(obj)


def decode_line(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError(f"guidance message is not UTF-8: {e}") from e


def decode_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed message (not JSON): {line[:80]!r}") from e
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("malformed message: missing field 'type'")
    return msg


def hello_message() -> dict:
    return {"type": "hello", "version": PROTOCOL_VERSION, "twist_frame": TWIST_FRAME, "order": TWIST_ORDER}


def check_hello(msg: dict) -> None:
    if msg.get("type") != "hello":
        raise ProtocolError(f"expected hello, got {msg.get('type')!r}")
    if msg.get("version") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: peer {msg.get('version')!r}, ours {PROTOCOL_VERSION}")
    if msg.get("twist_frame") != TWIST_FRAME or msg.get("order") != TWIST_ORDER:
        raise ProtocolError(
            f"twist convention mismatch: peer {msg.get('twist_frame')!r}/{msg.get('order')!r}, "
            f"ours {TWIST_FRAME!r}/{TWIST_ORDER!r}"
        )


def query_message(qid: int, query: GuidanceQuery) -> dict:
    return {
        "type": "query",
        "id": qid,
        "stream": query.stream,
        "attempt": query.attempt,
        "k": query.k,
        "steps": query.steps,
        "bin": None if query.bin is None else query.bin.one_hot.tolist(),
        "points": query.points.tolist(),
        "pose": query.pose.as_matrix().tolist(),
        "volumes": dict(query.volumes),
    }


def parse_query(msg: dict) -> GuidanceQuery:
    try:
        T = np.asarray(msg["pose"], dtype=float)
        b = msg["bin"]
        return GuidanceQuery(
            pose=Pose.from_matrix(T),
            k=int(msg["k"]),
            bin=None if b is None else ScoreBin.from_one_hot(b),
            steps=int(msg.get("steps", 100)),
            stream=int(msg.get("stream", 0)),
            attempt=int(msg.get("attempt", 0)),
            volumes=msg.get("volumes") or {},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"malformed query: {e}") from e


def parse_twist(msg: dict, expected_id: int) -> Twist:
    if msg.get("type") == "error":
        raise ProtocolError(f"guidance server error: {msg.get('message', '')}")
    if msg.get("type") != "twist":
        raise ProtocolError(f"expected twist message, got {msg.get('type')!r}")
    if msg.get("id") != expected_id:
        raise ProtocolError(f"twist reply id {msg.get('id')!r} does not match query {expected_id}")
    values = msg.get("twist")
    if not isinstance(values, list) or len(values) != 6:
        got = len(values) if isinstance(values, list) else type(values).__name__
        raise ProtocolError(f"malformed twist message: field 'twist' must hold 6 numbers, got {got}")
    try:
        return Twist.from_vector([float(v) for v in values])
    except (TypeError, ValueError) as e:
        raise ProtocolError(f"malformed twist message: field 'twist' is not numeric ({e})") from e


# ---------- Channels ----------

class _LineChannel:
    def __init__(self):
        self._buf = b""

    def _recv(self, timeout: float) -> bytes:
        raise NotImplementedError

    def send(self, line: str) -> None:
        raise NotImplementedError

    def readline(self, timeout: float) -> str:
        while b"\n" not in self._buf:
            chunk = self._recv(timeout)
            if not chunk:
                raise ProtocolError("guidance connection closed by peer")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return decode_line(line)

    def close(self) -> None:
        pass


class _PipeChannel(_LineChannel):
    def __init__(self, proc: subprocess.Popen):
        super().__init__()
        self.proc = proc

    def _recv(self, timeout: float) -> bytes:
        fd = self.proc.stdout.fileno()
        ready, _, _ = select.select([fd], [], [], timeout)
        if not ready:
            raise ProtocolError(f"guidance server timed out after {timeout:.1f} s")
        return os.read(fd, 65536)

    def send(self, line: str) -> None:
        try:
            self.proc.stdin.write((line + "\n").encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ProtocolError(f"guidance server pipe closed: {e}") from e

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _SocketChannel(_LineChannel):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self.sock = sock

    def _recv(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(65536)
        except socket.timeout as e:
            raise ProtocolError(f"guidance server timed out after {timeout:.1f} s") from e

    def send(self, line: str) -> None:
        self.sock.sendall((line + "\n").encode("utf-8"))

    def close(self) -> None:
        self.sock.close()


class ExternalField:
    """Guidance served by another process; one connection serves one run at a time."""

    def __init__(self, channel: _LineChannel, timeout: float = 10.0):
        self.channel = channel
        self.timeout = timeout
        self._next_id = 0
        self._handshake()

    @classmethod
    def spawn(cls, command: Sequence[str], timeout: float = 10.0) -> "ExternalField":
        proc = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        try:
            return cls(_PipeChannel(proc), timeout)
        except ProtocolError:
            proc.kill()
            raise

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "ExternalField":
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(_SocketChannel(sock), timeout)

    def _handshake(self) -> None:
        self.channel.send(encode_message(hello_message()))
        check_hello(decode_message(self.channel.readline(self.timeout)))
        log.debug("guidance handshake complete")

    def twist(self, query: GuidanceQuery) -> Twist:
        qid = self._next_id
        self._next_id += 1
        self.channel.send(encode_message(query_message(qid, query)))
        msg = decode_message(self.channel.readline(self.timeout))
        if msg.get("type") == "error" and msg.get("code") == "bin-exhausted":
            raise BinExhausted(msg.get("bin", "unknown"))
        return parse_twist(msg, qid)

    def close(self) -> None:
        try:
            self.channel.send(encode_message({"type": "bye"}))
        except ProtocolError:
            pass
        self.channel.close()

    def __enter__(self) -> "ExternalField":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------- Filtering ----------

class RankedPose(NamedTuple):
    index: int
    pose: Pose
    validity: float
    score: float


def filter_and_sort(
    poses: Sequence[Pose],
    volumes: SceneVolumes,
    threshold: float = VALIDITY_THRESHOLD,
    sort: bool = True,
    use_validity: bool = True,
) -> list[RankedPose]:
    """
    Drop poses whose TCP falls outside the grid or on validity below
    ``threshold``; order the rest by descending gravity score (stable).
    """
    kept = []
    for i, pose in enumerate(poses):
        validity, oob = lookup_trilinear(volumes.grasp_validity, pose.translation)
        score, _ = lookup_trilinear(volumes.gravity_score, pose.translation)
        if use_validity and (oob or validity < threshold):
            continue
        kept.append(RankedPose(i, pose, validity, score))
    if sort:
        kept.sort(key=lambda r: -r.score)
    return kept
