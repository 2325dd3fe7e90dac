"""Procedural raycast scenes: ground-truth (frames, camera path) clip generation.

A scene is a checkerboard-textured room (floor + 4 walls, open sky above)
holding 5-15 diffuse boxes and spheres, lit by one directional light. Pure
functions of (seed, pose, H, W), so clips re-render byte-identically.
"""

from __future__ import annotations

import json
import math
import shutil
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes, atomic_write_text
from .geometry import (
    CameraPath,
    CameraPose,
    Direction,
    cardinal_path,
    random_path,
    read_pose_file,
    rotation_from_axis_angle,
    write_pose_file,
)
from .seeds import rng_for, split_seed

FRAMES_MAGIC = b"CVG1"

ROOM_HALF = 5.0
WALL_HEIGHT = 7.0  # tall enough that straight-ahead views see no textureless sky
FLOOR_CELL = 0.7
WALL_CELL = 0.9
FLOOR_COLORS = (np.array([0.86, 0.84, 0.80]), np.array([0.20, 0.21, 0.26]))
WALL_COLORS = (np.array([0.80, 0.73, 0.60]), np.array([0.28, 0.33, 0.44]))
HORIZON_COLOR = np.array([0.56, 0.68, 0.88])
AMBIENT = 0.30
DEFAULT_FOV_DEG = 60.0

# camera spawn box; wall/floor clearance covers the longest path the speed
# range below can produce (16 frames * speed_max)
CANONICAL_EYE = np.array([0.0, 2.3, 2.2])
SPAWN_JITTER_X = 0.8
SPAWN_JITTER_Y = (-0.1, 0.3)
SPAWN_JITTER_Z = (-0.6, 0.4)
SPAWN_YAW = math.radians(25.0)

_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Primitive:
    kind: str  # "sphere" | "box"
    center: np.ndarray
    size: np.ndarray  # sphere: (r, r, r); box: half extents
    albedo: np.ndarray

    @property
    def bound_radius(self) -> float:
        if self.kind == "sphere":
            return float(self.size[0])
        return float(np.linalg.norm(self.size))


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    primitives: tuple
    light: np.ndarray  # unit vector toward the light


@dataclass(frozen=True, eq=False)
class CameraClip:
    """n rendered RGB frames plus the n poses that produced them."""

    frames: np.ndarray  # (n, H, W, 3) uint8
    path: CameraPath
    scene_seed: int

    def __post_init__(self):
        if self.frames.shape[0] != self.path.n:
            raise ValueError(f"{self.frames.shape[0]} frames but {self.path.n} poses")
        if self.frames.dtype != np.uint8 or self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise ValueError("frames must be (n, H, W, 3) uint8")

    @property
    def n(self) -> int:
        return self.frames.shape[0]


def canonical_start_pose() -> CameraPose:
    return CameraPose(np.eye(3), CANONICAL_EYE)


def build_scene(seed: int) -> Scene:
    """Deterministic scene; the first primitive always sits in the canonical
    start pose's view frustum so every clip opens onto some foreground content."""
    rng = np.random.default_rng(int(seed))
    count = int(rng.integers(5, 16))
    prims = []
    for i in range(count):
        kind = ("box", "sphere")[int(rng.integers(2))]
        if i == 0:
            center = np.array(
                [rng.uniform(-0.9, 0.9), rng.uniform(1.6, 3.2), rng.uniform(-2.4, -1.0)]
            )
        else:
            center = np.array(
                [rng.uniform(-4.2, 4.2), rng.uniform(0.4, 3.8), rng.uniform(-4.2, 4.2)]
            )
        if kind == "sphere":
            size = np.full(3, rng.uniform(0.25, 0.6))
        else:
            size = rng.uniform(0.2, 0.65, size=3)
        extent = float(size.max())
        center[0] = np.clip(center[0], -(ROOM_HALF - extent - 0.05), ROOM_HALF - extent - 0.05)
        center[2] = np.clip(center[2], -(ROOM_HALF - extent - 0.05), ROOM_HALF - extent - 0.05)
        center[1] = np.clip(center[1], extent + 0.02, WALL_HEIGHT - extent - 0.02)
        albedo = rng.uniform(0.25, 0.95, size=3)
        prims.append(Primitive(kind, center, size, albedo))
    light = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.8, 1.2), rng.uniform(-0.5, 0.5)])
    light /= np.linalg.norm(light)
    return Scene(int(seed), tuple(prims), light)


def in_canonical_frustum(center: np.ndarray, fov_deg: float = DEFAULT_FOV_DEG) -> bool:
    """Whether a world point lies in the canonical start pose's view frustum."""
    p = np.asarray(center, dtype=float) - CANONICAL_EYE
    depth = -p[2]
    if depth <= 0.3:
        return False
    half = depth * math.tan(math.radians(fov_deg) / 2.0)
    return abs(p[0]) <= half and abs(p[1]) <= half


def _pixel_rays(h: int, w: int, fov_deg: float) -> np.ndarray:
    tanf = math.tan(math.radians(fov_deg) / 2.0)
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tanf * (w / h)
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tanf
    gx, gy = np.meshgrid(xs, ys)
    dirs = np.stack([gx, gy, -np.ones_like(gx)], axis=-1).reshape(-1, 3)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _checker(a: np.ndarray, b: np.ndarray, cell: float, colors) -> np.ndarray:
    parity = (np.floor(a / cell) + np.floor(b / cell)).astype(np.int64) & 1
    return np.where(parity[:, None] == 0, colors[0][None, :], colors[1][None, :])


def _sphere_hits(origin, dirs, prim):
    oc = origin[None, :] - prim.center[None, :]
    b = (dirs * oc).sum(axis=1)
    c = (oc * oc).sum(axis=1) - prim.size[0] ** 2
    disc = b * b - c
    ok = disc > 0
    s = np.sqrt(np.where(ok, disc, 0.0))
    t_near = -b - s
    t_far = -b + s
    t = np.where(t_near > _EPS, t_near, t_far)
    t = np.where(ok & (t > _EPS), t, np.inf)
    p = origin[None, :] + dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
    normal = p - prim.center[None, :]
    norm = np.linalg.norm(normal, axis=1, keepdims=True)
    normal = normal / np.where(norm > 0, norm, 1.0)
    return t, normal, np.broadcast_to(prim.albedo, dirs.shape)


def _box_hits(origin, dirs, prim):
    lo = prim.center - prim.size
    hi = prim.center + prim.size
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :] - origin[None, :]) * inv
        t1 = (hi[None, :] - origin[None, :]) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tn = np.nanmax(tmin, axis=1)
    tf = np.nanmin(tmax, axis=1)
    hit = (tn <= tf) & (tf > _EPS)
    t = np.where(tn > _EPS, tn, tf)
    t = np.where(hit, t, np.inf)
    entry = tn > _EPS
    face_t = np.where(entry[:, None], tmin, tmax)
    axis = np.argmax(face_t == t[:, None], axis=1)
    sign = np.where(entry, -np.sign(dirs[np.arange(len(dirs)), axis]),
                    np.sign(dirs[np.arange(len(dirs)), axis]))
    normal = np.zeros_like(dirs)
    normal[np.arange(len(dirs)), axis] = np.where(sign == 0, 1.0, sign)
    return t, normal, np.broadcast_to(prim.albedo, dirs.shape)


def _room_hits(origin, dirs):
    """Nearest hit against floor and the four finite-height walls."""
    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 3))
    best_alb = np.zeros((n_rays, 3))

    def consider(t, valid, normal, albedo):
        nonlocal best_t, best_n, best_alb
        t = np.where(valid & (t > _EPS), t, np.inf)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_n[better] = normal
        best_alb[better] = albedo[better]

    with np.errstate(divide="ignore", invalid="ignore"):
        # floor y = 0
        t = (0.0 - origin[1]) / dirs[:, 1]
        p = origin[None, :] + dirs * t[:, None]
        valid = np.isfinite(t) & (np.abs(p[:, 0]) <= ROOM_HALF) & (np.abs(p[:, 2]) <= ROOM_HALF)
        consider(t, valid, np.array([0.0, 1.0, 0.0]), _checker(p[:, 0], p[:, 2], FLOOR_CELL, FLOOR_COLORS))
        # walls x = +-ROOM_HALF and z = +-ROOM_HALF
        for axis, level, normal in (
            (0, ROOM_HALF, np.array([-1.0, 0.0, 0.0])),
            (0, -ROOM_HALF, np.array([1.0, 0.0, 0.0])),
            (2, ROOM_HALF, np.array([0.0, 0.0, -1.0])),
            (2, -ROOM_HALF, np.array([0.0, 0.0, 1.0])),
        ):
            t = (level - origin[axis]) / dirs[:, axis]
            p = origin[None, :] + dirs * t[:, None]
            other = 2 - axis
            valid = (
                np.isfinite(t)
                & (np.abs(p[:, other]) <= ROOM_HALF + 1e-9)
                & (p[:, 1] >= 0.0)
                & (p[:, 1] <= WALL_HEIGHT)
            )
            consider(t, valid, normal, _checker(p[:, other], p[:, 1], WALL_CELL, WALL_COLORS))
    return best_t, best_n, best_alb


def render_frame(scene: Scene, pose: CameraPose, h: int, w: int,
                 fov_deg: float = DEFAULT_FOV_DEG) -> np.ndarray:
    """Nearest-hit raycast with diffuse shading; returns (h, w, 3) uint8."""
    if h < 8 or w < 8:
        raise ValueError("frame size must be at least 8x8")
    dirs = _pixel_rays(h, w, fov_deg) @ pose.rotation.T
    origin = pose.translation

    best_t, best_n, best_alb = _room_hits(origin, dirs)
    for prim in scene.primitives:
        if prim.kind == "sphere":
            t, normal, albedo = _sphere_hits(origin, dirs, prim)
        else:
            t, normal, albedo = _box_hits(origin, dirs, prim)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_n[better] = normal[better]
        best_alb[better] = np.broadcast_to(albedo, dirs.shape)[better]

    lambert = np.clip((best_n * scene.light[None, :]).sum(axis=1), 0.0, None)
    shade = best_alb * (AMBIENT + (1.0 - AMBIENT) * lambert)[:, None]
    shade[~np.isfinite(best_t)] = HORIZON_COLOR
    img = np.clip(np.rint(shade * 255.0), 0, 255).astype(np.uint8)
    return img.reshape(h, w, 3)


def render_clip(scene: Scene, path: CameraPath, h: int, w: int,
                fov_deg: float = DEFAULT_FOV_DEG) -> CameraClip:
    frames = np.stack([render_frame(scene, p, h, w, fov_deg) for p in path.poses])
    return CameraClip(frames, path, scene.seed)


def _primitive_clearance(pts: np.ndarray, prim: Primitive) -> float:
    """Smallest surface distance from any path point to the primitive."""
    if prim.kind == "sphere":
        return float(np.linalg.norm(pts - prim.center[None, :], axis=1).min() - prim.size[0])
    q = np.maximum(np.abs(pts - prim.center[None, :]) - prim.size[None, :], 0.0)
    return float(np.linalg.norm(q, axis=1).min())


def _path_is_clear(scene: Scene, path: CameraPath, margin: float = 0.12) -> bool:
    """Camera stays inside the room and outside every primitive."""
    pts = np.stack([p.translation for p in path.poses])
    if np.abs(pts[:, [0, 2]]).max() > ROOM_HALF - 0.2:
        return False
    if pts[:, 1].min() < 0.05 or pts[:, 1].max() > WALL_HEIGHT - 0.1:
        return False
    return all(_primitive_clearance(pts, prim) >= margin for prim in scene.primitives)


def _sample_clip_path(scene, direction, n, rng, speed_range, rot_cap):
    """Jittered start pose + path for one clip, re-sampled until collision-free.

    Late attempts shrink the speed: a shorter sweep always clears eventually
    because the spawn box itself is kept clear by rejection.
    """
    speed_lo, speed_hi = speed_range
    for attempt in range(200):
        eye = CANONICAL_EYE + np.array(
            [
                rng.uniform(-SPAWN_JITTER_X, SPAWN_JITTER_X),
                rng.uniform(*SPAWN_JITTER_Y),
                rng.uniform(*SPAWN_JITTER_Z),
            ]
        )
        yaw = rng.uniform(-SPAWN_YAW, SPAWN_YAW)
        start = CameraPose(rotation_from_axis_angle([0.0, yaw, 0.0]), eye)
        shrink = 0.85 ** max(0, attempt - 50)
        speed = float(rng.uniform(speed_lo, speed_hi)) * shrink
        if direction is None:
            path = random_path(start, n, rng, speed_range=(speed, speed), rot_cap=rot_cap)
        else:
            path = cardinal_path(start, direction, n, speed)
        if _path_is_clear(scene, path):
            return path, speed
    raise RuntimeError(f"could not place a collision-free path in scene {scene.seed}")


def write_frames_file(path, frames: np.ndarray) -> None:
    """frames.bin: magic CVG1, u32 n/H/W, then n*H*W*3 row-major RGB bytes."""
    frames = np.asarray(frames, dtype=np.uint8)
    n, h, w, _ = frames.shape
    header = struct.pack("<4sIII", FRAMES_MAGIC, n, h, w)
    atomic_write_bytes(path, header + np.ascontiguousarray(frames).tobytes())


def read_frames_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, n, h, w = struct.unpack_from("<4sIII", data, 0)
    if magic != FRAMES_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {FRAMES_MAGIC!r}")
    off = struct.calcsize("<4sIII")
    expected = n * h * w * 3
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=off)
    if pixels.size != expected:
        raise ValueError(f"{path}: truncated pixel payload")
    return pixels.reshape(n, h, w, 3).copy()


def clip_dir_name(index: int) -> str:
    return f"clip_{index:06d}"


def _direction_cycle(num_clips: int):
    dirs = list(Direction)
    return [dirs[i % len(dirs)] for i in range(num_clips)]


def generate_dataset(
    out_dir,
    num_clips: int,
    n: int,
    h: int,
    w: int,
    direction_mix: str = "uniform7",
    seed: int = 0,
    speed_range: tuple = (0.04, 0.10),
    rot_cap: float = 0.0,
    fov_deg: float = DEFAULT_FOV_DEG,
    clips_per_scene: int = 8,
    workers: int = 4,
) -> Path:
    """Render `num_clips` clips and write the dataset directory + manifest.

    uniform7 cycles through the 7 cardinal directions (counts within +-1);
    "random" draws free paths. Consecutive clips share a scene in blocks of
    `clips_per_scene`, so the same content appears under different camera
    commands and the motion signal decorrelates from scene identity. Returns
    the manifest path. On failure any partially written clip directories are
    removed.
    """
    if num_clips < 1:
        raise ValueError("num_clips must be >= 1")
    if clips_per_scene < 1:
        raise ValueError("clips_per_scene must be >= 1")
    if direction_mix not in ("uniform7", "random"):
        raise ValueError(f"direction_mix must be uniform7 or random, got {direction_mix!r}")
    out_dir = Path(out_dir)
    created: list[Path] = []
    directions = _direction_cycle(num_clips) if direction_mix == "uniform7" else [None] * num_clips

    def build(i: int):
        scene = build_scene(split_seed(seed, "scene", i // clips_per_scene))
        rng = rng_for(seed, "clip", i)
        path, speed = _sample_clip_path(scene, directions[i], n, rng, speed_range, rot_cap)
        clip = render_clip(scene, path, h, w, fov_deg)
        return clip, speed

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_lines = []
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for i, (clip, speed) in enumerate(pool.map(build, range(num_clips))):
                d = directions[i]
                name = clip_dir_name(i)
                clip_dir = out_dir / name
                clip_dir.mkdir(exist_ok=True)
                created.append(clip_dir)
                write_frames_file(clip_dir / "frames.bin", clip.frames)
                write_pose_file(clip_dir / "poses.txt", clip.path.poses)
                meta = {
                    "scene_seed": clip.scene_seed,
                    "direction": d.name.lower() if d else "random",
                    "lam": d.lam if d else 0,
                    "speed": speed,
                }
                atomic_write_text(clip_dir / "meta.json", json.dumps(meta, sort_keys=True) + "\n")
                manifest_lines.append(f"{name} {meta['direction']} {meta['lam']}")
        manifest = out_dir / "manifest.txt"
        atomic_write_text(manifest, "\n".join(manifest_lines) + "\n")
        return manifest
    except BaseException as exc:
        for p in created:
            shutil.rmtree(p, ignore_errors=True)
        (out_dir / "manifest.txt").unlink(missing_ok=True)
        raise RuntimeError(f"dataset generation into {out_dir} failed: {exc}") from exc


def load_manifest(dataset_dir) -> list:
    """Rows of (clip_subdir, direction_name, lambda)."""
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"missing manifest: {manifest}")
    rows = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, direction, lam = line.split()
        rows.append((name, direction, int(lam)))
    return rows


def load_clip(clip_dir) -> CameraClip:
    clip_dir = Path(clip_dir)
    frames = read_frames_file(clip_dir / "frames.bin")
    poses = read_pose_file(clip_dir / "poses.txt")
    meta = json.loads((clip_dir / "meta.json").read_text())
    return CameraClip(frames, CameraPath(poses), int(meta["scene_seed"]))
