"""Deterministic synthetic indoor worlds.

Builds box-composed scenes (floor, four walls, free-standing objects), samples
smooth orbital camera trajectories, renders depth and ground-truth label images
analytically (exact ray vs. axis-aligned-box intersection), and simulates an
imperfect deployed segmenter through a view-dependent label-corruption model.

All operations are pure functions of (inputs, seed): repeated calls are
bit-identical. Scenes are axis-aligned boxes only, which keeps the renderer
exact and makes fusion errors attributable to the corruption model rather than
to geometry.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

# Class id sentinel for pixels without a semantic estimate (no depth / no hit).
UNDEFINED = 255

# Depth sensor envelope in meters. Hits outside (DEPTH_MIN, DEPTH_MAX] are
# reported as invalid (depth 0), mimicking a consumer RGB-D camera.
DEPTH_MIN = 0.1
DEPTH_MAX = 5.45

FLOOR_CLASS = 0
WALL_CLASS = 1

_WALL_THICKNESS = 0.1
_FLOOR_THICKNESS = 0.1


class InvalidSpecError(ValueError):
    """Scene specification cannot produce a valid scene."""


class DegenerateSceneError(RuntimeError):
    """No valid camera placement exists for the requested trajectory."""


def class_palette(class_count: int) -> np.ndarray:
    """Fixed albedo palette, one RGB row in [0,1] per class id.

    Keyed to the class id only (never to a scene), so the same class looks the
    same in every scene. Floor and wall get fixed grays; object classes walk
    the hue circle with alternating saturation/value so neighbours stay
    distinguishable but not trivially so.
    """
    if class_count < 2:
        raise InvalidSpecError("class_count must be >= 2")
    pal = np.zeros((class_count, 3), dtype=np.float64)
    pal[FLOOR_CLASS] = (0.45, 0.42, 0.38)
    pal[WALL_CLASS] = (0.80, 0.80, 0.78)
    golden = 0.61803398875
    for c in range(2, class_count):
        h = (0.08 + golden * (c - 2)) % 1.0
        s = 0.55 if c % 2 == 0 else 0.75
        v = 0.85 if c % 3 else 0.6
        pal[c] = colorsys.hsv_to_rgb(h, s, v)
    return pal


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a generated scene."""

    seed: int = 0
    extent: tuple[float, float, float] = (4.4, 4.4, 2.6)
    num_objects: int = 6
    class_count: int = 8
    object_size_range: tuple[float, float] = (0.35, 0.95)

    def validate(self) -> None:
        ex, ey, ez = self.extent
        if not (ex > 0 and ey > 0 and ez > 0):
            raise InvalidSpecError("extent must be positive in all axes")
        if self.class_count < 2:
            raise InvalidSpecError("class_count must be >= 2")
        if self.num_objects < 0:
            raise InvalidSpecError("num_objects must be >= 0")
        lo, hi = self.object_size_range
        if not (0 < lo <= hi):
            raise InvalidSpecError("object size range must satisfy 0 < lo <= hi")
        if self.num_objects > 0 and self.class_count < 3:
            raise InvalidSpecError("objects need class ids >= 2, so class_count >= 3")
        # Objects must fit between the walls with a placement margin.
        margin = 2 * _WALL_THICKNESS + 0.1
        if self.num_objects > 0 and (hi + margin >= ex or hi + margin >= ey or hi + _FLOOR_THICKNESS >= ez):
            raise InvalidSpecError("object size range does not fit inside the extent")


@dataclass(frozen=True)
class Scene:
    """Axis-aligned box soup with per-box class ids.

    Boxes may overlap; the visible label at a surface point is the class of
    the first box hit along the viewing ray (ties break to the lowest id).
    """

    box_min: np.ndarray  # (B, 3) float64
    box_max: np.ndarray  # (B, 3) float64
    box_class: np.ndarray  # (B,) int64
    extent: tuple[float, float, float]
    class_count: int
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.5, -0.8]))

    @property
    def num_boxes(self) -> int:
        return int(self.box_min.shape[0])

    def to_text(self) -> str:
        """One box per line: min xyz, max xyz, class id."""
        lines = []
        for lo, hi, c in zip(self.box_min, self.box_max, self.box_class):
            nums = [f"{v:.17g}" for v in (*lo, *hi)]
            lines.append(" ".join(nums) + f" {int(c)}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str, extent: tuple[float, float, float], class_count: int,
                  light_dir: np.ndarray | None = None) -> "Scene":
        lo, hi, cls = [], [], []
        for line in text.strip().splitlines():
            parts = line.split()
            vals = [float(v) for v in parts[:6]]
            lo.append(vals[:3])
            hi.append(vals[3:])
            cls.append(int(parts[6]))
        scene = Scene(
            box_min=np.asarray(lo, dtype=np.float64),
            box_max=np.asarray(hi, dtype=np.float64),
            box_class=np.asarray(cls, dtype=np.int64),
            extent=extent,
            class_count=class_count,
        )
        if light_dir is not None:
            object.__setattr__(scene, "light_dir", np.asarray(light_dir, dtype=np.float64))
        return scene


@dataclass(frozen=True)
class Pose:
    """Rigid world←camera transform (camera axes: x right, y down, z forward)."""

    rotation: np.ndarray  # (3, 3) float64, det +1
    translation: np.ndarray  # (3,) float64, meters

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(rotation=np.array(m[:3, :3], dtype=np.float64),
                    translation=np.array(m[:3, 3], dtype=np.float64))


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 70.0
    fy: float = 70.0
    cx: float = 40.0
    cy: float = 80.0
    width: int = 80
    height: int = 160

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidSpecError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidSpecError("principal point must lie inside the image")

    def ray_grid(self) -> np.ndarray:
        """(H, W, 3) un-normalized camera-frame ray directions, z = 1."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


@dataclass
class Frame:
    """One rendered RGB-D observation with ground-truth labels."""

    index: int
    features: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32 meters, 0 where invalid
    gt_labels: np.ndarray  # (H, W) uint8, UNDEFINED where depth invalid
    pose: Pose
    intrinsics: Intrinsics


@dataclass(frozen=True)
class NoiseModel:
    """View-dependent corruption standing in for a deployed network's errors.

    Per pixel the true label flips with probability
    clamp(base + distance_coeff*depth + grazing_coeff*(1-|cos theta|), 0, 0.95);
    the replacement class is drawn from the true class's confusion row. On top,
    a Poisson number of disk "blobs" per frame each stamp a single wrong class.
    Errors are deliberately view-INCONSISTENT so that multi-view fusion can
    cancel them.
    """

    base_flip_prob: float = 0.18
    distance_coeff: float = 0.04
    grazing_coeff: float = 0.25
    blob_rate: float = 3.0
    blob_radius: int = 7
    confusion: np.ndarray | None = None  # (C, C) row-stochastic, default uniform off-diagonal
    seed: int = 0

    def confusion_for(self, class_count: int) -> np.ndarray:
        if self.confusion is not None:
            conf = np.asarray(self.confusion, dtype=np.float64)
            if conf.shape != (class_count, class_count):
                raise InvalidSpecError("confusion matrix shape must be (C, C)")
            if not np.allclose(conf.sum(axis=1), 1.0, atol=1e-9):
                raise InvalidSpecError("confusion rows must sum to 1")
            return conf
        conf = np.full((class_count, class_count), 1.0 / (class_count - 1))
        np.fill_diagonal(conf, 0.0)
        return conf


def build_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene: floor, four walls, and num_objects boxes on the floor."""
    spec.validate()
    ex, ey, ez = spec.extent
    rng = np.random.default_rng([spec.seed, 11])

    lo = [(0.0, 0.0, 0.0)]
    hi = [(ex, ey, _FLOOR_THICKNESS)]
    cls = [FLOOR_CLASS]
    t = _WALL_THICKNESS
    walls = [
        ((0.0, 0.0, 0.0), (t, ey, ez)),
        ((ex - t, 0.0, 0.0), (ex, ey, ez)),
        ((0.0, 0.0, 0.0), (ex, t, ez)),
        ((0.0, ey - t, 0.0), (ex, ey, ez)),
    ]
    for wlo, whi in walls:
        lo.append(wlo)
        hi.append(whi)
        cls.append(WALL_CLASS)

    pad = t + 0.05
    for _ in range(spec.num_objects):
        size = rng.uniform(spec.object_size_range[0], spec.object_size_range[1], size=3)
        size[2] = min(size[2], ez - _FLOOR_THICKNESS - 0.1)
        x0 = rng.uniform(pad, ex - pad - size[0])
        y0 = rng.uniform(pad, ey - pad - size[1])
        z0 = _FLOOR_THICKNESS
        lo.append((x0, y0, z0))
        hi.append((x0 + size[0], y0 + size[1], z0 + size[2]))
        cls.append(int(rng.integers(2, spec.class_count)))

    # Per-scene light direction: horizontal angle from the seed, fixed downward
    # tilt. Shifts the albedo*shading statistics between scenes.
    ang = rng.uniform(0.0, 2.0 * np.pi)
    light = np.array([np.cos(ang) * 0.6, np.sin(ang) * 0.6, 0.75])
    light /= np.linalg.norm(light)

    return Scene(
        box_min=np.asarray(lo, dtype=np.float64),
        box_max=np.asarray(hi, dtype=np.float64),
        box_class=np.asarray(cls, dtype=np.int64),
        extent=spec.extent,
        class_count=spec.class_count,
        light_dir=light,
    )


def _point_box_distance(points: np.ndarray, box_min: np.ndarray, box_max: np.ndarray) -> np.ndarray:
    """Signed-ish clearance: positive distance outside the box, 0 on/inside."""
    lo_gap = box_min[None, :, :] - points[:, None, :]
    hi_gap = points[:, None, :] - box_max[None, :, :]
    per_axis = np.maximum(np.maximum(lo_gap, hi_gap), 0.0)
    outside = np.linalg.norm(per_axis, axis=-1)
    inside = np.all((points[:, None, :] >= box_min[None, :, :]) & (points[:, None, :] <= box_max[None, :, :]), axis=-1)
    outside[inside] = 0.0
    return outside  # (N, B)


def _look_at(eye: np.ndarray, target: np.ndarray) -> Pose:
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    return Pose(rotation=rot, translation=np.array(eye, dtype=np.float64))


MIN_CLEARANCE = 0.3


def sample_trajectory(scene: Scene, n_frames: int, seed: int) -> list[Pose]:
    """Smooth orbit with seeded sinusoidal jitter, looking at the scene interior.

    Camera centers stay inside the extent and >= MIN_CLEARANCE from every box
    surface. The orbit rides above the object tops so clearance holds by
    construction for ordinary scenes; every pose is still verified and a
    DegenerateSceneError is raised if no shrink succeeds.
    """
    if n_frames < 1:
        raise InvalidSpecError("n_frames must be >= 1")
    ex, ey, ez = scene.extent
    rng = np.random.default_rng([seed, 23])
    center = np.array([ex / 2.0, ey / 2.0, 0.0])
    phase = rng.uniform(0.0, 2.0 * np.pi)
    jitter_phase = rng.uniform(0.0, 2.0 * np.pi, size=3)

    # Highest solid surface below the orbit (object tops, excluding the walls).
    wall_like = scene.box_class == WALL_CLASS
    top_z = float(np.max(np.where(wall_like, 0.0, scene.box_max[:, 2])))

    base_radius = min(ex, ey) / 2.0 - _WALL_THICKNESS - MIN_CLEARANCE - 0.15
    for attempt in range(5):
        radius = base_radius * (0.85 ** attempt)
        if radius <= 0.05:
            break
        z_lo = max(top_z + MIN_CLEARANCE + 0.05, 0.52 * ez)
        z_hi = min(ez - 0.05, z_lo + 0.28 * ez)
        if z_lo >= ez - 0.05:
            break
        phi = phase + 2.0 * np.pi * np.arange(n_frames) / max(n_frames, 1)
        wobble = 1.0 + 0.04 * np.sin(3.0 * phi + jitter_phase[0])
        eyes = np.stack([
            center[0] + radius * wobble * np.cos(phi),
            center[1] + radius * wobble * np.sin(phi),
            z_lo + (z_hi - z_lo) * (0.5 + 0.5 * np.sin(2.0 * phi + jitter_phase[1])),
        ], axis=1)

        inside = np.all((eyes > 0) & (eyes < np.array(scene.extent)), axis=1)
        clear = _point_box_distance(eyes, scene.box_min, scene.box_max).min(axis=1) >= MIN_CLEARANCE
        if bool(np.all(inside & clear)):
            target = np.array([ex / 2.0, ey / 2.0, 0.18 * ez])
            return [_look_at(eye, target) for eye in eyes]
    raise DegenerateSceneError("no valid camera placement found for this scene")


def _ray_box_hits(origins: np.ndarray, dirs: np.ndarray, scene: Scene):
    """Slab test of N rays against all boxes.

    Returns (t_near, axis, sign) of the nearest entry per ray, with ties on
    entry distance broken toward the lowest class id. t is +inf for misses.
    """
    inv = np.where(dirs != 0.0, 1.0 / np.where(dirs == 0.0, 1.0, dirs), np.inf)
    t0 = (scene.box_min[None, :, :] - origins[:, None, :]) * inv[:, None, :]
    t1 = (scene.box_max[None, :, :] - origins[:, None, :]) * inv[:, None, :]
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    t_near = tmin.max(axis=2)
    t_far = tmax.min(axis=2)
    hit = (t_near <= t_far) & (t_far > 0) & (t_near > 1e-9)

    t_sel = np.where(hit, t_near, np.inf)
    # Lowest class id wins exact ties on the entry distance.
    tie_key = t_sel + scene.box_class[None, :] * 1e-12
    best = np.argmin(tie_key, axis=1)
    rows = np.arange(origins.shape[0])
    t_best = t_sel[rows, best]
    axis = tmin.argmax(axis=2)[rows, best]
    sign = np.where(dirs[rows, axis] > 0, -1.0, 1.0)  # outward normal opposes the ray
    return t_best, best, axis, sign


def render_frame(scene: Scene, pose: Pose, intr: Intrinsics, index: int = 0,
                 noise_sigma: float = 0.05) -> Frame:
    """Analytic render: per-pixel nearest ray/box hit gives depth and gt label.

    Feature image = class albedo * Lambertian shading + Gaussian noise, clipped
    to [0, 1]; the noise is seeded by (scene boxes hash-free route: index) so a
    frame re-renders bit-identically.
    """
    intr.validate()
    h, w = intr.height, intr.width
    rays_cam = intr.ray_grid().reshape(-1, 3)
    norms = np.linalg.norm(rays_cam, axis=1)
    dirs = (pose.rotation @ (rays_cam / norms[:, None]).T).T
    origins = np.broadcast_to(pose.translation, dirs.shape)

    t, box_idx, axis, sign = _ray_box_hits(origins, dirs, scene)
    # Camera-frame z of the hit point: ray param times unit-ray z component.
    unit_z = rays_cam[:, 2] / norms
    z = t * unit_z
    valid = np.isfinite(t) & (z > DEPTH_MIN) & (z <= DEPTH_MAX)

    depth = np.where(valid, z, 0.0).astype(np.float32)
    labels = np.full(h * w, UNDEFINED, dtype=np.uint8)
    labels[valid] = scene.box_class[box_idx[valid]]

    normals = np.zeros_like(dirs)
    normals[np.arange(dirs.shape[0]), axis] = sign
    palette = class_palette(scene.class_count)
    albedo = np.zeros((h * w, 3))
    albedo[valid] = palette[scene.box_class[box_idx[valid]]]
    lambert = np.clip(normals @ scene.light_dir, 0.0, 1.0)
    shade = 0.35 + 0.65 * lambert
    feats = albedo * shade[:, None]

    rng = np.random.default_rng([int(index), 31])
    feats = feats + rng.normal(0.0, noise_sigma, size=feats.shape)
    feats = np.clip(feats, 0.0, 1.0)
    feats[~valid] = 0.0

    return Frame(
        index=index,
        features=feats.reshape(h, w, 3).astype(np.float32),
        depth=depth.reshape(h, w),
        gt_labels=labels.reshape(h, w),
        pose=pose,
        intrinsics=intr,
    )


def flip_probability(frame: Frame, nm: NoiseModel, scene: Scene) -> np.ndarray:
    """Analytic per-pixel flip probability used by corrupt_labels (and tests)."""
    h, w = frame.depth.shape
    rays_cam = frame.intrinsics.ray_grid().reshape(-1, 3)
    norms = np.linalg.norm(rays_cam, axis=1)
    dirs = (frame.pose.rotation @ (rays_cam / norms[:, None]).T).T
    origins = np.broadcast_to(frame.pose.translation, dirs.shape)
    _, _, axis, sign = _ray_box_hits(origins, dirs, scene)
    normals = np.zeros_like(dirs)
    normals[np.arange(dirs.shape[0]), axis] = sign
    cos = np.abs(np.sum(dirs * normals, axis=1)).reshape(h, w)
    p = nm.base_flip_prob + nm.distance_coeff * frame.depth + nm.grazing_coeff * (1.0 - cos)
    p = np.clip(p, 0.0, 0.95)
    p[frame.depth <= 0] = 0.0
    return p


def corrupt_labels(frame: Frame, nm: NoiseModel, scene: Scene) -> np.ndarray:
    """Simulated deployment predictions: view-dependent flips plus blob errors.

    Deterministic in (nm.seed, frame.index). UNDEFINED pixels pass through
    untouched, and every emitted id is < scene.class_count.
    """
    h, w = frame.gt_labels.shape
    c = scene.class_count
    rng = np.random.default_rng([nm.seed, int(frame.index), 47])
    p = flip_probability(frame, nm, scene)

    out = frame.gt_labels.copy()
    defined = out != UNDEFINED
    flip = (rng.random((h, w)) < p) & defined

    conf = nm.confusion_for(c)
    cdf = np.cumsum(conf, axis=1)
    draw = rng.random((h, w))
    # Inverse-CDF sample of the replacement class from the true class's row.
    true = np.where(defined, out, 0).astype(np.int64)
    repl = (draw[..., None] >= cdf[true]).sum(axis=-1).astype(np.uint8)
    repl = np.minimum(repl, c - 1)
    out[flip] = repl[flip]

    n_blobs = int(rng.poisson(nm.blob_rate))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        true_at = int(frame.gt_labels[cy, cx])
        choices = [k for k in range(c) if k != true_at]
        blob_cls = int(choices[rng.integers(0, len(choices))])
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= nm.blob_radius ** 2
        out[disk & defined] = blob_cls
    return out
