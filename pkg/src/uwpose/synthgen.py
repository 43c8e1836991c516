"""Procedural underwater-tank scene renderer and trajectory generator.

The scene is an axis-aligned box of textured walls (world frame: z up, box
spanning [0, extent] per axis) containing one vertical pipe, rendered by
per-pixel ray casting through a pinhole camera. Camera axes follow the
usual computer-vision convention: x right, y down, z forward (viewing
direction). A yaw of 0 points the camera along world +y; positive yaw
rotates it about world z.

Wall and pipe textures are multi-octave value noise sampled from seeded
64x64 lattices, so a scene is fully determined by its config: same
(pose, config, noise key) always yields a bit-identical image. Optional
degradations model the look of water: exponential distance attenuation,
a green color cast, gaussian blur, and seeded per-frame pixel noise.

Three trajectory families are provided: a helix around the pipe with the
camera yawed to face it, a constant-depth boustrophedon sweep with fixed
orientation (translation only), and in-place yaw sweeps at a set of anchor
points.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import dataset, geometry, imgio
from .errors import InvalidConfigError, OutOfBoundsError

_EPS = 1e-9
_LATTICE = 64

# base tints: floor/ceiling sandy, walls in distinguishable muted colors,
# pipe rusty so it stands out against every wall
_WALL_TINTS = np.array(
    [
        [0.72, 0.62, 0.48],  # x = 0
        [0.55, 0.62, 0.72],  # x = extent
        [0.60, 0.72, 0.55],  # y = 0
        [0.70, 0.58, 0.66],  # y = extent
        [0.76, 0.70, 0.52],  # z = 0 (floor)
        [0.50, 0.58, 0.62],  # z = extent (ceiling)
    ]
)
_PIPE_TINT = np.array([0.62, 0.33, 0.22])


@dataclass
class PipeConfig:
    """Vertical cylinder landmark: centered at ``center``, axis along z."""

    center: tuple = (1.0, 2.0, 1.0)
    radius: float = 0.12
    height: float = 1.6


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    focal_px: float = 0.0  # 0 -> width/2, i.e. a 90 degree horizontal field of view

    def __post_init__(self):
        self.width = int(self.width)
        self.height = int(self.height)
        if not (1 <= self.width <= 256 and 1 <= self.height <= 256):
            raise InvalidConfigError(
                f"image size must be within 1..256, got {self.width}x{self.height}"
            )
        if self.focal_px == 0.0:
            self.focal_px = self.width / 2.0
        self.focal_px = float(self.focal_px)
        if self.focal_px <= 0:
            raise InvalidConfigError(f"focal_px must be positive, got {self.focal_px}")

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "focal_px": self.focal_px}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(**d)


@dataclass
class SceneConfig:
    extent: tuple = (2.0, 4.0, 2.0)
    seed: int = 0
    pipe: PipeConfig = field(default_factory=PipeConfig)
    texture_octaves: int = 4
    texture_scale: float = 8.0  # noise lattice cells per meter
    attenuation: float = 0.0  # exponential falloff per meter of ray length
    blur_sigma: float = 0.0
    noise_std: float = 0.0
    green_tint: float = 0.0

    def __post_init__(self):
        self.extent = tuple(float(e) for e in self.extent)
        self.validate()

    def validate(self) -> None:
        if len(self.extent) != 3 or any(e <= 0 for e in self.extent):
            raise InvalidConfigError(f"extent must be 3 positive lengths, got {self.extent}")
        if self.texture_octaves < 0:
            raise InvalidConfigError(f"texture_octaves must be >= 0, got {self.texture_octaves}")
        if self.pipe.radius <= 0 or self.pipe.height <= 0:
            raise InvalidConfigError(
                f"pipe radius/height must be positive, got {self.pipe.radius}/{self.pipe.height}"
            )
        cx, cy, cz = self.pipe.center
        r, hh = self.pipe.radius, self.pipe.height / 2.0
        ex, ey, ez = self.extent
        if not (
            0 <= cx - r and cx + r <= ex and 0 <= cy - r and cy + r <= ey
            and 0 <= cz - hh and cz + hh <= ez
        ):
            raise InvalidConfigError(
                f"pipe (center {self.pipe.center}, r {r}, h {self.pipe.height}) "
                f"extends outside the tank extent {self.extent}"
            )

    def to_dict(self) -> dict:
        return {
            "extent": list(self.extent),
            "seed": self.seed,
            "pipe": {
                "center": list(self.pipe.center),
                "radius": self.pipe.radius,
                "height": self.pipe.height,
            },
            "texture_octaves": self.texture_octaves,
            "texture_scale": self.texture_scale,
            "attenuation": self.attenuation,
            "blur_sigma": self.blur_sigma,
            "noise_std": self.noise_std,
            "green_tint": self.green_tint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        pipe = d.pop("pipe", None)
        if pipe is not None:
            d["pipe"] = PipeConfig(
                center=tuple(pipe["center"]), radius=pipe["radius"], height=pipe["height"]
            )
        d["extent"] = tuple(d["extent"])
        return cls(**d)


@dataclass
class TrajectorySpec:
    """One of three path families; only the fields of ``kind`` are used."""

    kind: str = "spiral"
    sample_count: int = 100
    # spiral: helix of ``turns`` revolutions around the pipe axis
    spiral_radius: float = 0.8
    spiral_pitch: float = 0.3  # z rise per revolution
    spiral_turns: float = 3.0
    spiral_z_start: float = 0.4
    # lawnmower: constant-depth boustrophedon, camera looking straight down
    row_spacing: float = 0.5
    depth: float = 1.0  # the fixed z
    # rotation_at_points: full yaw sweeps at fixed anchors
    anchors: tuple = ()  # empty -> a default five-point pattern
    yaw_sweep: float = 2.0 * np.pi

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in ("spiral", "lawnmower", "rotation_at_points"):
            raise InvalidConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.sample_count < 1:
            raise InvalidConfigError(f"sample_count must be positive, got {self.sample_count}")
        if self.kind == "spiral" and (self.spiral_radius <= 0 or self.spiral_turns <= 0):
            raise InvalidConfigError("spiral needs positive radius and turns")
        if self.kind == "lawnmower" and self.row_spacing <= 0:
            raise InvalidConfigError("lawnmower needs positive row_spacing")
        if self.kind == "rotation_at_points" and self.yaw_sweep <= 0:
            raise InvalidConfigError("rotation_at_points needs positive yaw_sweep")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sample_count": self.sample_count,
            "spiral_radius": self.spiral_radius,
            "spiral_pitch": self.spiral_pitch,
            "spiral_turns": self.spiral_turns,
            "spiral_z_start": self.spiral_z_start,
            "row_spacing": self.row_spacing,
            "depth": self.depth,
            "anchors": [list(a) for a in self.anchors],
            "yaw_sweep": self.yaw_sweep,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        d = dict(d)
        if "anchors" in d:
            d["anchors"] = tuple(tuple(a) for a in d["anchors"])
        return cls(**d)


# camera base attitude: x right, y down -> looking along world +y
_Q_FORWARD = geometry.from_axis_angle([1.0, 0.0, 0.0], -np.pi / 2.0)
# looking straight down at the floor
_Q_DOWN = geometry.from_axis_angle([1.0, 0.0, 0.0], np.pi)


def yaw_quaternion(yaw: float) -> np.ndarray:
    """Horizontal viewing direction (-sin yaw, cos yaw, 0), canonical form."""
    q = geometry.hamilton(geometry.from_axis_angle([0.0, 0.0, 1.0], yaw), _Q_FORWARD)
    return geometry.canonicalize(q)


def _spiral(spec: TrajectorySpec, scene: SceneConfig):
    n = spec.sample_count
    cx, cy = scene.pipe.center[0], scene.pipe.center[1]
    t = np.zeros(1) if n == 1 else np.arange(n) / (n - 1)
    alpha = 2.0 * np.pi * spec.spiral_turns * t
    pos = np.stack(
        [
            cx + spec.spiral_radius * np.cos(alpha),
            cy + spec.spiral_radius * np.sin(alpha),
            spec.spiral_z_start + spec.spiral_pitch * spec.spiral_turns * t,
        ],
        axis=1,
    )
    # face the pipe axis: view direction opposite the radial direction
    quats = np.stack([yaw_quaternion(a + np.pi / 2.0) for a in alpha])
    return pos, quats


def _lawnmower(spec: TrajectorySpec, scene: SceneConfig):
    ex, ey, _ = scene.extent
    x_lo, x_hi = 0.2 * ex, 0.8 * ex
    y = 0.2 * ey
    verts = []
    forward = True
    while y <= 0.8 * ey + _EPS:
        if forward:
            verts += [(x_lo, y), (x_hi, y)]
        else:
            verts += [(x_hi, y), (x_lo, y)]
        forward = not forward
        y += spec.row_spacing
    verts = np.array(verts)
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = spec.sample_count
    s = np.zeros(1) if n == 1 else np.arange(n) * (cum[-1] / (n - 1))
    xs = np.interp(s, cum, verts[:, 0])
    ys = np.interp(s, cum, verts[:, 1])
    pos = np.stack([xs, ys, np.full(n, spec.depth)], axis=1)
    quats = np.tile(geometry.canonicalize(_Q_DOWN), (n, 1))
    return pos, quats


def _default_anchors(scene: SceneConfig):
    ex, ey, ez = scene.extent
    z = 0.5 * ez
    return (
        (0.25 * ex, 0.25 * ey, z),
        (0.75 * ex, 0.25 * ey, z),
        (0.25 * ex, 0.75 * ey, z),
        (0.75 * ex, 0.75 * ey, z),
        (0.5 * ex, 0.85 * ey, z),
    )


def _rotation_at_points(spec: TrajectorySpec, scene: SceneConfig):
    anchors = spec.anchors if spec.anchors else _default_anchors(scene)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
    k = spec.sample_count // len(anchors)
    if k < 1:
        raise InvalidConfigError(
            f"sample_count {spec.sample_count} below anchor count {len(anchors)}"
        )
    # endpoint excluded so a full-circle sweep does not repeat its first view
    yaws = spec.yaw_sweep * np.arange(k) / k
    pos = np.repeat(anchors, k, axis=0)
    quats = np.stack([yaw_quaternion(y) for y in yaws] * len(anchors))
    return pos, quats


def generate_trajectory(spec: TrajectorySpec, scene: SceneConfig):
    """Poses along the requested path: (positions [N,3], quaternions [N,4]).

    Every pose is checked against the scene extent; the first sample outside
    it aborts generation.
    """
    spec.validate()
    scene.validate()
    if spec.kind == "spiral":
        pos, quats = _spiral(spec, scene)
    elif spec.kind == "lawnmower":
        pos, quats = _lawnmower(spec, scene)
    else:
        pos, quats = _rotation_at_points(spec, scene)
    extent = np.asarray(scene.extent)
    bad = np.nonzero(np.any((pos < 0) | (pos > extent), axis=1))[0]
    if bad.size:
        i = int(bad[0])
        raise OutOfBoundsError(
            f"trajectory sample {i} at {tuple(pos[i])} leaves the scene extent {scene.extent}"
        )
    return pos, quats


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_lattice_cache: dict = {}


def _lattice(seed: int, surface: int) -> np.ndarray:
    key = (int(seed), int(surface))
    tab = _lattice_cache.get(key)
    if tab is None:
        tab = np.random.default_rng((key[0], 100 + key[1])).random((_LATTICE, _LATTICE))
        _lattice_cache[key] = tab
    return tab


def _noise(table: np.ndarray, u: np.ndarray, v: np.ndarray, octaves: int) -> np.ndarray:
    """Multi-octave value noise in [0,1]; octaves=0 gives a flat 0.5."""
    if octaves <= 0:
        return np.full(u.shape, 0.5)
    total = np.zeros(u.shape)
    scale = 0.0
    for o in range(octaves):
        f, amp = 2.0**o, 0.5**o
        uu, vv = u * f, v * f
        i0 = np.floor(uu).astype(np.intp)
        j0 = np.floor(vv).astype(np.intp)
        fu, fv = uu - i0, vv - j0
        i0 %= _LATTICE
        j0 %= _LATTICE
        i1 = (i0 + 1) % _LATTICE
        j1 = (j0 + 1) % _LATTICE
        val = (
            table[i0, j0] * (1 - fu) * (1 - fv)
            + table[i1, j0] * fu * (1 - fv)
            + table[i0, j1] * (1 - fu) * fv
            + table[i1, j1] * fu * fv
        )
        total += amp * val
        scale += amp
    return total / scale


def camera_rays(quaternion, cam: CameraConfig):
    """Unit world-frame ray directions for every pixel, shape [H,W,3]."""
    xs = (np.arange(cam.width) + 0.5 - cam.width / 2.0) / cam.focal_px
    ys = (np.arange(cam.height) + 0.5 - cam.height / 2.0) / cam.focal_px
    dx, dy = np.meshgrid(xs, ys)
    dirs = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    rot = geometry.quat_to_matrix(quaternion)
    dirs = dirs @ rot.T
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def project(point, position, quaternion, cam: CameraConfig):
    """World point to float pixel coordinates (u, v); None if behind the camera."""
    rot = geometry.quat_to_matrix(quaternion)
    p = rot.T @ (np.asarray(point, dtype=np.float64) - np.asarray(position, dtype=np.float64))
    if p[2] <= _EPS:
        return None
    u = cam.focal_px * p[0] / p[2] + cam.width / 2.0 - 0.5
    v = cam.focal_px * p[1] / p[2] + cam.height / 2.0 - 0.5
    return u, v


def render(position, quaternion, cam: CameraConfig, scene: SceneConfig, noise_key=()) -> np.ndarray:
    """Ray-cast one view; float64 HxWx3 in [0,1].

    ``noise_key`` extends the scene seed for the per-frame pixel noise stream
    (ignored when noise_std is 0).
    """
    pos = np.asarray(position, dtype=np.float64)
    extent = np.asarray(scene.extent)
    if np.any(pos < 0) or np.any(pos > extent):
        raise OutOfBoundsError(f"camera at {tuple(pos)} outside scene extent {scene.extent}")
    dirs = camera_rays(quaternion, cam)
    h, w = dirs.shape[:2]

    # nearest wall along each ray
    t_wall = np.full((h, w), np.inf)
    wall_id = np.zeros((h, w), dtype=np.intp)
    for ax in range(3):
        d = dirs[..., ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ax = np.where(
                d > _EPS,
                (extent[ax] - pos[ax]) / d,
                np.where(d < -_EPS, -pos[ax] / d, np.inf),
            )
        ids = np.where(d > 0, 2 * ax + 1, 2 * ax)
        closer = t_ax < t_wall
        t_wall = np.where(closer, t_ax, t_wall)
        wall_id = np.where(closer, ids, wall_id)

    # pipe: lateral surface then end caps
    cx, cy, cz = scene.pipe.center
    r = scene.pipe.radius
    z_lo, z_hi = cz - scene.pipe.height / 2.0, cz + scene.pipe.height / 2.0
    ox, oy = pos[0] - cx, pos[1] - cy
    dxw, dyw, dzw = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    a = dxw * dxw + dyw * dyw
    b = 2.0 * (ox * dxw + oy * dyw)
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4.0 * a * c
    t_cyl = np.full((h, w), np.inf)
    ok = (disc > 0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sgn in (-1.0, 1.0):
            t = np.where(ok, (-b + sgn * sq) / (2.0 * a), np.inf)
            z = pos[2] + t * dzw
            valid = ok & (t > _EPS) & (z >= z_lo) & (z <= z_hi)
            t_cyl = np.where(valid & (t < t_cyl), t, t_cyl)
        for z_cap in (z_lo, z_hi):
            t = np.where(np.abs(dzw) > _EPS, (z_cap - pos[2]) / dzw, np.inf)
            px = pos[0] + t * dxw - cx
            py = pos[1] + t * dyw - cy
            valid = (t > _EPS) & (px * px + py * py <= r * r)
            t_cyl = np.where(valid & (t < t_cyl), t, t_cyl)

    hit_pipe = t_cyl < t_wall
    t_hit = np.where(hit_pipe, t_cyl, t_wall)
    points = pos + t_hit[..., None] * dirs

    colors = np.zeros((h, w, 3))
    uv_axes = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for wid in range(6):
        mask = (~hit_pipe) & (wall_id == wid)
        if not np.any(mask):
            continue
        ua, va = uv_axes[wid // 2]
        u = points[..., ua][mask] * scene.texture_scale
        v = points[..., va][mask] * scene.texture_scale
        tex = _noise(_lattice(scene.seed, wid), u, v, scene.texture_octaves)
        colors[mask] = _WALL_TINTS[wid] * (0.45 + 0.55 * tex)[:, None]
    if np.any(hit_pipe):
        theta = np.arctan2(points[..., 1][hit_pipe] - cy, points[..., 0][hit_pipe] - cx)
        u = (theta / (2.0 * np.pi) + 0.5) * (2.0 * np.pi * r) * scene.texture_scale
        v = points[..., 2][hit_pipe] * scene.texture_scale
        tex = _noise(_lattice(scene.seed, 6), u, v, scene.texture_octaves)
        colors[hit_pipe] = _PIPE_TINT * (0.45 + 0.55 * tex)[:, None]

    if scene.attenuation > 0:
        colors *= np.exp(-scene.attenuation * t_hit)[..., None]
    if scene.green_tint > 0:
        g = scene.green_tint
        colors *= np.array([1.0 - 0.5 * g, 1.0, 1.0 - 0.3 * g])
    if scene.blur_sigma > 0:
        colors = imgio.gaussian_blur(colors, scene.blur_sigma)
    if scene.noise_std > 0:
        rng = np.random.default_rng((int(scene.seed), 200) + tuple(int(k) for k in noise_key))
        colors = colors + rng.normal(0.0, scene.noise_std, size=colors.shape)
    return np.clip(colors, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


def generate_dataset(
    scene: SceneConfig,
    spec: TrajectorySpec,
    cam: CameraConfig,
    out_dir,
    stereo: bool = False,
    t_lr=None,
    q_lr=None,
) -> str:
    """Render a trajectory into ``out_dir/images`` plus a manifest CSV.

    With stereo on, each pose contributes a left and a right image (manifest
    rows interleaved per pose) where the right pose follows the stereo
    extrinsic (default 0.06 m along camera x).
    """
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    positions, quaternions = generate_trajectory(spec, scene)
    records = []
    for i in range(len(positions)):
        path = os.path.join(img_dir, f"{i:06d}_l.png")
        imgio.write_png(path, imgio.to_uint8(render(positions[i], quaternions[i], cam, scene, (i, 0))))
        records.append(
            dataset.SampleRecord(
                image_path=path,
                position=positions[i],
                quaternion=quaternions[i],
                camera_id=dataset.CAMERA_LEFT,
            )
        )
        if stereo:
            rp, rq = geometry.right_camera_pose(positions[i], quaternions[i], t_lr, q_lr)
            rpath = os.path.join(img_dir, f"{i:06d}_r.png")
            imgio.write_png(rpath, imgio.to_uint8(render(rp, rq, cam, scene, (i, 1))))
            records.append(
                dataset.SampleRecord(
                    image_path=rpath, position=rp, quaternion=rq, camera_id=dataset.CAMERA_RIGHT
                )
            )
    manifest = os.path.join(out_dir, "manifest.csv")
    dataset.write_manifest(manifest, records)
    return manifest


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def preset(name: str):
    """Named (scene, trajectory, camera) bundles at two physical scales."""
    if name == "sim-spiral":
        scene = SceneConfig(
            extent=(2.0, 4.0, 2.0),
            pipe=PipeConfig(center=(1.0, 2.0, 1.0), radius=0.12, height=1.6),
            attenuation=0.35,
            green_tint=0.25,
        )
        spec = TrajectorySpec(
            kind="spiral",
            sample_count=700,
            spiral_radius=0.8,
            spiral_pitch=0.3,
            spiral_turns=3.0,
            spiral_z_start=0.4,
        )
    elif name == "tank-lawnmower":
        scene = _tank_scene()
        spec = TrajectorySpec(kind="lawnmower", sample_count=600, row_spacing=0.08, depth=0.19)
    elif name == "tank-rotation":
        scene = _tank_scene()
        spec = TrajectorySpec(
            kind="rotation_at_points",
            sample_count=600,
            anchors=(
                (0.10, 0.15, 0.10),
                (0.30, 0.15, 0.10),
                (0.10, 0.45, 0.10),
                (0.30, 0.45, 0.10),
                (0.20, 0.48, 0.10),
            ),
        )
    else:
        raise InvalidConfigError(f"unknown preset {name!r}")
    return scene, spec, CameraConfig()


def _tank_scene() -> SceneConfig:
    return SceneConfig(
        extent=(0.4, 0.6, 0.2),
        pipe=PipeConfig(center=(0.2, 0.3, 0.1), radius=0.03, height=0.16),
        texture_scale=40.0,
        attenuation=0.8,
        green_tint=0.25,
    )
