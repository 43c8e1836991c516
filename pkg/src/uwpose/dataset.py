"""Manifest ingest, preprocessing, pose normalization, and stereo augmentation.

A dataset on disk is a CSV manifest plus image files. The manifest has the
header ``image_path,x,y,z,qw,qx,qy,qz,camera_id``; image paths are stored
relative to the manifest's own directory so a dataset directory can be moved
wholesale. Camera ids are ``left``/``right`` (``l``/``r`` accepted on read).

Normalization statistics (channel mean/std, position min/max) are always fit
on the training split alone; evaluation data reuses the training-set state.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry, imgio
from .errors import DegenerateQuaternionError, ManifestError

MANIFEST_COLUMNS = ("image_path", "x", "y", "z", "qw", "qx", "qy", "qz", "camera_id")
CAMERA_LEFT = "left"
CAMERA_RIGHT = "right"

_CAMERA_ALIASES = {"left": CAMERA_LEFT, "l": CAMERA_LEFT, "right": CAMERA_RIGHT, "r": CAMERA_RIGHT}

_DEGENERATE_SPAN = 1e-12


@dataclass
class SampleRecord:
    """One image-pose pair. ``image_path`` is absolute after loading."""

    image_path: str
    position: np.ndarray
    quaternion: np.ndarray
    camera_id: str = CAMERA_LEFT


def load_manifest(path) -> list:
    """Read a manifest CSV into records, in file order.

    Quaternions are normalized and canonicalized on load. Any malformed row,
    unnormalizable quaternion, or missing image file raises ManifestError
    naming the offending line.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file (missing header)") from None
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}:1: bad header {header!r}, expected {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} columns, got {len(row)}"
                )
            try:
                nums = [float(v) for v in row[1:8]]
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            camera = _CAMERA_ALIASES.get(row[8].strip().lower())
            if camera is None:
                raise ManifestError(f"{path}:{lineno}: unknown camera_id {row[8]!r}")
            try:
                quat = geometry.canonicalize(geometry.normalize(nums[3:7]))
            except DegenerateQuaternionError:
                raise ManifestError(
                    f"{path}:{lineno}: quaternion {tuple(nums[3:7])} cannot be normalized"
                ) from None
            img = row[0].strip()
            img = img if os.path.isabs(img) else os.path.normpath(os.path.join(base, img))
            if not os.path.isfile(img):
                raise ManifestError(f"{path}:{lineno}: image file not found: {img}")
            records.append(
                SampleRecord(
                    image_path=img,
                    position=np.array(nums[0:3], dtype=np.float64),
                    quaternion=quat,
                    camera_id=camera,
                )
            )
    return records


def write_manifest(path, records) -> None:
    """Write records as manifest CSV, with image paths relative to the manifest."""
    path = str(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for rec in records:
            try:
                rel = os.path.relpath(rec.image_path, base)
            except ValueError:
                rel = rec.image_path
            writer.writerow(
                [rel]
                + [repr(float(v)) for v in rec.position]
                + [repr(float(v)) for v in rec.quaternion]
                + [rec.camera_id]
            )


@dataclass
class NormalizationState:
    """Training-split statistics used to whiten inputs and scale positions.

    Positions map per axis to [-1, 1] via 2*(x - min)/(max - min) - 1.
    An axis whose span collapses below 1e-12 (e.g. constant depth) maps to 0
    and denormalizes back to the constant. Out-of-range positions clamp and
    bump ``clamp_events`` rather than erroring, since evaluation trajectories
    may leave the training extent slightly.
    """

    channel_mean: np.ndarray
    channel_std: np.ndarray
    pos_min: np.ndarray
    pos_max: np.ndarray
    clamp_events: int = field(default=0, compare=False)

    def __post_init__(self):
        self.channel_mean = np.asarray(self.channel_mean, dtype=np.float64).reshape(3)
        self.channel_std = np.asarray(self.channel_std, dtype=np.float64).reshape(3)
        self.pos_min = np.asarray(self.pos_min, dtype=np.float64).reshape(3)
        self.pos_max = np.asarray(self.pos_max, dtype=np.float64).reshape(3)
        if np.any(self.channel_std <= 0):
            raise ValueError(f"channel_std must be positive, got {self.channel_std}")

    @property
    def degenerate_axes(self) -> np.ndarray:
        return (self.pos_max - self.pos_min) < _DEGENERATE_SPAN

    def normalize_positions(self, pos: np.ndarray) -> np.ndarray:
        pos = np.asarray(pos, dtype=np.float64)
        span = self.pos_max - self.pos_min
        deg = self.degenerate_axes
        safe_span = np.where(deg, 1.0, span)
        out = 2.0 * (pos - self.pos_min) / safe_span - 1.0
        out = np.where(deg, 0.0, out)
        clipped = np.clip(out, -1.0, 1.0)
        n_clamped = int(np.sum(clipped != out))
        if n_clamped:
            self.clamp_events += n_clamped
            warnings.warn(
                f"{n_clamped} position component(s) outside the training extent were clamped",
                stacklevel=2,
            )
        return clipped

    def denormalize_positions(self, norm: np.ndarray) -> np.ndarray:
        norm = np.asarray(norm, dtype=np.float64)
        deg = self.degenerate_axes
        span = np.where(deg, 0.0, self.pos_max - self.pos_min)
        return np.where(deg, self.pos_min, self.pos_min + (norm + 1.0) * 0.5 * span)

    def to_dict(self) -> dict:
        return {
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "pos_min": self.pos_min.tolist(),
            "pos_max": self.pos_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationState":
        return cls(
            channel_mean=d["channel_mean"],
            channel_std=d["channel_std"],
            pos_min=d["pos_min"],
            pos_max=d["pos_max"],
        )


def fit_normalization(images, positions) -> NormalizationState:
    """Fit channel and position statistics on the training split.

    ``images`` are geometry-preprocessed (resized + cropped) float arrays in
    [0, 1], HxWx3. A channel with zero variance gets std 1 so whitening stays
    defined for flat synthetic imagery.
    """
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    mean = stack.mean(axis=(0, 1, 2))
    std = stack.std(axis=(0, 1, 2))
    std = np.where(std < _DEGENERATE_SPAN, 1.0, std)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return NormalizationState(
        channel_mean=mean,
        channel_std=std,
        pos_min=positions.min(axis=0),
        pos_max=positions.max(axis=0),
    )


def preprocess_image(img, state: NormalizationState, input_size: int = 224, mode: str = "center_crop") -> np.ndarray:
    """Resize + center crop + channel whitening; returns [3, S, S] float64."""
    if mode != "center_crop":
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ManifestError(f"preprocess_image expects HxWx3 RGB, got shape {img.shape}")
    geom = imgio.resize_and_center_crop(img, input_size)
    out = (geom - state.channel_mean) / state.channel_std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def normalize_pose(position, quaternion, state: NormalizationState) -> np.ndarray:
    """Pose to the 7-vector regression target: scaled position + unit quaternion."""
    return np.concatenate(
        [state.normalize_positions(position), np.asarray(quaternion, dtype=np.float64)]
    )


def denormalize_pose(vec7, state: NormalizationState):
    vec7 = np.asarray(vec7, dtype=np.float64)
    return state.denormalize_positions(vec7[:3]), vec7[3:7]


def split(records, train_fraction: float, seed: int):
    """Deterministic shuffled split into (train, test); both nonempty."""
    n = len(records)
    if n == 0:
        raise ManifestError("cannot split an empty record list")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    k = int(round(n * train_fraction))
    k = min(max(k, 1), n - 1) if n > 1 else 1
    perm = np.random.default_rng(seed).permutation(n)
    train = [records[i] for i in perm[:k]]
    test = [records[i] for i in perm[k:]]
    return train, test


def default_right_resolver(left_path: str):
    """Map ``..._l.<ext>`` to ``..._r.<ext>``; None when the pattern is absent."""
    stem, ext = os.path.splitext(left_path)
    if not stem.endswith("_l"):
        return None
    return stem[:-2] + "_r" + ext


def augment_stereo(records, t_lr=None, q_lr=None, right_image_resolver=None) -> list:
    """Append a right-camera record for every left record.

    Left records pass through untouched at the head of the returned list;
    the appended records carry the right-camera pose implied by the stereo
    extrinsic (default: 0.06 m along camera x). Records whose right image
    cannot be resolved are collected and reported in one error.
    """
    if right_image_resolver is None:
        right_image_resolver = default_right_resolver
    rights = []
    failures = []
    for rec in records:
        right_path = right_image_resolver(rec.image_path)
        if right_path is None or not os.path.isfile(right_path):
            failures.append(rec.image_path)
            continue
        pos, quat = geometry.right_camera_pose(rec.position, rec.quaternion, t_lr, q_lr)
        rights.append(
            SampleRecord(
                image_path=right_path,
                position=pos,
                quaternion=quat,
                camera_id=CAMERA_RIGHT,
            )
        )
    if failures:
        shown = ", ".join(failures[:5])
        more = "" if len(failures) <= 5 else f" (+{len(failures) - 5} more)"
        raise ManifestError(
            f"{len(failures)} record(s) have no resolvable right image: {shown}{more}"
        )
    return list(records) + rights


def load_geometry_images(records, input_size: int) -> np.ndarray:
    """Resize + crop only (no whitening), for fitting channel statistics."""
    out = np.empty((len(records), input_size, input_size, 3), dtype=np.float64)
    for i, rec in enumerate(records):
        out[i] = imgio.resize_and_center_crop(imgio.load_image(rec.image_path), input_size)
    return out


def whiten_geometry_images(geom: np.ndarray, state: NormalizationState) -> np.ndarray:
    """[N,S,S,3] in [0,1] -> whitened [N,3,S,S]."""
    out = (np.asarray(geom, dtype=np.float64) - state.channel_mean) / state.channel_std
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def pose_targets(records, state: NormalizationState) -> np.ndarray:
    targets = np.empty((len(records), 7), dtype=np.float64)
    for i, rec in enumerate(records):
        targets[i] = normalize_pose(rec.position, rec.quaternion, state)
    return targets


def prepare_arrays(records, state: NormalizationState, input_size: int):
    """Load and fully preprocess records into model-ready arrays.

    Returns (images [N,3,S,S], targets [N,7]) with targets in normalized
    coordinates. This is the one upfront pass; training touches no image
    files afterwards.
    """
    geom = load_geometry_images(records, input_size)
    return whiten_geometry_images(geom, state), pose_targets(records, state)
