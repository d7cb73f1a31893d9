"""Source ("human") motion: planar biped clips, lookahead features, clip files.

A human pose vector has 8 entries: root height, root pitch, then hip/knee/ankle
angles for the left leg followed by the right leg. Root x is kept alongside
each frame for root tracking but is not part of the pose.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

CLIP_FORMAT_VERSION = 1
MANIFEST_VERSION = 1
FRAME_DT = 1.0 / 30.0
POSE_DIM = 8
VEL_DIM = 9  # root xdot, root zdot, pitch rate, 6 joint rates
BLOCK_DIM = POSE_DIM + VEL_DIM
LOOKAHEADS = (1, 2, 10, 30)
FEATURE_DIM = len(LOOKAHEADS) * BLOCK_DIM
JOINT_NAMES = ("l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle")
POSE_FIELDS = ("root_height", "root_pitch") + JOINT_NAMES
STANDING_HEIGHT = 0.9
JOINT_BOX = 2.5
PRESETS = ("walk", "run", "hop", "sway", "stand")


class ClipFormatError(ValueError):
    """A clip or manifest file could not be parsed."""


class MotionConfigError(ValueError):
    """Invalid generator preset or parameters."""


@dataclass(frozen=True)
class HumanPose:
    root_height: float
    root_pitch: float
    joint_angles: tuple

    def to_vector(self):
        return np.array([self.root_height, self.root_pitch, *self.joint_angles], dtype=np.float64)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (POSE_DIM,):
            raise ValueError(f"human pose vector must have {POSE_DIM} entries, got {v.shape}")
        return cls(float(v[0]), float(v[1]), tuple(float(x) for x in v[2:]))


def finite_difference(values, dt):
    """Forward differences along axis 0; the last row repeats the previous one."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise ValueError("finite differencing needs at least 2 frames")
    rates = np.empty_like(values)
    rates[:-1] = (values[1:] - values[:-1]) / dt
    rates[-1] = rates[-2]
    return rates


@dataclass(eq=False)
class MotionClip:
    name: str
    frame_dt: float
    root_x: np.ndarray  # (T,)
    poses: np.ndarray  # (T, 8)
    velocities: np.ndarray = field(default=None)  # (T, 9)

    def __post_init__(self):
        self.root_x = np.asarray(self.root_x, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if not self.frame_dt > 0:
            raise ValueError(f"frame_dt must be positive, got {self.frame_dt}")
        if self.poses.ndim != 2 or self.poses.shape[1] != POSE_DIM:
            raise ValueError(f"poses must be (T, {POSE_DIM}), got {self.poses.shape}")
        if self.root_x.shape != (self.poses.shape[0],):
            raise ValueError("root_x and poses lengths differ")
        if len(self) < 2:
            raise ValueError("a clip needs at least 2 frames")
        if self.velocities is None:
            self.velocities = _velocities(self.root_x, self.poses, self.frame_dt)

    def __len__(self):
        return self.poses.shape[0]

    @property
    def duration(self):
        return (len(self) - 1) * self.frame_dt

    def pose(self, t):
        return HumanPose.from_vector(self.poses[t])

    def same_as(self, other):
        return (
            self.name == other.name
            and self.frame_dt == other.frame_dt
            and np.array_equal(self.root_x, other.root_x)
            and np.array_equal(self.poses, other.poses)
            and np.array_equal(self.velocities, other.velocities)
        )

    @cached_property
    def blocks(self):
        """Per-frame (pose, root velocity, joint rates) rows, shape (T, 17)."""
        return np.concatenate([self.poses, self.velocities], axis=1)

    @cached_property
    def feature_table(self):
        """human_feature for every frame, shape (T, 68)."""
        idx = np.arange(len(self))
        parts = [self.blocks[np.minimum(idx + k, len(self) - 1)] for k in LOOKAHEADS]
        return np.concatenate(parts, axis=1)


def _velocities(root_x, poses, dt):
    # columns: root xdot, root zdot (height rate), pitch rate, joint rates
    return finite_difference(np.column_stack([root_x, poses]), dt)


def finite_difference_velocities(clip):
    """Return a copy of ``clip`` with velocities recomputed by forward differences."""
    return MotionClip(clip.name, clip.frame_dt, clip.root_x.copy(), clip.poses.copy())


def human_feature(clip, t):
    if not 0 <= t < len(clip):
        raise IndexError(f"frame index {t} outside clip of length {len(clip)}")
    return clip.feature_table[t].copy()


def normalize_root_trajectory(clip, scale):
    """Start-anchored desired root track: (x_bar, xdot_bar) per frame."""
    if not scale > 0:
        raise ValueError(f"root scale must be positive, got {scale}")
    x_bar = scale * (clip.root_x - clip.root_x[0])
    xdot_bar = scale * clip.velocities[:, 0]
    return x_bar, xdot_bar


# -- procedural generator -----------------------------------------------------

PRESET_DEFAULTS = {
    "walk": dict(speed=1.0, frequency=1.0, amplitude=0.45),
    "run": dict(speed=2.0, frequency=1.5, amplitude=0.7),
    "hop": dict(speed=0.5, frequency=1.8, amplitude=0.5),
    "sway": dict(speed=0.0, frequency=0.8, amplitude=0.5),
    "stand": dict(speed=0.0, frequency=1.0, amplitude=0.0),
}


def generate_clip(preset, speed=None, frequency=None, amplitude=None, duration=6.0, seed=0, name=None):
    """Procedural planar gait clip at 30 fps.

    ``amplitude`` is the hip swing in radians (for ``stand`` it sets a static
    crouch). Seeds only perturb phase and amplitude slightly, so equal seeds
    give bit-identical clips.
    """
    if preset not in PRESETS:
        raise MotionConfigError(f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    d = PRESET_DEFAULTS[preset]
    speed = d["speed"] if speed is None else float(speed)
    frequency = d["frequency"] if frequency is None else float(frequency)
    amplitude = d["amplitude"] if amplitude is None else float(amplitude)
    if not math.isfinite(speed) or speed < 0 or speed > 5:
        raise MotionConfigError(f"speed must lie in [0, 5] m/s, got {speed}")
    if not 0 < frequency <= 5:
        raise MotionConfigError(f"frequency must lie in (0, 5] Hz, got {frequency}")
    if not 0 <= amplitude <= 1.2:
        raise MotionConfigError(f"amplitude must lie in [0, 1.2] rad, got {amplitude}")
    if not duration >= 1:
        raise MotionConfigError(f"duration must be at least 1 s, got {duration}")

    rng = np.random.default_rng(seed)
    n = int(round(duration / FRAME_DT)) + 1
    t = np.arange(n) * FRAME_DT
    phase0 = rng.uniform(0.0, 2.0 * math.pi)
    A = amplitude * rng.uniform(0.95, 1.05)
    ph = 2.0 * math.pi * frequency * t + phase0
    poses = np.zeros((n, POSE_DIM))
    if preset == "stand":
        speed = 0.0
        knee = amplitude
        poses[:, 0] = STANDING_HEIGHT - 0.25 * knee * knee
        poses[:, 1] = 0.1 * knee
        poses[:, 2:] = np.array([-0.5 * knee, knee, -0.5 * knee] * 2)
    elif preset in ("walk", "run"):
        run = preset == "run"
        lift = 1.6 if run else 1.1
        for side, off in ((0, 0.0), (1, math.pi)):
            p = ph + off
            poses[:, 2 + 3 * side] = A * np.sin(p)
            poses[:, 3 + 3 * side] = 0.1 + lift * A * 0.5 * (1.0 - np.cos(p + 0.6 * math.pi))
            poses[:, 4 + 3 * side] = 0.35 * A * np.sin(p - 0.4 * math.pi)
        bob = 0.05 if run else 0.02
        poses[:, 0] = STANDING_HEIGHT - (0.04 if run else 0.0) - bob * 0.5 * (1.0 - np.cos(2.0 * ph))
        poses[:, 1] = (0.15 if run else 0.05) + 0.03 * np.sin(2.0 * ph)
    elif preset == "hop":
        crouch = 0.5 * (1.0 + np.cos(ph))
        for side in (0, 1):
            poses[:, 2 + 3 * side] = -0.3 * A + 0.6 * A * crouch
            poses[:, 3 + 3 * side] = 0.1 + 1.4 * A * crouch
            poses[:, 4 + 3 * side] = -0.5 * A * crouch
        poses[:, 0] = STANDING_HEIGHT + 0.06 - 0.16 * crouch
        poses[:, 1] = 0.1 * A * crouch
    else:  # sway
        for side, off in ((0, 0.0), (1, math.pi)):
            p = ph + off
            poses[:, 2 + 3 * side] = 0.6 * A * np.sin(p)
            poses[:, 3 + 3 * side] = 0.2 + 0.8 * A * 0.5 * (1.0 + np.sin(p))
            poses[:, 4 + 3 * side] = -0.3 * A * np.sin(p)
        poses[:, 0] = STANDING_HEIGHT - 0.06 * 0.5 * (1.0 - np.cos(2.0 * ph))
        poses[:, 1] = 0.25 * A * np.sin(ph)

    root_x = speed * t
    if not (np.all(poses[:, 0] >= 0.5) and np.all(poses[:, 0] <= 1.2)):
        raise MotionConfigError("generated root height leaves [0.5, 1.2] m")
    if np.any(np.abs(poses[:, 2:]) > JOINT_BOX):
        raise MotionConfigError("generated joint angles leave the human joint box")
    return MotionClip(name or f"{preset}_{seed}", FRAME_DT, root_x, poses)


# walk x3, run x2, hop x2, sway x3, stand x2
DEFAULT_PRESETS = (
    ("walk", dict(speed=0.6, frequency=0.9, amplitude=0.4)),
    ("walk", dict(speed=0.9, frequency=1.0, amplitude=0.45)),
    ("walk", dict(speed=1.2, frequency=1.1, amplitude=0.5)),
    ("run", dict(speed=1.6, frequency=1.4, amplitude=0.65)),
    ("run", dict(speed=2.0, frequency=1.6, amplitude=0.75)),
    ("hop", dict(speed=0.3, frequency=1.5, amplitude=0.45)),
    ("hop", dict(speed=0.6, frequency=2.0, amplitude=0.55)),
    ("sway", dict(speed=0.0, frequency=0.5, amplitude=0.4)),
    ("sway", dict(speed=0.0, frequency=0.8, amplitude=0.6)),
    ("sway", dict(speed=0.0, frequency=1.2, amplitude=0.8)),
    ("stand", dict(amplitude=0.0)),
    ("stand", dict(amplitude=0.5)),
)


def default_clips(seed=0, presets=None, duration=6.0):
    """The default procedural corpus, optionally restricted to some presets."""
    clips = []
    counts = {}
    for i, (preset, params) in enumerate(DEFAULT_PRESETS):
        if presets is not None and preset not in presets:
            continue
        k = counts.get(preset, 0)
        counts[preset] = k + 1
        clips.append(
            generate_clip(preset, duration=duration, seed=seed * 1000 + i, name=f"{preset}_{k}", **params)
        )
    return clips


# -- datasets -----------------------------------------------------------------


@dataclass(eq=False)
class MotionDataset:
    clips: list
    weights: np.ndarray = None

    def __post_init__(self):
        if not self.clips:
            raise ValueError("a motion dataset needs at least one clip")
        if self.weights is None:
            self.weights = np.full(len(self.clips), 1.0 / len(self.clips))
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.clips),) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("dataset weights must be non-negative, one per clip")
        self.weights = w / w.sum()

    def __len__(self):
        return len(self.clips)


def sample_clip(dataset, rng):
    if len(dataset) == 1:
        return 0
    return int(rng.choice(len(dataset), p=dataset.weights))


# -- files ----------------------------------------------------------------------


def clip_to_dict(clip):
    frames = [[float(x), *map(float, p)] for x, p in zip(clip.root_x, clip.poses)]
    return {
        "version": CLIP_FORMAT_VERSION,
        "name": clip.name,
        "frame_dt": float(clip.frame_dt),
        "joint_names": list(JOINT_NAMES),
        "frames": frames,
    }


def save_clip(clip, path):
    with open(path, "w") as f:
        json.dump(clip_to_dict(clip), f, indent=None)
        f.write("\n")


def clip_from_dict(doc, source="<clip>"):
    if not isinstance(doc, dict):
        raise ClipFormatError(f"{source}: top level must be an object")
    for key in ("version", "name", "frame_dt", "frames"):
        if key not in doc:
            raise ClipFormatError(f"{source}: missing field {key!r}")
    if doc["version"] != CLIP_FORMAT_VERSION:
        raise ClipFormatError(f"{source}: field 'version' is {doc['version']!r}, expected {CLIP_FORMAT_VERSION}")
    dt = doc["frame_dt"]
    if not isinstance(dt, (int, float)) or isinstance(dt, bool) or not dt > 0 or not math.isfinite(dt):
        raise ClipFormatError(f"{source}: field 'frame_dt' must be a positive number, got {dt!r}")
    if "joint_names" in doc and list(doc["joint_names"]) != list(JOINT_NAMES):
        raise ClipFormatError(f"{source}: field 'joint_names' must be {list(JOINT_NAMES)}")
    frames = doc["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise ClipFormatError(f"{source}: field 'frames' must list at least 2 frames")
    rows = np.empty((len(frames), 1 + POSE_DIM))
    for i, fr in enumerate(frames):
        if not isinstance(fr, list) or len(fr) != 1 + POSE_DIM:
            n = len(fr) if isinstance(fr, list) else type(fr).__name__
            raise ClipFormatError(f"{source}: field 'frames' frame {i} has {n} values, expected {1 + POSE_DIM}")
        try:
            rows[i] = [float(v) for v in fr]
        except (TypeError, ValueError):
            raise ClipFormatError(f"{source}: field 'frames' frame {i} holds a non-numeric value") from None
        if not np.all(np.isfinite(rows[i])):
            raise ClipFormatError(f"{source}: field 'frames' frame {i} holds a non-finite value")
    return MotionClip(str(doc["name"]), float(dt), rows[:, 0], rows[:, 1:])


def load_clip(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{path}: not valid JSON ({exc})") from None
    return clip_from_dict(doc, str(path))


def write_dataset(out_dir, clips, weights=None):
    """Write clips plus ``manifest.json``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    if weights is None:
        weights = [1.0 / len(clips)] * len(clips)
    entries = []
    for clip, w in zip(clips, weights):
        fname = f"{clip.name}.json"
        save_clip(clip, os.path.join(out_dir, fname))
        entries.append({"path": fname, "weight": float(w)})
    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump({"version": MANIFEST_VERSION, "clips": entries}, f, indent=2)
        f.write("\n")
    return manifest


def load_dataset(path):
    """Load a dataset from a directory holding ``manifest.json`` (or the manifest itself)."""
    manifest = os.path.join(path, "manifest.json") if os.path.isdir(path) else path
    root = os.path.dirname(os.path.abspath(manifest))
    try:
        with open(manifest) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{manifest}: not valid JSON ({exc})") from None
    if doc.get("version") != MANIFEST_VERSION or not isinstance(doc.get("clips"), list):
        raise ClipFormatError(f"{manifest}: expected version {MANIFEST_VERSION} with a 'clips' list")
    clips = [load_clip(os.path.join(root, e["path"])) for e in doc["clips"]]
    weights = [float(e.get("weight", 1.0)) for e in doc["clips"]]
    return MotionDataset(clips, np.array(weights))
