"""Synthetic one-class detection scenes with graded object difficulty.

Each scene is a grid of per-anchor feature vectors. The first
``PRESENCE_CHANNELS`` channels carry unit-variance Gaussian background
noise plus, inside every planted bump, a smooth profile scaled by
``signal_gain * contrast``. Objects of difficulty 1..4 use decreasing
contrasts, so hard objects sit closer to the noise floor. Distractors are
unlabeled bumps of the same shape.

A bump's tint moves signal from the second half of the presence channels
to the first. Distractors carry the fixed ``distractor_tint``; each object
draws a tint uniformly from ``[0, appearance_spread * (1 - contrast)]``, so
faint objects can look like clutter while bright ones never do.

The remaining channels describe box geometry: inside a bump they hold the
anchor's distances to the bump edges in units of ``stride /
geometry_scale``, with noise growing as contrast falls; elsewhere they hold
the distances of a random virtual box around the anchor, so geometry alone
says nothing about presence.

Randomness for scene ``k`` is drawn from ``default_rng([seed, k])`` only,
so scenes can be generated independently and in any order.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .assignment import AnchorGrid
from .boxes import Box, corners_array
from .errors import ContractError

FORMAT_NAME = "splesp-dataset"
FORMAT_VERSION = 1
MAGIC = b"SPLESP-DATASET\n"
PRESENCE_CHANNELS = 4
GEOMETRY_CHANNELS = 4


@dataclass(frozen=True)
class DatasetSpec:
    n_train_scenes: int = 500
    n_test_scenes: int = 150
    seed: int = 0
    difficulty_mix: tuple[float, float, float, float] = (0.3, 0.3, 0.2, 0.2)
    distractor_rate: float = 0.5
    easy_label_noise: float = 0.05
    grid_width: int = 48
    grid_height: int = 27
    stride: float = 8.0
    feature_dim: int = 8
    contrasts: tuple[float, float, float, float] = (1.0, 0.6, 0.35, 0.25)
    distractor_contrast: float = 0.25
    distractor_tint: float = 0.7
    appearance_spread: float = 1.0
    signal_gain: float = 12.0
    geometry_noise: float = 0.3
    geometry_scale: float = 4.0
    min_objects: int = 1
    max_objects: int = 3
    max_distractors: int = 3
    min_size: float = 16.0
    max_size: float = 40.0

    def __post_init__(self):
        object.__setattr__(self, "difficulty_mix", tuple(float(x) for x in self.difficulty_mix))
        object.__setattr__(self, "contrasts", tuple(float(x) for x in self.contrasts))
        if self.n_train_scenes < 1 or self.n_test_scenes < 1:
            raise ContractError("scene counts must be at least 1")
        mix = self.difficulty_mix
        if len(mix) != 4 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ContractError(f"difficulty_mix must be 4 non-negative fractions summing to 1, got {mix}")
        for name in ("distractor_rate", "easy_label_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1]")
        if self.feature_dim != PRESENCE_CHANNELS + GEOMETRY_CHANNELS:
            raise ContractError(f"feature_dim must be {PRESENCE_CHANNELS + GEOMETRY_CHANNELS}")
        if not 0 < self.min_objects <= self.max_objects:
            raise ContractError("need 0 < min_objects <= max_objects")
        if self.min_size < 2 * self.stride:
            # the half-size core of smaller boxes can miss every anchor center
            raise ContractError("min_size must be at least two strides")

    @property
    def grid(self) -> AnchorGrid:
        return AnchorGrid(self.grid_width, self.grid_height, self.stride)

    @property
    def scene_size(self) -> tuple[float, float]:
        return (self.grid_width * self.stride, self.grid_height * self.stride)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["difficulty_mix"] = list(self.difficulty_mix)
        d["contrasts"] = list(self.contrasts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass(frozen=True)
class ObjectSample:
    gt_box: Box
    difficulty: int
    is_easy_labeled: bool
    object_id: int

    def __post_init__(self):
        if self.difficulty not in (1, 2, 3, 4):
            raise ContractError(f"difficulty must be 1..4, got {self.difficulty}")


@dataclass
class Scene:
    features: np.ndarray
    objects: list[ObjectSample]
    scene_id: int
    split: str
    distractors: list[Box] = field(default_factory=list)

    @property
    def gt_boxes(self) -> list[Box]:
        return [o.gt_box for o in self.objects]

    @property
    def gt_corners(self) -> np.ndarray:
        return corners_array(self.gt_boxes)


@dataclass
class Dataset:
    spec: DatasetSpec
    train: list[Scene]
    test: list[Scene]


def _place(rng, spec: DatasetSpec, placed: list[Box], attempts: int = 200) -> Box | None:
    width, height = spec.scene_size
    margin = spec.stride
    for _ in range(attempts):
        w = rng.uniform(spec.min_size, spec.max_size)
        h = rng.uniform(spec.min_size, spec.max_size)
        cx = rng.uniform(w / 2, width - w / 2)
        cy = rng.uniform(h / 2, height - h / 2)
        box = Box(cx, cy, w, h)
        x1, y1, x2, y2 = box.corners()
        clear = all(
            x2 + margin <= o[0] or o[2] + margin <= x1 or y2 + margin <= o[1] or o[3] + margin <= y1
            for o in (p.corners() for p in placed)
        )
        if clear:
            return box
    return None


def _paint(features, ax, ay, box: Box, amplitude, geo_sigma, unit, rng, tint=0.0):
    x1, y1, x2, y2 = box.corners()
    inside = box.contains(ax, ay)
    u = (ax[inside] - box.cx) / (box.w / 2)
    v = (ay[inside] - box.cy) / (box.h / 2)
    profile = np.exp(-2.0 * (u * u + v * v))
    half = PRESENCE_CHANNELS // 2
    weights = np.array([1.0 + tint] * half + [1.0 - tint] * (PRESENCE_CHANNELS - half))
    features[inside, :PRESENCE_CHANNELS] += (amplitude * profile)[:, None] * weights
    px, py = ax[inside], ay[inside]
    geom = np.stack([px - x1, py - y1, x2 - px, y2 - py], axis=1) / unit
    geom += rng.normal(0.0, geo_sigma, size=geom.shape)
    features[inside, PRESENCE_CHANNELS:] = geom


def generate_scene(spec: DatasetSpec, scene_id: int, split: str, first_object_id: int = 0) -> Scene:
    """Generate one scene from ``(spec.seed, scene_id)``."""
    rng = np.random.default_rng([spec.seed, scene_id])
    grid = spec.grid
    ax, ay = grid.centers
    shape = grid.shape

    features = np.empty(shape + (spec.feature_dim,))
    features[..., :PRESENCE_CHANNELS] = rng.normal(0.0, 1.0, size=shape + (PRESENCE_CHANNELS,))
    # virtual box per background anchor: random extent, anchor uniform inside
    unit = spec.stride / spec.geometry_scale
    vw = rng.uniform(spec.min_size, spec.max_size, size=shape) / unit
    vh = rng.uniform(spec.min_size, spec.max_size, size=shape) / unit
    fx = rng.uniform(0.0, 1.0, size=shape)
    fy = rng.uniform(0.0, 1.0, size=shape)
    features[..., PRESENCE_CHANNELS:] = np.stack([fx * vw, fy * vh, (1 - fx) * vw, (1 - fy) * vh], axis=-1)

    n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    n_dis = int(rng.binomial(spec.max_distractors, spec.distractor_rate))
    placed: list[Box] = []
    objects = []
    for k in range(n_obj):
        box = _place(rng, spec, placed)
        if box is None:
            break
        placed.append(box)
        difficulty = int(rng.choice(4, p=spec.difficulty_mix)) + 1
        noisy = rng.uniform() < spec.easy_label_noise
        easy = (difficulty <= 2) != noisy
        contrast = spec.contrasts[difficulty - 1]
        tint = spec.appearance_spread * (1.0 - contrast) * rng.uniform(0.0, 1.0)
        _paint(
            features, ax, ay, box, spec.signal_gain * contrast,
            spec.geometry_scale * (0.05 + spec.geometry_noise * (1.0 - contrast)), unit, rng, tint,
        )
        objects.append(ObjectSample(box, difficulty, bool(easy), first_object_id + len(objects)))
    distractors = []
    for _ in range(n_dis):
        box = _place(rng, spec, placed)
        if box is None:
            break
        placed.append(box)
        c = spec.distractor_contrast
        _paint(
            features, ax, ay, box, spec.signal_gain * c,
            spec.geometry_scale * (0.05 + spec.geometry_noise * (1.0 - c)), unit, rng, spec.distractor_tint,
        )
        distractors.append(box)
    return Scene(features, objects, scene_id, split, distractors)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Deterministic train/test scenes; scene ids ``0..n_train-1`` are train,
    the following ``n_test`` ids are test."""
    scenes = []
    next_id = 0
    for sid in range(spec.n_train_scenes + spec.n_test_scenes):
        split = "train" if sid < spec.n_train_scenes else "test"
        scene = generate_scene(spec, sid, split, next_id)
        next_id += len(scene.objects)
        scenes.append(scene)
    return Dataset(spec, scenes[: spec.n_train_scenes], scenes[spec.n_train_scenes:])


def easy_subset(scenes: list[Scene]) -> list[Scene]:
    """Same scenes, labeled with the easy-marked objects only.

    Scenes whose objects are all dropped stay in as background-only scenes.
    """
    return [replace(s, objects=[o for o in s.objects if o.is_easy_labeled]) for s in scenes]


def object_contrast(scene: Scene, obj: ObjectSample, grid: AnchorGrid) -> float:
    """Mean presence signal over the anchors inside the object's box."""
    ax, ay = grid.centers
    inside = obj.gt_box.contains(ax, ay)
    return float(scene.features[inside, :PRESENCE_CHANNELS].mean())


# -- serialization ---------------------------------------------------------

def _scene_record(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "objects": [
            {
                "object_id": o.object_id,
                "box": o.gt_box.as_list(),
                "difficulty": o.difficulty,
                "easy": o.is_easy_labeled,
            }
            for o in scene.objects
        ],
        "distractors": [b.as_list() for b in scene.distractors],
    }


def save_split(path, scenes: list[Scene], spec: DatasetSpec, split: str) -> None:
    """Write one split.

    Layout: the magic line ``SPLESP-DATASET``, one line of JSON header (format
    name and version, the generating spec, split name, feature shape and
    dtype, per-scene object records), then the float64 little-endian
    feature fields of all scenes back to back in header order.
    """
    shape = list(spec.grid.shape) + [spec.feature_dim]
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "split": split,
        "spec": spec.to_dict(),
        "feature_shape": shape,
        "dtype": "<f8",
        "scenes": [_scene_record(s) for s in scenes],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for s in scenes:
            fh.write(np.ascontiguousarray(s.features, dtype="<f8").tobytes())


def load_split(path) -> tuple[DatasetSpec, list[Scene], str]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ContractError(f"{path} is not a dataset file")
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
            raise ContractError(f"unsupported dataset format {header.get('format')} v{header.get('version')}")
        raw = fh.read()
    spec = DatasetSpec.from_dict(header["spec"])
    shape = tuple(header["feature_shape"])
    per_scene = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=header["dtype"]).astype(np.float64)
    if data.size != per_scene * len(header["scenes"]):
        raise ContractError(f"{path}: feature payload size does not match header")
    scenes = []
    for k, rec in enumerate(header["scenes"]):
        objects = [
            ObjectSample(Box(*o["box"]), o["difficulty"], o["easy"], o["object_id"]) for o in rec["objects"]
        ]
        feats = data[k * per_scene:(k + 1) * per_scene].reshape(shape)
        scenes.append(Scene(feats, objects, rec["scene_id"], header["split"], [Box(*b) for b in rec["distractors"]]))
    return spec, scenes, header["split"]


def save_dataset(directory, dataset: Dataset) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = (directory / "train.spd", directory / "test.spd")
    save_split(paths[0], dataset.train, dataset.spec, "train")
    save_split(paths[1], dataset.test, dataset.spec, "test")
    return paths


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    spec, train, _ = load_split(directory / "train.spd")
    spec_test, test, _ = load_split(directory / "test.spd")
    if spec_test != spec:
        raise ContractError("train and test files were generated from different specs")
    return Dataset(spec, train, test)


def summarize(dataset: Dataset) -> dict:
    """Object counts per difficulty and distractor counts, per split."""
    out = {}
    for split, scenes in (("train", dataset.train), ("test", dataset.test)):
        per_level = {k: 0 for k in (1, 2, 3, 4)}
        for s in scenes:
            for o in s.objects:
                per_level[o.difficulty] += 1
        out[split] = {
            "scenes": len(scenes),
            "objects": sum(per_level.values()),
            "objects_per_difficulty": per_level,
            "easy_labeled": sum(o.is_easy_labeled for s in scenes for o in s.objects),
            "distractors": sum(len(s.distractors) for s in scenes),
        }
    return out
