"""
Corpus files and the seeded synthetic scene generator.

Layout of a corpus directory::

    corpus.json         manifest (frame ids, splits, generator seed)
    camera.json         fisheye intrinsics
    frames/<id>.json    one FrameRecord per frame
    predictions.json    optional detection list

Masks are stored as column-major run lengths starting with background. Every
document carries ``"schemaVersion": 1`` and is written with sorted keys and
floats at 9 significant digits, so a load/save cycle is byte-identical.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from src.config import (
    FLOAT_DIGITS,
    MIN_INSTANCE_AREA,
    SCENE_BANDS,
    SCENE_FOCAL,
    SCENE_FOV_DEG,
    SCENE_L_SHAPE_PROBABILITY,
    SCENE_OBJECT_COUNT,
    SCENE_PEDESTRIAN_SIZE,
    SCENE_PLACEMENT_ATTEMPTS,
    SCENE_PLACEMENT_MARGIN,
    SCENE_VEHICLE_PROBABILITY,
    SCENE_VEHICLE_SIZE,
    SCENE_VFOV_DEG,
    SCHEMA_VERSION,
    SEED,
    SPLIT_FRACTIONS,
)
from src.errors import FormatError, PreconditionError, SchemaError
from src.fisheye import (
    CameraModel,
    Projection,
    ProjectionKind,
    WarpDirection,
    warp_array,
    warp_map,
)
from src.geometry import rasterize
from src.random_seed import make_rng
from src.representation_register import representation_from_dict, representation_to_dict
from src.schemas import (
    CameraView,
    ClassLabel,
    Detection,
    GroundTruth,
    InstanceMask,
    RasterFrame,
    RasterGrid,
    SimplePolygon,
)
from src.workers import ordered_map

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
CORPUS_FILE = "corpus.json"
CAMERA_FILE = "camera.json"
FRAMES_DIR = "frames"
PREDICTIONS_FILE = "predictions.json"


# Run-length encoding -----------------------------------------------------------


def encode_rle(mask: InstanceMask, image_size: tuple[int, int] | None = None) -> list[int]:
    """
    Column-major run lengths of a mask, starting with a background run.

    ``image_size`` places a cropped mask back on the full ``(width, height)``
    image before encoding.

    Examples
    --------
    >>> encode_rle(InstanceMask.from_array([[0, 0], [0, 0]]))
    [4]
    >>> encode_rle(InstanceMask.from_array([[0], [1], [0]]))
    [1, 1, 1]
    """
    if image_size is not None and (mask.grid.width, mask.grid.height) != tuple(image_size):
        mask = mask.placed(RasterFrame(*image_size))
    cells = mask.occupancy.ravel(order="F").astype(np.int8)
    changes = np.flatnonzero(np.diff(cells)) + 1
    bounds = np.concatenate([[0], changes, [cells.size]])
    runs = np.diff(bounds).tolist()
    if cells.size and cells[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def decode_rle(
    counts: Sequence[int],
    size: tuple[int, int],
    class_label: ClassLabel = ClassLabel.VEHICLE,
) -> InstanceMask:
    """
    Inverse of :func:`encode_rle` for a ``(width, height)`` grid.

    Raises
    ------
    FormatError
        If the counts are negative or do not sum to ``width * height``.
    """
    width, height = size
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or np.any(counts < 0):
        raise FormatError("RLE counts must be a list of non-negative integers")
    if int(counts.sum()) != width * height:
        raise FormatError(f"RLE counts sum to {int(counts.sum())}, expected {width * height}")
    values = np.arange(counts.size) % 2 == 1
    cells = np.repeat(values, counts)
    occupancy = cells.reshape((height, width), order="F")
    return InstanceMask(RasterGrid(RasterFrame(width, height), occupancy), class_label)


# Canonical JSON ------------------------------------------------------------------


def canonical(value: Any) -> Any:
    """Round every float to the stored precision, recursively."""
    if isinstance(value, float):
        return float(f"{value:.{FLOAT_DIGITS}g}")
    if isinstance(value, dict):
        return {k: canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    return value


def dumps(document: dict) -> str:
    return json.dumps(canonical(document), sort_keys=True, separators=(",", ":")) + "\n"


def write_json(path: Path, document: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document), encoding="utf-8")


def read_json(path: Path) -> dict:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"Cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(document, dict):
        raise SchemaError(str(path), "top level must be an object")
    return document


def check_fields(data: dict, known: set[str], path: str, strict: bool) -> None:
    """Reject (strict) or warn about fields outside ``known``."""
    unknown = sorted(set(data) - known)
    if not unknown:
        return
    if strict:
        raise SchemaError(f"{path}.{unknown[0]}", "unknown field")
    logger.warning("Ignoring unknown fields at %s: %s", path, ", ".join(unknown))


def _require(data: dict, key: str, path: str):
    if key not in data:
        raise SchemaError(f"{path}.{key}", "missing field")
    return data[key]


def _check_version(data: dict, path: str) -> None:
    version = _require(data, "schemaVersion", path)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}.schemaVersion", f"unsupported version {version}")


def _class_label(value, path: str) -> ClassLabel:
    try:
        return ClassLabel(value)
    except ValueError as exc:
        raise SchemaError(path, f"unknown class {value!r}") from exc


# Detections ----------------------------------------------------------------------


def detection_to_dict(det: Detection) -> dict:
    return {
        "frameId": det.frame_id,
        "id": det.detection_id,
        "class": det.class_label.value,
        "confidence": det.confidence,
        "rep": representation_to_dict(det.rep),
    }


def detection_from_dict(data: dict, path: str, strict: bool = False) -> Detection:
    check_fields(data, {"frameId", "id", "class", "confidence", "rep"}, path, strict)
    try:
        return Detection(
            rep=representation_from_dict(_require(data, "rep", path), f"{path}.rep"),
            class_label=_class_label(_require(data, "class", path), f"{path}.class"),
            confidence=float(_require(data, "confidence", path)),
            frame_id=str(_require(data, "frameId", path)),
            detection_id=int(data.get("id", 0)),
        )
    except PreconditionError as exc:
        raise SchemaError(path, str(exc)) from exc


def save_predictions(path: Path, dets: Sequence[Detection]) -> None:
    write_json(
        Path(path),
        {"schemaVersion": SCHEMA_VERSION, "detections": [detection_to_dict(d) for d in dets]},
    )


def load_predictions(path: Path, strict: bool = False) -> list[Detection]:
    document = read_json(Path(path))
    check_fields(document, {"schemaVersion", "detections"}, "predictions", strict)
    _check_version(document, "predictions")
    return [
        detection_from_dict(d, f"predictions.detections[{i}]", strict)
        for i, d in enumerate(_require(document, "detections", "predictions"))
    ]


# Frames and manifests ------------------------------------------------------------


@dataclass(eq=False)
class FrameRecord:
    """
    One annotated frame. Instance masks may be cropped to their occupied
    window; they are placed back on the full image when encoded.
    """

    frame_id: str
    camera: CameraView
    image_size: tuple[int, int]
    instances: list[InstanceMask]
    detections: list[Detection] | None = None

    def ground_truths(self) -> list[GroundTruth]:
        return [GroundTruth(self.frame_id, index, mask) for index, mask in enumerate(self.instances)]

    def to_dict(self) -> dict:
        document = {
            "schemaVersion": SCHEMA_VERSION,
            "frameId": self.frame_id,
            "camera": self.camera.value,
            "imageSize": list(self.image_size),
            "instances": [
                {"class": mask.class_label.value, "rle": encode_rle(mask, self.image_size)}
                for mask in self.instances
            ],
        }
        if self.detections is not None:
            document["detections"] = [detection_to_dict(d) for d in self.detections]
        return document

    @classmethod
    def from_dict(cls, data: dict, strict: bool = False, path: str = "frame") -> "FrameRecord":
        check_fields(
            data,
            {"schemaVersion", "frameId", "camera", "imageSize", "instances", "detections"},
            path,
            strict,
        )
        _check_version(data, path)
        frame_id = str(_require(data, "frameId", path))
        try:
            camera = CameraView(_require(data, "camera", path))
        except ValueError as exc:
            raise SchemaError(f"{path}.camera", f"unknown camera {data['camera']!r}") from exc
        size = _require(data, "imageSize", path)
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(s, int) and s > 0 for s in size)):
            raise SchemaError(f"{path}.imageSize", "expected [width, height] of positive integers")
        instances = []
        for index, item in enumerate(_require(data, "instances", path)):
            item_path = f"{path}.instances[{index}]"
            check_fields(item, {"class", "rle"}, item_path, strict)
            label = _class_label(_require(item, "class", item_path), f"{item_path}.class")
            try:
                mask = decode_rle(_require(item, "rle", item_path), tuple(size), label)
            except FormatError as exc:
                raise SchemaError(f"{item_path}.rle", str(exc)) from exc
            instances.append(mask.cropped())
        detections = None
        if "detections" in data:
            detections = [
                detection_from_dict(d, f"{path}.detections[{i}]", strict)
                for i, d in enumerate(data["detections"])
            ]
        return cls(frame_id, camera, (size[0], size[1]), instances, detections)


@dataclass(frozen=True)
class CorpusManifest:
    frames: tuple[str, ...]
    split: str = "all"
    split_fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    generator_seed: int | None = None
    splits: dict[str, tuple[str, ...]] = field(default_factory=dict, compare=False)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        if len(set(self.frames)) != len(self.frames):
            raise PreconditionError("Frame ids must be unique within a corpus")
        _check_fractions(self.split_fractions)

    def to_dict(self) -> dict:
        document = {
            "schemaVersion": self.schema_version,
            "frames": list(self.frames),
            "split": self.split,
            "splitFractions": list(self.split_fractions),
            "splits": {name: list(ids) for name, ids in self.splits.items()},
        }
        if self.generator_seed is not None:
            document["generatorSeed"] = self.generator_seed
        return document

    @classmethod
    def from_dict(cls, data: dict, strict: bool = False, path: str = "corpus") -> "CorpusManifest":
        check_fields(
            data,
            {"schemaVersion", "frames", "split", "splitFractions", "splits", "generatorSeed"},
            path,
            strict,
        )
        _check_version(data, path)
        try:
            return cls(
                frames=tuple(str(f) for f in _require(data, "frames", path)),
                split=data.get("split", "all"),
                split_fractions=tuple(data.get("splitFractions", SPLIT_FRACTIONS)),
                generator_seed=data.get("generatorSeed"),
                splits={k: tuple(v) for k, v in data.get("splits", {}).items()},
            )
        except PreconditionError as exc:
            raise SchemaError(path, str(exc)) from exc


def _check_fractions(fractions: Sequence[float]) -> None:
    if len(fractions) != len(SPLIT_NAMES) or any(f <= 0 for f in fractions):
        raise PreconditionError(f"Need {len(SPLIT_NAMES)} positive split fractions, got {fractions}")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise PreconditionError(f"Split fractions must sum to 1, got {math.fsum(fractions)}")


def split_corpus(
    manifest: CorpusManifest,
    fractions: Sequence[float] = SPLIT_FRACTIONS,
    seed: int | None = None,
) -> dict[str, CorpusManifest]:
    """
    Seeded shuffle, then contiguous train/val/test partition.

    The first two parts get ``round(fraction * n)`` frames, the test split the rest.
    """
    _check_fractions(fractions)
    n = len(manifest.frames)
    if n < len(SPLIT_NAMES):
        raise PreconditionError(f"Cannot split {n} frames into {len(SPLIT_NAMES)} parts")
    order = make_rng(seed).permutation(n)
    shuffled = [manifest.frames[i] for i in order]
    n_train = min(n, round(fractions[0] * n))
    n_val = min(n - n_train, round(fractions[1] * n))
    parts = (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )
    return {
        name: CorpusManifest(
            frames=tuple(part),
            split=name,
            split_fractions=tuple(fractions),
            generator_seed=manifest.generator_seed,
        )
        for name, part in zip(SPLIT_NAMES, parts)
    }


@dataclass(eq=False)
class Corpus:
    manifest: CorpusManifest
    frames: dict[str, FrameRecord]
    camera: CameraModel | None = None

    def records(self) -> list[FrameRecord]:
        return [self.frames[frame_id] for frame_id in self.manifest.frames]

    def ground_truths(self) -> list[GroundTruth]:
        return [t for record in self.records() for t in record.ground_truths()]

    def masks(self) -> list[InstanceMask]:
        return [mask for record in self.records() for mask in record.instances]

    def cameras(self) -> dict[str, CameraView]:
        return {record.frame_id: record.camera for record in self.records()}


def save_corpus(corpus: Corpus, root: Path) -> None:
    root = Path(root)
    write_json(root / CORPUS_FILE, corpus.manifest.to_dict())
    if corpus.camera is not None:
        write_json(root / CAMERA_FILE, corpus.camera.to_dict())
    for record in corpus.records():
        write_json(root / FRAMES_DIR / f"{record.frame_id}.json", record.to_dict())


def load_corpus(root: Path, strict: bool = False) -> Corpus:
    """
    Read a corpus directory.

    Raises
    ------
    FormatError
        If a file is missing or not valid JSON.
    SchemaError
        If a document violates its schema; the message names the field path.
    """
    root = Path(root)
    manifest_path = root / CORPUS_FILE if root.is_dir() else root
    root = manifest_path.parent
    if not manifest_path.is_file():
        raise FormatError(f"No corpus manifest at {manifest_path}")
    manifest = CorpusManifest.from_dict(read_json(manifest_path), strict)
    camera = None
    if (root / CAMERA_FILE).is_file():
        camera = CameraModel.from_dict(read_json(root / CAMERA_FILE), strict)
    frames = {}
    for frame_id in manifest.frames:
        path = root / FRAMES_DIR / f"{frame_id}.json"
        if not path.is_file():
            raise FormatError(f"Missing frame file {path}")
        record = FrameRecord.from_dict(read_json(path), strict, f"frames/{frame_id}")
        if record.frame_id != frame_id:
            raise SchemaError(f"frames/{frame_id}.frameId", f"expected {frame_id!r}")
        frames[frame_id] = record
    logger.info("Loaded %d frames from %s", len(frames), root)
    return Corpus(manifest, frames, camera)


# Synthetic scenes ----------------------------------------------------------------


def default_plane() -> Projection:
    """Undistorted plane the generator draws on before warping into the fisheye image."""
    return Projection(
        ProjectionKind.RECTILINEAR,
        SCENE_FOCAL,
        fov_deg=SCENE_FOV_DEG,
        vertical_fov_deg=SCENE_VFOV_DEG,
    )


@dataclass(frozen=True)
class SceneSpec:
    """
    Attributes
    ----------
    seed : int
        Base seed; frame ``i`` draws from an independent stream derived from it.
    object_count : tuple of int
        Inclusive range of objects placed per frame.
    placement : {"any", "central", "peripheral"}
        Radial band of the undistorted plane object centers are drawn from.
    """

    seed: int = SEED
    object_count: tuple[int, int] = SCENE_OBJECT_COUNT
    placement: str = "any"
    vehicle_probability: float = SCENE_VEHICLE_PROBABILITY
    l_shape_probability: float = SCENE_L_SHAPE_PROBABILITY
    vehicle_size: tuple[tuple[float, float], tuple[float, float]] = SCENE_VEHICLE_SIZE
    pedestrian_size: tuple[tuple[float, float], tuple[float, float]] = SCENE_PEDESTRIAN_SIZE
    plane: Projection = field(default_factory=default_plane)

    def __post_init__(self):
        lo, hi = self.object_count
        if lo < 0 or hi < lo:
            raise PreconditionError(f"Invalid object count range {self.object_count}")
        if self.placement not in SCENE_BANDS:
            raise PreconditionError(
                f"Unknown placement {self.placement!r} (expected one of {', '.join(SCENE_BANDS)})"
            )
        for p in (self.vehicle_probability, self.l_shape_probability):
            if not 0.0 <= p <= 1.0:
                raise PreconditionError(f"Probability out of [0, 1]: {p}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "objectCount": list(self.object_count),
            "placement": self.placement,
            "vehicleProbability": self.vehicle_probability,
            "lShapeProbability": self.l_shape_probability,
        }


def _arc(cx, cy, radius, start, segments=6) -> list[tuple[float, float]]:
    angles = start + np.linspace(0.0, math.pi / 2, segments + 1)
    return [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles]


def rounded_rectangle(width: float, height: float, radius: float) -> np.ndarray:
    """Vertices of a rectangle centered at the origin with circular corners."""
    radius = min(radius, 0.49 * min(width, height))
    hw, hh = width / 2 - radius, height / 2 - radius
    points = (
        _arc(hw, hh, radius, 0.0)
        + _arc(-hw, hh, radius, math.pi / 2)
        + _arc(-hw, -hh, radius, math.pi)
        + _arc(hw, -hh, radius, 3 * math.pi / 2)
    )
    return np.array(points)


def capsule(width: float, height: float) -> np.ndarray:
    return rounded_rectangle(width, height, min(width, height) / 2)


def l_shape(width: float, height: float, notch: float = 0.55) -> np.ndarray:
    """An L: the full rectangle minus its top-right ``notch`` fraction on both axes."""
    x0, y0 = -width / 2, -height / 2
    x1, y1 = width / 2, height / 2
    xn = x1 - notch * width
    yn = y0 + (1 - notch) * height
    return np.array([(x0, y0), (x1, y0), (x1, yn), (xn, yn), (xn, y1), (x0, y1)])


def _sample_outline(rng: np.random.Generator, spec: SceneSpec) -> tuple[ClassLabel, np.ndarray]:
    if rng.random() < spec.vehicle_probability:
        (w_lo, w_hi), (h_lo, h_hi) = spec.vehicle_size
        width, height = rng.uniform(w_lo, w_hi), rng.uniform(h_lo, h_hi)
        if rng.random() < spec.l_shape_probability:
            return ClassLabel.VEHICLE, l_shape(width, height)
        return ClassLabel.VEHICLE, rounded_rectangle(width, height, 0.15 * min(width, height))
    (w_lo, w_hi), (h_lo, h_hi) = spec.pedestrian_size
    return ClassLabel.PEDESTRIAN, capsule(rng.uniform(w_lo, w_hi), rng.uniform(h_lo, h_hi))


def _place(
    rng: np.random.Generator,
    outline: np.ndarray,
    spec: SceneSpec,
    taken: list[tuple[float, float, float, float]],
) -> SimplePolygon | None:
    width, height = spec.plane.output_size
    band_lo, band_hi = SCENE_BANDS[spec.placement]
    margin = SCENE_PLACEMENT_MARGIN
    for _ in range(SCENE_PLACEMENT_ATTEMPTS):
        rho = rng.uniform(band_lo, band_hi)
        alpha = rng.uniform(0.0, 2 * math.pi)
        angle = rng.uniform(0.0, math.pi)
        c, s = math.cos(angle), math.sin(angle)
        center = (
            width / 2 + rho * width / 2 * math.cos(alpha),
            height / 2 + rho * height / 2 * math.sin(alpha),
        )
        points = outline @ np.array([[c, s], [-s, c]]) + center
        min_x, min_y = points.min(axis=0)
        max_x, max_y = points.max(axis=0)
        if min_x < margin or min_y < margin or max_x > width - margin or max_y > height - margin:
            continue
        bounds = (min_x - margin, min_y - margin, max_x + margin, max_y + margin)
        if any(
            bounds[0] < b[2] and b[0] < bounds[2] and bounds[1] < b[3] and b[1] < bounds[3]
            for b in taken
        ):
            continue
        taken.append(bounds)
        return SimplePolygon.from_array(points)
    return None


def frame_id_for(index: int) -> str:
    return f"{index:06d}"


def camera_view_for(index: int) -> CameraView:
    views = list(CameraView)
    return views[index % len(views)]


def generate_scene(spec: SceneSpec, cam: CameraModel, index: int = 0) -> FrameRecord:
    """
    Draw one synthetic frame.

    Shapes are placed without overlap on the undistorted plane, painted into a
    label image and warped into the fisheye image in one gather. Instances
    that end up smaller than the minimum area are dropped with a warning.
    """
    rng = make_rng(spec.seed, index)
    frame_id = frame_id_for(index)
    plane_frame = spec.plane.frame
    labels = np.zeros((plane_frame.height, plane_frame.width), dtype=np.int16)
    classes: list[ClassLabel] = []
    taken: list[tuple[float, float, float, float]] = []
    lo, hi = spec.object_count
    for _ in range(int(rng.integers(lo, hi + 1))):
        label, outline = _sample_outline(rng, spec)
        polygon = _place(rng, outline, spec, taken)
        if polygon is None:
            logger.debug("Frame %s: no free placement for a %s", frame_id, label.value)
            continue
        classes.append(label)
        labels[rasterize(polygon, plane_frame).occupancy] = len(classes)

    mapping = warp_map(cam, spec.plane, WarpDirection.DISTORT)
    fisheye_labels = warp_array(labels, mapping, fill=0)
    instances = []
    for number, label in enumerate(classes, start=1):
        occupancy = fisheye_labels == number
        area = int(np.count_nonzero(occupancy))
        if area < MIN_INSTANCE_AREA:
            logger.warning(
                "Frame %s: dropped %s instance with %d cells after warping",
                frame_id,
                label.value,
                area,
            )
            continue
        instances.append(InstanceMask(RasterGrid(mapping.destination, occupancy), label).cropped())
    return FrameRecord(frame_id, camera_view_for(index), cam.image_size, instances)


def generate_corpus(
    spec: SceneSpec,
    cam: CameraModel,
    frames: int,
    fractions: Sequence[float] = SPLIT_FRACTIONS,
    workers: int | None = None,
) -> Corpus:
    if frames < 1:
        raise PreconditionError(f"Need at least one frame, got {frames}")
    # Build the shared warp map once before fanning out.
    warp_map(cam, spec.plane, WarpDirection.DISTORT)
    records = ordered_map(lambda i: generate_scene(spec, cam, i), range(frames), workers)
    manifest = CorpusManifest(
        frames=tuple(r.frame_id for r in records),
        split_fractions=tuple(fractions),
        generator_seed=spec.seed,
    )
    if frames >= len(SPLIT_NAMES):
        splits = split_corpus(manifest, fractions, spec.seed)
        manifest = CorpusManifest(
            frames=manifest.frames,
            split_fractions=manifest.split_fractions,
            generator_seed=spec.seed,
            splits={name: part.frames for name, part in splits.items()},
        )
    logger.info(
        "Generated %d frames with %d instances",
        frames,
        sum(len(r.instances) for r in records),
    )
    return Corpus(manifest, {r.frame_id: r for r in records}, cam)
