"""Scene bundles and per-object analytics (2D boxes, depth profiles, 3D boxes).

A scene bundle directory holds four files::

    rgb.png     8-bit RGB, H x W
    depth.f32   little-endian float32, row-major, W*H values (metres)
    seg.png     16-bit single-channel instance ids, 0 = unlabeled
    meta.json   scene_id, width, height, environment_name, scene_attribute,
                scene_category, class_map {id: label}

Depth values that are non-positive or non-finite are invalid and never enter
any statistic.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from ._seeding import rng_for
from .errors import DimensionMismatchError, MetadataError, MissingFileError, NoDepthError, SceneFormatError
from .geometry import (
    FACES,
    CubeFace,
    ErpDims,
    directions_to_face_index,
    pixel_depth_to_point,
    pixels_to_directions,
)

RGB_FILE = "rgb.png"
DEPTH_FILE = "depth.f32"
SEG_FILE = "seg.png"
META_FILE = "meta.json"

THICKNESS_FLOOR_M = 0.6
THICKNESS_REL = 0.15
IQR_JACCARD_MIN = 0.30
MEDIAN_GAP_FLOOR_M = 0.5
MEDIAN_GAP_REL = 0.10


@dataclass(frozen=True)
class EnvMetadata:
    environment_name: str
    scene_attribute: str  # "indoor" | "outdoor"
    scene_category: str
    class_map: dict[int, str]

    def __post_init__(self):
        if not self.environment_name:
            raise MetadataError("environment_name must be non-empty")
        if self.scene_attribute not in ("indoor", "outdoor"):
            raise MetadataError(f"scene_attribute must be indoor|outdoor, got {self.scene_attribute!r}")


@dataclass(frozen=True, eq=False)
class SceneBundle:
    scene_id: str
    dims: ErpDims
    rgb: np.ndarray           # (H, W, 3) uint8
    depth: np.ndarray         # (H, W) float32
    segmentation: np.ndarray  # (H, W) uint16
    metadata: EnvMetadata

    def __post_init__(self):
        shape = self.dims.shape
        if self.rgb.shape != shape + (3,):
            raise DimensionMismatchError(f"rgb shape {self.rgb.shape} != {shape + (3,)}", RGB_FILE)
        if self.depth.shape != shape:
            raise DimensionMismatchError(f"depth shape {self.depth.shape} != {shape}", DEPTH_FILE)
        if self.segmentation.shape != shape:
            raise DimensionMismatchError(f"segmentation shape {self.segmentation.shape} != {shape}", SEG_FILE)
        if not valid_depth_mask(self.depth).any():
            raise SceneFormatError("depth map has no valid pixel", DEPTH_FILE)
        ids = np.unique(self.segmentation)
        unknown = [int(i) for i in ids if i != 0 and int(i) not in self.metadata.class_map]
        if unknown:
            raise MetadataError(f"no class label for instance ids {unknown}", META_FILE)


def valid_depth_mask(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


# -- I/O ----------------------------------------------------------------------

def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MetadataError(f"invalid JSON ({exc})", path) from exc
    if not isinstance(meta, dict):
        raise MetadataError("top-level value must be an object", path)
    required = ("scene_id", "width", "height", "environment_name", "scene_attribute",
                "scene_category", "class_map")
    missing = [k for k in required if k not in meta]
    if missing:
        raise MetadataError(f"missing keys {missing}", path)
    return meta


def load_scene(path) -> SceneBundle:
    """Read a scene bundle directory; see the module docstring for the layout."""
    root = Path(path)
    for name in (META_FILE, RGB_FILE, DEPTH_FILE, SEG_FILE):
        if not (root / name).is_file():
            raise MissingFileError("file not found", root / name)

    meta = _read_meta(root / META_FILE)
    try:
        dims = ErpDims(int(meta["width"]), int(meta["height"]))
        class_map = {int(k): str(v) for k, v in meta["class_map"].items()}
        env = EnvMetadata(str(meta["environment_name"]), str(meta["scene_attribute"]),
                          str(meta["scene_category"]), class_map)
    except MetadataError as exc:
        raise MetadataError(str(exc), root / META_FILE) from exc
    except (TypeError, ValueError, AttributeError) as exc:
        raise MetadataError(f"malformed field ({exc})", root / META_FILE) from exc

    try:
        with Image.open(root / RGB_FILE) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
        with Image.open(root / SEG_FILE) as im:
            seg = np.asarray(im)
    except OSError as exc:
        raise SceneFormatError(f"unreadable image ({exc})", root) from exc
    if seg.ndim != 2:
        raise SceneFormatError(f"segmentation must be single-channel, got shape {seg.shape}", root / SEG_FILE)
    seg = seg.astype(np.uint16)

    raw = np.fromfile(root / DEPTH_FILE, dtype="<f4")
    if raw.size != dims.width * dims.height:
        raise DimensionMismatchError(
            f"{raw.size} depth values, expected {dims.width}x{dims.height}={dims.width * dims.height}",
            root / DEPTH_FILE)
    depth = raw.reshape(dims.shape).astype(np.float32)

    try:
        return SceneBundle(str(meta["scene_id"]), dims, rgb, depth, seg, env)
    except SceneFormatError as exc:
        raise type(exc)(str(exc), root) from exc


def save_scene(bundle: SceneBundle, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    Image.fromarray(bundle.rgb, mode="RGB").save(root / RGB_FILE)
    Image.fromarray(bundle.segmentation.astype(np.uint16)).save(root / SEG_FILE)
    bundle.depth.astype("<f4").tofile(root / DEPTH_FILE)
    meta = {
        "scene_id": bundle.scene_id,
        "width": bundle.dims.width,
        "height": bundle.dims.height,
        "environment_name": bundle.metadata.environment_name,
        "scene_attribute": bundle.metadata.scene_attribute,
        "scene_category": bundle.metadata.scene_category,
        "class_map": {str(k): v for k, v in sorted(bundle.metadata.class_map.items())},
    }
    (root / META_FILE).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return root


# -- instances ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObjectInstance:
    instance_id: int
    class_label: str
    xs: np.ndarray  # mask column indices
    ys: np.ndarray  # mask row indices
    bbox2d: tuple[int, int, int, int]  # inclusive (x_min, y_min, x_max, y_max)

    @property
    def pixel_count(self) -> int:
        return int(self.xs.size)

    @property
    def width(self) -> int:
        return self.bbox2d[2] - self.bbox2d[0] + 1

    @property
    def height(self) -> int:
        return self.bbox2d[3] - self.bbox2d[1] + 1

    @property
    def bbox_area(self) -> int:
        return self.width * self.height

    @property
    def bbox_center(self) -> tuple[float, float]:
        """Continuous pixel coordinate at the middle of the box."""
        x0, y0, x1, y1 = self.bbox2d
        return (x0 + x1 + 1) / 2.0, (y0 + y1 + 1) / 2.0


def extract_instances(bundle: SceneBundle) -> list[ObjectInstance]:
    seg = bundle.segmentation
    flat = seg.ravel()
    labeled = np.flatnonzero(flat)
    if labeled.size == 0:
        return []
    order = labeled[np.argsort(flat[labeled], kind="stable")]
    ids, starts = np.unique(flat[order], return_index=True)
    bounds = list(starts) + [order.size]
    width = bundle.dims.width
    out = []
    for k, iid in enumerate(ids):
        idx = np.sort(order[bounds[k]:bounds[k + 1]])
        ys, xs = np.divmod(idx, width)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        out.append(ObjectInstance(int(iid), bundle.metadata.class_map[int(iid)], xs, ys, bbox))
    return out


@dataclass(frozen=True)
class FilterConfig:
    min_area: int = 900
    min_width: int = 25
    min_height: int = 25
    max_aspect: float = 5.0
    excluded_classes: frozenset[str] = frozenset({"sky", "ground", "wall", "wire", "rubble"})
    containment_threshold: float = 0.90

    def __post_init__(self):
        for name in ("min_area", "min_width", "min_height", "containment_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_aspect <= 1:
            raise ValueError("max_aspect must exceed 1")
        object.__setattr__(self, "excluded_classes",
                           frozenset(c.casefold() for c in self.excluded_classes))


def passes_filter(inst: ObjectInstance, cfg: FilterConfig) -> bool:
    w, h = inst.width, inst.height
    return (w * h >= cfg.min_area
            and w >= cfg.min_width
            and h >= cfg.min_height
            and max(w, h) / min(w, h) < cfg.max_aspect
            and inst.class_label.casefold() not in cfg.excluded_classes)


def filter_objects(instances: Iterable[ObjectInstance], cfg: FilterConfig = FilterConfig()) -> list[ObjectInstance]:
    return [inst for inst in instances if passes_filter(inst, cfg)]


def bbox_overlap_ratio(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    """Intersection area over the smaller box area (inclusive pixel boxes)."""
    iw = min(a[2], b[2]) - max(a[0], b[0]) + 1
    ih = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return iw * ih / min(area_a, area_b)


def containment_excluded(a: ObjectInstance, b: ObjectInstance, cfg: FilterConfig = FilterConfig()) -> bool:
    return bbox_overlap_ratio(a.bbox2d, b.bbox2d) > cfg.containment_threshold


# -- depth --------------------------------------------------------------------

@dataclass(frozen=True)
class DepthProfile:
    p20: float
    p25: float
    p50: float
    p75: float
    valid_count: int

    @property
    def iqr(self) -> float:
        return self.p75 - self.p25

    @property
    def is_thick(self) -> bool:
        return self.iqr > max(THICKNESS_FLOOR_M, THICKNESS_REL * self.p50)

    @property
    def effective_depth(self) -> float:
        return self.p20 if self.is_thick else self.p50

    def to_dict(self) -> dict:
        return {"p20": self.p20, "p25": self.p25, "p50": self.p50, "p75": self.p75,
                "iqr": self.iqr, "valid_count": self.valid_count, "is_thick": self.is_thick,
                "effective_depth": self.effective_depth}


def profile_from_depths(values) -> DepthProfile:
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v) & (v > 0)]
    if v.size == 0:
        raise NoDepthError("no valid depth values")
    p20, p25, p50, p75 = np.quantile(v, [0.20, 0.25, 0.50, 0.75], method="linear")
    return DepthProfile(float(p20), float(p25), float(p50), float(p75), int(v.size))


def depth_profile(inst: ObjectInstance, bundle: SceneBundle) -> DepthProfile:
    try:
        return profile_from_depths(bundle.depth[inst.ys, inst.xs])
    except NoDepthError:
        raise NoDepthError(f"instance {inst.instance_id} ({inst.class_label}) has no valid depth") from None


def iqr_jaccard(a: DepthProfile, b: DepthProfile) -> float:
    inter = max(0.0, min(a.p75, b.p75) - max(a.p25, b.p25))
    union = (a.p75 - a.p25) + (b.p75 - b.p25) - inter
    if union <= 0:
        # both intervals are points
        return 1.0 if a.p25 == b.p25 else 0.0
    return inter / union


def similar_distance(a: DepthProfile, b: DepthProfile) -> bool:
    if iqr_jaccard(a, b) > IQR_JACCARD_MIN:
        return True
    gap = abs(a.p50 - b.p50)
    return gap < max(MEDIAN_GAP_FLOOR_M, MEDIAN_GAP_REL * min(a.p50, b.p50))


# -- cube faces ---------------------------------------------------------------

def sample_face_counts(inst: ObjectInstance, dims: ErpDims, n_samples: int = 100, seed: int = 0,
                       scene_id: str = "", azimuth_sign: int = 1) -> Counter:
    """Classify up to ``n_samples`` distinct mask pixels to cube faces.

    The sampler is seeded from ``(seed, scene_id, instance_id)`` so results are
    reproducible per object.
    """
    n = min(n_samples, inst.pixel_count)
    rng = rng_for(seed, "faces", scene_id, inst.instance_id)
    pick = np.sort(rng.choice(inst.pixel_count, size=n, replace=False))
    dirs = pixels_to_directions(inst.xs[pick] + 0.5, inst.ys[pick] + 0.5, dims, azimuth_sign)
    idx = directions_to_face_index(dirs)
    return Counter({FACES[i]: int(c) for i, c in zip(*np.unique(idx, return_counts=True))})


def visible_faces(inst: ObjectInstance, dims: ErpDims, n_samples: int = 100, seed: int = 0,
                  scene_id: str = "", azimuth_sign: int = 1) -> tuple[frozenset[CubeFace], bool]:
    faces = frozenset(sample_face_counts(inst, dims, n_samples, seed, scene_id, azimuth_sign))
    return faces, len(faces) >= 2


# -- 3D -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Object3D:
    centroid: tuple[float, float, float]
    points: np.ndarray  # (N, 3)
    aabb_dims: tuple[float, float, float]
    volume: float
    flatness: float
    visible_faces: frozenset[CubeFace] = field(default_factory=frozenset)

    @property
    def is_seam(self) -> bool:
        return len(self.visible_faces) >= 2


def box_metrics(points) -> tuple[tuple[float, float, float], float, float]:
    """Axis-aligned box extents, volume and flatness (min/max extent) of a point set."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dims = tuple(float(d) for d in pts.max(axis=0) - pts.min(axis=0))
    volume = dims[0] * dims[1] * dims[2]
    longest = max(dims)
    flatness = min(dims) / longest if longest > 0 else 0.0
    return dims, volume, flatness


def object_points(inst: ObjectInstance, bundle: SceneBundle, azimuth_sign: int = 1) -> np.ndarray:
    d = bundle.depth[inst.ys, inst.xs].astype(np.float64)
    ok = np.isfinite(d) & (d > 0)
    dirs = pixels_to_directions(inst.xs[ok] + 0.5, inst.ys[ok] + 0.5, bundle.dims, azimuth_sign)
    return dirs * d[ok][:, None]


def object_3d(inst: ObjectInstance, bundle: SceneBundle, profile: DepthProfile | None = None,
              n_samples: int = 100, seed: int = 0, azimuth_sign: int = 1) -> Object3D:
    profile = profile or depth_profile(inst, bundle)
    pts = object_points(inst, bundle, azimuth_sign)
    dims, volume, flatness = box_metrics(pts)
    cx, cy = inst.bbox_center
    centroid = pixel_depth_to_point(cx, cy, bundle.dims, profile.p50, azimuth_sign)
    faces, _ = visible_faces(inst, bundle.dims, n_samples, seed, bundle.scene_id, azimuth_sign)
    return Object3D(centroid, pts, dims, volume, flatness, faces)


# -- whole-scene analysis -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class AnalyzedObject:
    instance: ObjectInstance
    profile: DepthProfile
    obj3d: Object3D
    face_counts: Counter
    name: str = ""  # display name used in questions

    @property
    def instance_id(self) -> int:
        return self.instance.instance_id

    def summary(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "class_label": self.instance.class_label,
            "name": self.name,
            "bbox2d": list(self.instance.bbox2d),
            "pixel_count": self.instance.pixel_count,
            "depth": self.profile.to_dict(),
            "centroid": list(self.obj3d.centroid),
            "aabb_dims": list(self.obj3d.aabb_dims),
            "volume": self.obj3d.volume,
            "flatness": self.obj3d.flatness,
            "face_counts": {f.value: c for f, c in sorted(self.face_counts.items(), key=lambda kv: FACES.index(kv[0]))},
            "is_seam": self.obj3d.is_seam,
        }


@dataclass(frozen=True, eq=False)
class SceneAnalysis:
    scene_id: str
    dims: ErpDims
    metadata: EnvMetadata
    objects: tuple[AnalyzedObject, ...]
    dropped_no_depth: int = 0

    def summary(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "width": self.dims.width,
            "height": self.dims.height,
            "environment_name": self.metadata.environment_name,
            "scene_attribute": self.metadata.scene_attribute,
            "scene_category": self.metadata.scene_category,
            "dropped_no_depth": self.dropped_no_depth,
            "objects": [o.summary() for o in self.objects],
        }


def display_name(inst: ObjectInstance, duplicated: bool) -> str:
    # bbox disambiguates repeated classes without revealing any 3D quantity
    if not duplicated:
        return inst.class_label
    x0, y0, x1, y1 = inst.bbox2d
    return f"{inst.class_label} [{x0},{y0},{x1},{y1}]"


def analyze_scene(bundle: SceneBundle, cfg: FilterConfig = FilterConfig(), n_samples: int = 100,
                  seed: int = 0, azimuth_sign: int = 1) -> SceneAnalysis:
    kept = filter_objects(extract_instances(bundle), cfg)
    label_counts = Counter(i.class_label for i in kept)
    objects, dropped = [], 0
    for inst in kept:
        try:
            profile = depth_profile(inst, bundle)
        except NoDepthError:
            dropped += 1
            continue
        counts = sample_face_counts(inst, bundle.dims, n_samples, seed, bundle.scene_id, azimuth_sign)
        obj = object_3d(inst, bundle, profile, n_samples, seed, azimuth_sign)
        objects.append(AnalyzedObject(inst, profile, obj, counts,
                                      display_name(inst, label_counts[inst.class_label] > 1)))
    return SceneAnalysis(bundle.scene_id, bundle.dims, bundle.metadata, tuple(objects), dropped)
