"""Synthetic scene bundles for tests, demos and the end-to-end self check.

Objects are axis-aligned rectangles painted into the ERP rasters with
per-object depth (optionally ramped so some objects read as "thick"), plus
background classes that the default filter removes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ._seeding import rng_for
from .geometry import ErpDims
from .scene import EnvMetadata, SceneBundle, save_scene

ENVIRONMENTS: tuple[tuple[str, str, str], ...] = (
    ("Town_Day", "outdoor", "Urban"),
    ("Town_Night", "outdoor", "Urban"),
    ("Town_Winter", "outdoor", "Urban"),
    ("SeasideTown", "outdoor", "Urban"),
    ("Forest_Day", "outdoor", "Nature"),
    ("Forest_Autumn", "outdoor", "Nature"),
    ("Mountain_Lake", "outdoor", "Nature"),
    ("Factory_Day", "outdoor", "Industrial"),
    ("Factory_Night", "outdoor", "Industrial"),
    ("Office_Modern", "indoor", "Office"),
    ("Office_Old", "indoor", "Office"),
    ("Hospital", "indoor", "Public"),
    ("AbandonedMall", "indoor", "Public"),
    ("Apartment_Day", "indoor", "Domestic"),
)

OBJECT_CLASSES = ("chair", "table", "car", "tree", "lamp", "bench", "truck", "barrel",
                  "sign", "crate", "sofa", "bicycle", "statue", "container")


def make_toy_scene(scene_id: str, env_index: int = 0, dims: ErpDims = ErpDims(512, 256),
                   n_objects: int = 14, seed: int = 0) -> SceneBundle:
    rng = rng_for(seed, "toy", scene_id)
    W, H = dims.width, dims.height
    name, attribute, category = ENVIRONMENTS[env_index % len(ENVIRONMENTS)]

    seg = np.zeros(dims.shape, np.uint16)
    depth = np.full(dims.shape, 80.0, np.float32)
    rgb = np.zeros(dims.shape + (3,), np.uint8)
    class_map: dict[int, str] = {}

    # background strips: removed by the semantic filter
    sky_rows = max(2, H // 12)
    seg[:sky_rows] = 1
    depth[:sky_rows] = np.inf
    seg[-sky_rows:] = 2
    depth[-sky_rows:] = 3.0
    class_map[1] = "sky"
    class_map[2] = "Ground"
    rgb[:sky_rows] = (120, 170, 230)
    rgb[-sky_rows:] = (90, 80, 60)

    next_id = 3
    # a few specks below the size threshold
    free_rows = H - 2 * sky_rows
    for _ in range(3 if free_rows > 12 and W > 12 else 0):
        x, y = int(rng.integers(0, W - 10)), int(rng.integers(sky_rows, H - sky_rows - 10))
        seg[y:y + 6, x:x + 6] = next_id
        class_map[next_id] = str(rng.choice(OBJECT_CLASSES))
        next_id += 1

    labels = rng.choice(OBJECT_CLASSES, size=n_objects, replace=True)
    w_lo, w_hi = min(30, W // 4), min(80, W // 2)
    h_lo, h_hi = min(30, free_rows // 4), min(70, free_rows // 2)
    if n_objects and (w_lo < 1 or h_lo < 1):
        raise ValueError(f"{dims} is too small for toy objects")
    for k in range(n_objects):
        w = int(rng.integers(w_lo, w_hi + 1))
        h = int(rng.integers(h_lo, h_hi + 1))
        x0 = int(rng.integers(0, W - w + 1))
        y0 = int(rng.integers(sky_rows, H - sky_rows - h + 1))
        base = float(rng.uniform(1.5, 40.0))
        box = (slice(y0, y0 + h), slice(x0, x0 + w))
        seg[box] = next_id
        class_map[next_id] = str(labels[k])
        if rng.random() < 0.3:
            # depth ramp across the box: thick object
            ramp = np.linspace(0.0, float(rng.uniform(1.0, 6.0)), w, dtype=np.float32)
            depth[box] = base + ramp[None, :]
        else:
            depth[box] = base + rng.normal(0.0, 0.02, size=(h, w)).astype(np.float32)
        if rng.random() < 0.3:
            # a hole of invalid depth inside the mask
            depth[y0 + h // 3, x0:x0 + w // 2] = 0.0
        rgb[box] = rng.integers(0, 256, size=3, dtype=np.uint8)
        next_id += 1

    meta = EnvMetadata(name, attribute, category, class_map)
    return SceneBundle(scene_id, dims, rgb, depth, seg, meta)


def make_toy_corpus(n_scenes: int = 12, dims: ErpDims = ErpDims(512, 256), n_objects: int = 14,
                    seed: int = 0) -> list[SceneBundle]:
    return [make_toy_scene(f"toy_{i:03d}", env_index=i, dims=dims, n_objects=n_objects, seed=seed)
            for i in range(n_scenes)]


def write_toy_corpus(root, **kwargs) -> list[Path]:
    root = Path(root)
    return [save_scene(b, root / b.scene_id) for b in make_toy_corpus(**kwargs)]
