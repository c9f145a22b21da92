"""Coordinate transforms between ERP pixels, the sphere, 3D space and cubemap faces.

Conventions
-----------
* Right-handed camera frame, +Y up, -Z forward (azimuth 0 looks along -Z).
* ``pixel_to_spherical`` works on continuous pixel coordinates. A discrete pixel
  index ``(ix, iy)`` refers to its center ``(ix + 0.5, iy + 0.5)``.
* ``spherical_to_cartesian`` uses ``x = -d cos(phi) sin(lambda)`` by default.
  Pass ``azimuth_sign=-1`` to flip the x axis so that pixels right of the image
  center land on +X.
* Each cube face is a 90 degree pinhole view. Image +U points right and +V
  points down, as seen from the cube center looking through the face.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Literal, Mapping

import numpy as np

from .errors import DomainError, FormatError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ErpDims:
    width: int
    height: int

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise DomainError(f"ERP {name} must be an integer, got {v!r}")
            if v < 2:
                raise DomainError(f"ERP {name} must be >= 2, got {v}")

    @property
    def is_full_sphere(self) -> bool:
        return self.width == 2 * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class SphericalCoord:
    lam: float  # azimuth, radians in [-pi, pi)
    phi: float  # elevation, radians in [-pi/2, pi/2]


class CubeFace(str, enum.Enum):
    FRONT = "Front"
    BACK = "Back"
    LEFT = "Left"
    RIGHT = "Right"
    TOP = "Top"
    BOTTOM = "Bottom"

    def __str__(self) -> str:
        return self.value

    @property
    def opposite(self) -> "CubeFace":
        return _OPPOSITE[self]


FACES: tuple[CubeFace, ...] = tuple(CubeFace)
_OPPOSITE = {
    CubeFace.FRONT: CubeFace.BACK,
    CubeFace.BACK: CubeFace.FRONT,
    CubeFace.LEFT: CubeFace.RIGHT,
    CubeFace.RIGHT: CubeFace.LEFT,
    CubeFace.TOP: CubeFace.BOTTOM,
    CubeFace.BOTTOM: CubeFace.TOP,
}

# (forward, right, up) basis of each face's pinhole camera.
FACE_BASIS: dict[CubeFace, tuple[tuple[float, float, float], ...]] = {
    CubeFace.FRONT: ((0, 0, -1), (1, 0, 0), (0, 1, 0)),
    CubeFace.BACK: ((0, 0, 1), (-1, 0, 0), (0, 1, 0)),
    CubeFace.RIGHT: ((1, 0, 0), (0, 0, 1), (0, 1, 0)),
    CubeFace.LEFT: ((-1, 0, 0), (0, 0, -1), (0, 1, 0)),
    CubeFace.TOP: ((0, 1, 0), (1, 0, 0), (0, 0, 1)),
    CubeFace.BOTTOM: ((0, -1, 0), (1, 0, 0), (0, 0, -1)),
}


def wrap_azimuth(lam: float) -> float:
    """Wrap an azimuth into [-pi, pi)."""
    if -math.pi <= lam < math.pi:
        return lam
    w = (lam + math.pi) % TWO_PI - math.pi
    return -math.pi if w >= math.pi else w


def _check_sign(azimuth_sign: int) -> None:
    if azimuth_sign not in (1, -1):
        raise DomainError(f"azimuth_sign must be +1 or -1, got {azimuth_sign!r}")


def pixel_to_spherical(px: float, py: float, dims: ErpDims) -> SphericalCoord:
    """Map a continuous ERP pixel coordinate to (azimuth, elevation)."""
    if not (math.isfinite(px) and 0 <= px < dims.width):
        raise DomainError(f"px={px!r} outside [0, {dims.width})")
    if not (math.isfinite(py) and 0 <= py < dims.height):
        raise DomainError(f"py={py!r} outside [0, {dims.height})")
    lam = (px / dims.width - 0.5) * 2 * math.pi
    phi = -(py / dims.height - 0.5) * math.pi
    return SphericalCoord(lam, phi)


def spherical_to_pixel(s: SphericalCoord, dims: ErpDims) -> tuple[float, float]:
    if not (math.isfinite(s.lam) and math.isfinite(s.phi)):
        raise DomainError(f"non-finite spherical coordinate {s!r}")
    lam = wrap_azimuth(s.lam)
    px = (lam / (2 * math.pi) + 0.5) * dims.width
    py = (0.5 - s.phi / math.pi) * dims.height
    return px, py


def spherical_to_cartesian(s: SphericalCoord, d: float, azimuth_sign: int = 1) -> tuple[float, float, float]:
    if not math.isfinite(d) or d < 0:
        raise DomainError(f"distance must be finite and >= 0, got {d!r}")
    _check_sign(azimuth_sign)
    cos_phi = math.cos(s.phi)
    x = -d * cos_phi * math.sin(s.lam)
    y = d * math.sin(s.phi)
    z = -d * cos_phi * math.cos(s.lam)
    return (azimuth_sign * x, y, z)


def pixel_depth_to_point(px: float, py: float, dims: ErpDims, depth: float,
                         azimuth_sign: int = 1) -> tuple[float, float, float]:
    if not math.isfinite(depth) or depth <= 0:
        raise DomainError(f"invalid depth {depth!r} at pixel ({px}, {py})")
    return spherical_to_cartesian(pixel_to_spherical(px, py, dims), depth, azimuth_sign)


def direction_to_face(v) -> CubeFace:
    """Cube face hit by direction ``v``; exact ties resolve Z, then X, then Y."""
    x, y, z = (float(c) for c in v)
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise DomainError(f"non-finite direction {v!r}")
    ax, ay, az = abs(x), abs(y), abs(z)
    if ax == ay == az == 0:
        raise DomainError("zero vector has no dominant axis")
    if az >= ax and az >= ay:
        return CubeFace.BACK if z > 0 else CubeFace.FRONT
    if ax >= ay:
        return CubeFace.RIGHT if x > 0 else CubeFace.LEFT
    return CubeFace.TOP if y > 0 else CubeFace.BOTTOM


# -- vectorised forms ---------------------------------------------------------

def pixel_grid_directions(dims: ErpDims, azimuth_sign: int = 1) -> np.ndarray:
    """Unit directions of every ERP pixel center, shape (H, W, 3)."""
    px = np.arange(dims.width, dtype=np.float64) + 0.5
    py = np.arange(dims.height, dtype=np.float64) + 0.5
    return pixels_to_directions(px[None, :], py[:, None], dims, azimuth_sign)


def pixels_to_directions(px, py, dims: ErpDims, azimuth_sign: int = 1) -> np.ndarray:
    """Unit directions for arrays of continuous pixel coordinates (broadcasting)."""
    _check_sign(azimuth_sign)
    px, py = np.broadcast_arrays(np.asarray(px, np.float64), np.asarray(py, np.float64))
    lam = (px / dims.width - 0.5) * 2 * np.pi
    phi = -(py / dims.height - 0.5) * np.pi
    cos_phi = np.cos(phi)
    out = np.empty(px.shape + (3,), dtype=np.float64)
    out[..., 0] = azimuth_sign * (-cos_phi * np.sin(lam))
    out[..., 1] = np.sin(phi)
    out[..., 2] = -cos_phi * np.cos(lam)
    return out


def directions_to_face_index(v: np.ndarray) -> np.ndarray:
    """Index into ``FACES`` for each direction in ``v`` (..., 3)."""
    v = np.asarray(v, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    z_dom = (az >= ax) & (az >= ay)
    x_dom = ~z_dom & (ax >= ay)
    idx = np.where(y > 0, 4, 5)
    idx = np.where(x_dom, np.where(x > 0, 3, 2), idx)
    idx = np.where(z_dom, np.where(z > 0, 1, 0), idx)
    return idx.astype(np.int8)


def face_uv(face: CubeFace, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Face-plane coordinates in [-1, 1]; +u right, +w up."""
    fwd, right, up = (np.asarray(b, dtype=np.float64) for b in FACE_BASIS[face])
    depth = v @ fwd
    return (v @ right) / depth, (v @ up) / depth


# -- cubemap stitching --------------------------------------------------------

def _validate_cubemap(cube: Mapping[CubeFace, np.ndarray]) -> int:
    missing = [f.value for f in FACES if f not in cube]
    if missing:
        raise FormatError(f"cubemap missing faces: {', '.join(missing)}")
    edge = None
    for f in FACES:
        img = np.asarray(cube[f])
        if img.ndim < 2 or img.shape[0] != img.shape[1] or img.shape[0] < 1:
            raise FormatError(f"face {f.value} is not a non-empty square image: {img.shape}")
        if edge is None:
            edge, rest = img.shape[0], img.shape[2:]
        elif img.shape[0] != edge or img.shape[2:] != rest:
            raise FormatError(f"face {f.value} has shape {img.shape}, expected edge {edge}")
    return edge


def _sample_face(img: np.ndarray, col: np.ndarray, row: np.ndarray, sampling: str) -> np.ndarray:
    n = img.shape[0]
    if sampling == "nearest":
        c = np.clip(np.floor(col + 0.5).astype(np.intp), 0, n - 1)
        r = np.clip(np.floor(row + 0.5).astype(np.intp), 0, n - 1)
        return img[r, c]
    col = np.clip(col, 0.0, n - 1.0)
    row = np.clip(row, 0.0, n - 1.0)
    c0 = np.floor(col).astype(np.intp)
    r0 = np.floor(row).astype(np.intp)
    c1 = np.minimum(c0 + 1, n - 1)
    r1 = np.minimum(r0 + 1, n - 1)
    fc = col - c0
    fr = row - r0
    if img.ndim == 3:
        fc = fc[:, None]
        fr = fr[:, None]
    src = img.astype(np.float64)
    # a + (b - a) * t keeps constant regions bit-exact
    top = src[r0, c0] + (src[r0, c1] - src[r0, c0]) * fc
    bot = src[r1, c0] + (src[r1, c1] - src[r1, c0]) * fc
    return top + (bot - top) * fr


def stitch_cubemap_to_erp(cube: Mapping[CubeFace, np.ndarray], dims: ErpDims,
                          sampling: Literal["nearest", "bilinear"] = "bilinear",
                          azimuth_sign: int = 1) -> np.ndarray:
    """Resample six cube faces into an ERP image of size ``dims``.

    Output dtype matches the faces; bilinear results on integer faces are
    rounded to nearest.
    """
    if sampling not in ("nearest", "bilinear"):
        raise DomainError(f"unknown sampling mode {sampling!r}")
    edge = _validate_cubemap(cube)
    first = np.asarray(cube[FACES[0]])
    dirs = pixel_grid_directions(dims, azimuth_sign).reshape(-1, 3)
    face_idx = directions_to_face_index(dirs)
    out = np.empty((dirs.shape[0],) + first.shape[2:], dtype=np.float64)
    for i, face in enumerate(FACES):
        sel = face_idx == i
        if not sel.any():
            continue
        u, w = face_uv(face, dirs[sel])
        col = (u + 1.0) * 0.5 * edge - 0.5
        row = (1.0 - w) * 0.5 * edge - 0.5
        out[sel] = _sample_face(np.asarray(cube[face]), col, row, sampling)
    out = out.reshape(dims.shape + first.shape[2:])
    if np.issubdtype(first.dtype, np.integer):
        info = np.iinfo(first.dtype)
        out = np.clip(np.floor(out + 0.5), info.min, info.max)
    return out.astype(first.dtype)


def face_shares(dims: ErpDims, weighting: Literal["solid_angle", "pixel"] = "solid_angle",
                azimuth_sign: int = 1) -> dict[CubeFace, float]:
    """Fraction of the ERP grid classified to each face.

    With ``solid_angle`` weighting every pixel counts in proportion to the
    sphere area it covers (cos of its elevation), so a full-sphere grid gives
    each face close to 1/6. Raw ``pixel`` counts over-represent Top/Bottom.
    """
    idx = directions_to_face_index(pixel_grid_directions(dims, azimuth_sign))
    if weighting == "pixel":
        weights = np.ones(dims.shape)
    elif weighting == "solid_angle":
        py = np.arange(dims.height) + 0.5
        phi = -(py / dims.height - 0.5) * np.pi
        weights = np.broadcast_to(np.cos(phi)[:, None], dims.shape)
    else:
        raise DomainError(f"unknown weighting {weighting!r}")
    total = weights.sum()
    return {f: float(weights[idx == i].sum() / total) for i, f in enumerate(FACES)}
