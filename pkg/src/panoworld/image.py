"""Raster containers, bilinear resampling, and projection conversions.

All images hold float32 RGB data in [0, 1], shape (H, W, 3), read-only.
Sampling is bilinear everywhere, at pixel centers (i + 0.5, j + 0.5), with
horizontal wrap and vertical clamp on panoramas and full clamp on
cube faces and perspective crops.  Conversions resample by inverse
mapping: for every output pixel, find the source coordinate and sample.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DimensionError, ParameterError
from .geometry import (
    FACE_IDS,
    PI,
    TWO_PI,
    PixelCoord,
    RotationSpec,
    check_pano_dims,
    dir3_to_face_arrays,
    dir3_to_sphere_arrays,
    face_grid_dirs,
    pixel_center_grid,
    pixel_to_sphere_arrays,
    rigid_rotate_arrays,
    sphere_to_dir3_arrays,
    sphere_to_pixel_arrays,
    yaw_column_shift,
)

_RANGE_TOL = 1e-5


def _validate_rgb(data, what: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"{what} must have shape (H, W, 3), got {arr.shape}")
    arr = arr.astype(np.float32, copy=True)
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{what} contains non-finite values")
    lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
    if lo < -_RANGE_TOL or hi > 1.0 + _RANGE_TOL:
        raise ParameterError(f"{what} values outside [0, 1]: min={lo}, max={hi}")
    np.clip(arr, 0.0, 1.0, out=arr)
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


class PanoramaImage:
    """A full equirectangular panorama (W == 2*H)."""

    def __init__(self, data):
        self.data = _validate_rgb(data, "panorama")
        h, w = self.data.shape[:2]
        check_pano_dims((w, h))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[0]


class CubeMapImage:
    """Six square faces keyed front/back/left/right/up/down."""

    def __init__(self, faces: dict):
        if set(faces) != set(FACE_IDS):
            raise DimensionError(f"cubemap must have faces {FACE_IDS}, got {tuple(faces)}")
        self.faces = {}
        size = None
        for fid in FACE_IDS:
            arr = _validate_rgb(faces[fid], f"face {fid!r}")
            if arr.shape[0] != arr.shape[1]:
                raise DimensionError(f"face {fid!r} is not square: {arr.shape}")
            if size is None:
                size = arr.shape[0]
            elif arr.shape[0] != size:
                raise DimensionError("cubemap faces have mismatched sizes")
            self.faces[fid] = arr
        self.face_size = size


@dataclass(eq=False)
class PerspectiveImage:
    """A pinhole view: raster plus the camera intrinsics that produced it."""

    data: np.ndarray
    yaw: float
    pitch: float
    hfov: float

    def __post_init__(self):
        self.data = _validate_rgb(self.data, "perspective image")
        if not (0.0 < self.hfov < PI):
            raise ParameterError(f"hfov must be in (0, pi), got {self.hfov}")

    @property
    def vfov(self) -> float:
        h, w = self.data.shape[:2]
        return 2.0 * math.atan(math.tan(self.hfov / 2.0) * h / w)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_wrap_bilinear(arr: np.ndarray, u, v) -> np.ndarray:
    """Bilinear sample with horizontal wrap and vertical clamp.

    ``u``/``v`` are continuous pixel coordinates (any shape); returns float64
    with a trailing channel axis.
    """
    h, w = arr.shape[:2]
    x = (np.asarray(u, dtype=np.float64) - 0.5) % w
    i0 = np.floor(x).astype(np.int64) % w
    fx = (x - np.floor(x))[..., None]
    i1 = (i0 + 1) % w
    y = np.clip(np.asarray(v, dtype=np.float64), 0.5, h - 0.5) - 0.5
    j0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    fy = (y - j0)[..., None]
    j1 = np.minimum(j0 + 1, h - 1)
    a = arr[j0, i0].astype(np.float64)
    b = arr[j0, i1].astype(np.float64)
    c = arr[j1, i0].astype(np.float64)
    d = arr[j1, i1].astype(np.float64)
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def sample_clamp_bilinear(arr: np.ndarray, u, v) -> np.ndarray:
    """Bilinear sample with both axes clamped (cube faces, perspective crops)."""
    h, w = arr.shape[:2]
    x = np.clip(np.asarray(u, dtype=np.float64), 0.5, w - 0.5) - 0.5
    i0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    fx = (x - i0)[..., None]
    i1 = np.minimum(i0 + 1, w - 1)
    y = np.clip(np.asarray(v, dtype=np.float64), 0.5, h - 0.5) - 0.5
    j0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    fy = (y - j0)[..., None]
    j1 = np.minimum(j0 + 1, h - 1)
    a = arr[j0, i0].astype(np.float64)
    b = arr[j0, i1].astype(np.float64)
    c = arr[j1, i0].astype(np.float64)
    d = arr[j1, i1].astype(np.float64)
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def sample_bilinear(img: PanoramaImage, p) -> np.ndarray:
    """Sample one point of a panorama; accepts a PixelCoord or a (u, v) pair."""
    if isinstance(p, PixelCoord):
        u, v = p.u, p.v
    else:
        u, v = p
    return sample_wrap_bilinear(img.data, np.float64(u), np.float64(v))


# ---------------------------------------------------------------------------
# panorama rotation
# ---------------------------------------------------------------------------

def rotate_panorama_image(img: PanoramaImage, rot: RotationSpec) -> PanoramaImage:
    """Re-project a panorama under a view rotation.

    Pure-yaw rotations by an integer number of columns are lossless
    (np.roll); fractional yaws blend horizontally only; anything with
    dtheta != 0 goes through the full inverse spherical mapping.
    """
    w, h = img.dims
    arr = img.data
    if rot.dtheta == 0.0:
        s = yaw_column_shift(rot.dphi, w)
        if s == int(s):
            return PanoramaImage(np.roll(arr, int(s) % w, axis=1))
        u_src = (np.arange(w, dtype=np.float64) + 0.5 - s - 0.5) % w
        i0 = np.floor(u_src).astype(np.int64) % w
        fx = (u_src - np.floor(u_src))[None, :, None]
        i1 = (i0 + 1) % w
        out = arr[:, i0].astype(np.float64) * (1 - fx) + arr[:, i1].astype(np.float64) * fx
        return PanoramaImage(out.astype(np.float32))
    u, v = pixel_center_grid(w, h)
    phi, theta = pixel_to_sphere_arrays(u, v, w, h)
    if rot.mode == "paper_literal":
        sp = ((phi - rot.dphi) + PI) % TWO_PI - PI
        st = theta - rot.dtheta
        wrapped = (st + PI / 2) % PI - PI / 2
        wrapped = np.where(wrapped >= PI / 2, wrapped - PI, wrapped)
        st = np.where((st >= -PI / 2) & (st <= PI / 2), st, wrapped)
    else:
        x, y, z = sphere_to_dir3_arrays(phi, theta)
        x, y, z = rigid_rotate_arrays(x, y, z, rot.dphi, rot.dtheta, inverse=True)
        sp, st = dir3_to_sphere_arrays(x, y, z)
    su, sv = sphere_to_pixel_arrays(sp, st, w, h)
    out = sample_wrap_bilinear(arr, su, sv)
    return PanoramaImage(out.astype(np.float32))


def turn_view(img: PanoramaImage, alpha: float, mode: str = "rigid") -> PanoramaImage:
    """The panorama as seen after the viewer turns left by ``alpha``.

    Turning the view by +alpha shifts scene content the opposite way, i.e.
    this is rotate_panorama_image with dphi = -alpha.
    """
    return rotate_panorama_image(img, RotationSpec(dphi=-alpha, dtheta=0.0, mode=mode))


# ---------------------------------------------------------------------------
# cubemap conversions
# ---------------------------------------------------------------------------

def equirect_to_cubemap(img: PanoramaImage, face_size: int) -> CubeMapImage:
    if face_size < 2 or face_size != int(face_size):
        raise DimensionError(f"face_size must be an integer >= 2, got {face_size}")
    face_size = int(face_size)
    w, h = img.dims
    faces = {}
    for fid in FACE_IDS:
        x, y, z = face_grid_dirs(fid, face_size)
        phi, theta = dir3_to_sphere_arrays(x, y, z)
        u, v = sphere_to_pixel_arrays(phi, theta, w, h)
        faces[fid] = sample_wrap_bilinear(img.data, u, v).astype(np.float32)
    return CubeMapImage(faces)


def cubemap_to_equirect(cm: CubeMapImage, dims) -> PanoramaImage:
    w, h = check_pano_dims(dims)
    u, v = pixel_center_grid(w, h)
    phi, theta = pixel_to_sphere_arrays(u, v, w, h)
    x, y, z = sphere_to_dir3_arrays(phi, theta)
    idx, a, b = dir3_to_face_arrays(x, y, z)
    s = cm.face_size
    out = np.empty((h, w, 3), dtype=np.float32)
    for k, fid in enumerate(FACE_IDS):
        m = idx == k
        if not np.any(m):
            continue
        fu = (a[m] + 1.0) * 0.5 * s
        fv = (b[m] + 1.0) * 0.5 * s
        out[m] = sample_clamp_bilinear(cm.faces[fid], fu, fv).astype(np.float32)
    return PanoramaImage(out)


# ---------------------------------------------------------------------------
# perspective extraction
# ---------------------------------------------------------------------------

def extract_perspective(img: PanoramaImage, yaw: float, pitch: float, hfov: float,
                        out_w: int, out_h: int) -> PerspectiveImage:
    """Pinhole crop looking along (yaw, pitch) with horizontal FOV ``hfov``.

    The camera up vector is the zenith-aligned one: image rows stay
    horizontal for pitch = 0.  A square hfov = pi/2 crop at pitch 0
    reproduces a cube face exactly.
    """
    if not (0.0 < hfov < PI):
        raise ParameterError(f"hfov must be in (0, pi), got {hfov}")
    if out_w < 1 or out_h < 1:
        raise DimensionError(f"output dims must be positive, got {out_w}x{out_h}")
    w, h = img.dims
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    f = np.array([cp * cy, cp * sy, sp])
    r = np.array([sy, -cy, 0.0])
    down = np.cross(f, r)
    th = math.tan(hfov / 2.0)
    tv = th * out_h / out_w
    xn = ((np.arange(out_w, dtype=np.float64) + 0.5) * (2.0 / out_w) - 1.0) * th
    yn = ((np.arange(out_h, dtype=np.float64) + 0.5) * (2.0 / out_h) - 1.0) * tv
    dx = f[0] + xn[None, :] * r[0] + yn[:, None] * down[0]
    dy = f[1] + xn[None, :] * r[1] + yn[:, None] * down[1]
    dz = f[2] + xn[None, :] * r[2] + yn[:, None] * down[2]
    norm = np.sqrt(dx * dx + dy * dy + dz * dz)
    phi, theta = dir3_to_sphere_arrays(dx / norm, dy / norm, dz / norm)
    u, v = sphere_to_pixel_arrays(phi, theta, w, h)
    data = sample_wrap_bilinear(img.data, u, v).astype(np.float32)
    return PerspectiveImage(data, yaw=yaw, pitch=pitch, hfov=hfov)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def save_raster(img, path) -> None:
    """Write an image (or raw HxWx3 array) as an 8-bit PNG to a path or
    binary file object."""
    arr = img.data if hasattr(img, "data") else np.asarray(img)
    q = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    im = Image.fromarray(q, mode="RGB")
    if hasattr(path, "write"):
        im.save(path, format="PNG")
    else:
        im.save(path)


def load_raster(path) -> np.ndarray:
    """Read any PIL-decodable raster (path or binary file object) as
    float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DecodeError(f"{path}: {e}") from e


def load_panorama(path: str) -> PanoramaImage:
    return PanoramaImage(load_raster(path))


def save_cubemap(cm: CubeMapImage, path_prefix: str) -> str:
    """Write six face PNGs plus a JSON manifest; returns the manifest path."""
    files = {}
    for fid in FACE_IDS:
        fname = f"{os.path.basename(path_prefix)}_{fid}.png"
        save_raster(cm.faces[fid], os.path.join(os.path.dirname(path_prefix) or ".", fname))
        files[fid] = fname
    manifest = {"v": 1, "face_size": cm.face_size, "faces": files}
    mpath = path_prefix + ".json"
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return mpath


def load_cubemap(manifest_path: str) -> CubeMapImage:
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise DecodeError(f"{manifest_path}: {e}") from e
    base = os.path.dirname(manifest_path) or "."
    faces = {fid: load_raster(os.path.join(base, fname))
             for fid, fname in manifest["faces"].items()}
    return CubeMapImage(faces)


def seam_delta(img: PanoramaImage, eps: float = 1e-4) -> float:
    """Largest jump across the longitude seam, sampled at u -> 0+ vs u -> 0-.

    A wrap-correct sampler keeps this within ~2*eps; a clamp bug makes it
    explode on any scene with content crossing the seam.
    """
    w, h = img.dims
    v = np.arange(h, dtype=np.float64) + 0.5
    left = sample_wrap_bilinear(img.data, np.full(h, eps), v)
    right = sample_wrap_bilinear(img.data, np.full(h, -eps), v)
    return float(np.max(np.abs(left - right)))
