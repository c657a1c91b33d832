"""Spherical / pixel / cubemap coordinate transforms for equirectangular panoramas.

Conventions used throughout the package
---------------------------------------
* Longitude ``phi`` in [-pi, pi), latitude ``theta`` in [-pi/2, pi/2],
  positive theta toward the north pole (up).
* Unit direction vectors:  x = cos(theta)*cos(phi),  y = cos(theta)*sin(phi),
  z = sin(theta).  At the poles the longitude is defined to be 0.
* A panorama of width W and height H (W == 2*H) maps the full sphere.
  Continuous pixel coordinates: u in [0, W) grows with phi, v in [0, H]
  grows downward from the north pole.  The integer pixel (i, j) has its
  center at (i + 0.5, j + 0.5).
* Rotations are parameterized by (dphi, dtheta) in one of two modes:

  ``paper_literal``
      independent coordinate shifts: longitude advances by dphi (mod 2*pi),
      latitude advances by dtheta with wrap-around in its own interval.
      Cheap, but not distance-preserving when dtheta != 0.
  ``rigid``
      a proper 3D rotation: pitch by dtheta about the y-axis (raising the
      forward view for positive dtheta) followed by yaw dphi about the
      z-axis.  Distance preserving; the default for image resampling.

Scalar functions operate on the small frozen dataclasses below; the
``*_arrays`` variants take/return plain ndarrays and are what the image
resampling and rendering code vectorize over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CoordinateRangeError,
    DegenerateInputError,
    DimensionError,
    ParameterError,
)

PI = math.pi
TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

# Snap tolerance (in columns) below which a yaw-induced column shift is
# treated as the exact integer it is aiming at.  Keeps integer-column yaws
# lossless despite float round-off in 2*pi*k/W.
_COLUMN_SNAP = 1e-9


def normalize_longitude(phi: float) -> float:
    """Wrap a longitude into [-pi, pi).

    Accepts any finite float.  The result is half-open: +pi maps to -pi.
    """
    out = (phi + PI) % TWO_PI - PI
    # (x % TWO_PI) can round up to TWO_PI itself for tiny negative x.
    if out >= PI:
        out -= TWO_PI
    return out


def wrap_latitude(theta: float) -> float:
    """Wrap a latitude into [-pi/2, pi/2] the way the literal rotation mode does.

    Values already inside the closed interval are returned unchanged (so a
    zero shift is an exact identity, including at +pi/2).  Out-of-range
    values wrap modulo pi, re-centered to [-pi/2, pi/2).
    """
    if -HALF_PI <= theta <= HALF_PI:
        return theta
    out = (theta + HALF_PI) % PI - HALF_PI
    if out >= HALF_PI:
        out -= PI
    return out


def check_pano_dims(dims) -> tuple[int, int]:
    """Validate panorama dims ``(W, H)``: integers, H >= 4, W == 2*H."""
    try:
        w, h = dims
    except (TypeError, ValueError):
        raise DimensionError(f"dims must be a (W, H) pair, got {dims!r}")
    if w != int(w) or h != int(h):
        raise DimensionError(f"dims must be integers, got {dims!r}")
    w, h = int(w), int(h)
    if h < 4:
        raise DimensionError(f"panorama height must be >= 4, got {h}")
    if w != 2 * h:
        raise DimensionError(f"panorama width must equal 2*height, got W={w} H={h}")
    return w, h


@dataclass(frozen=True)
class SphericalCoord:
    """A point on (or a ray through) the unit sphere.

    phi is normalized into [-pi, pi) at construction; theta is clamped into
    [-pi/2, pi/2] (construction never wraps latitude -- only the literal
    rotation mode does that).  r is a positive range, 1.0 for pure
    directions.
    """

    phi: float
    theta: float
    r: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.theta) and math.isfinite(self.r)):
            raise CoordinateRangeError("spherical coordinates must be finite")
        if self.r <= 0.0:
            raise CoordinateRangeError(f"r must be positive, got {self.r}")
        object.__setattr__(self, "phi", normalize_longitude(self.phi))
        object.__setattr__(self, "theta", min(HALF_PI, max(-HALF_PI, self.theta)))


@dataclass(frozen=True)
class PixelCoord:
    """Continuous pixel coordinates; the integer pixel (i, j) has center (i+0.5, j+0.5)."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise CoordinateRangeError("pixel coordinates must be finite")


@dataclass(frozen=True)
class Dir3:
    """A unit direction vector.  Inputs are normalized; near-zero vectors are rejected."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise DegenerateInputError("direction components must be finite")
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if n < 1e-12:
            raise DegenerateInputError("direction vector is (near-)zero")
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


_ROTATION_MODES = ("paper_literal", "rigid")


@dataclass(frozen=True)
class RotationSpec:
    """A view rotation: yaw dphi and pitch dtheta, interpreted per ``mode``."""

    dphi: float = 0.0
    dtheta: float = 0.0
    mode: str = "rigid"

    def __post_init__(self):
        if not (math.isfinite(self.dphi) and math.isfinite(self.dtheta)):
            raise ParameterError("rotation angles must be finite")
        if self.mode not in _ROTATION_MODES:
            raise ParameterError(f"mode must be one of {_ROTATION_MODES}, got {self.mode!r}")


# ---------------------------------------------------------------------------
# sphere <-> pixel
# ---------------------------------------------------------------------------

def sphere_to_pixel(c: SphericalCoord, dims) -> PixelCoord:
    """Map spherical (phi, theta) to continuous pixel (u, v) on a W x H panorama."""
    w, h = check_pano_dims(dims)
    u = (c.phi + PI) * (w / TWO_PI)
    v = (HALF_PI - c.theta) * (h / PI)
    return PixelCoord(u, v)


def pixel_to_sphere(p: PixelCoord, dims) -> SphericalCoord:
    """Map continuous pixel (u, v) back to spherical coordinates.

    u must lie in [0, W), v in [0, H]; anything else raises
    CoordinateRangeError (use a modulo wrap before calling if you mean one).
    """
    w, h = check_pano_dims(dims)
    if not (0.0 <= p.u < w):
        raise CoordinateRangeError(f"u={p.u} outside [0, {w})")
    if not (0.0 <= p.v <= h):
        raise CoordinateRangeError(f"v={p.v} outside [0, {h}]")
    phi = p.u * (TWO_PI / w) - PI
    theta = HALF_PI - p.v * (PI / h)
    return SphericalCoord(phi, theta)


def sphere_to_pixel_arrays(phi, theta, w: int, h: int):
    """Vectorized sphere_to_pixel on plain ndarrays (no range checks)."""
    u = (phi + PI) * (w / TWO_PI)
    v = (HALF_PI - theta) * (h / PI)
    return u, v


def pixel_to_sphere_arrays(u, v, w: int, h: int):
    """Vectorized pixel_to_sphere on plain ndarrays (no range checks)."""
    phi = u * (TWO_PI / w) - PI
    theta = HALF_PI - v * (PI / h)
    return phi, theta


def pixel_center_grid(w: int, h: int):
    """(u, v) meshgrids of all pixel centers for a W x H raster."""
    u = (np.arange(w, dtype=np.float64) + 0.5)[None, :]
    v = (np.arange(h, dtype=np.float64) + 0.5)[:, None]
    return np.broadcast_to(u, (h, w)), np.broadcast_to(v, (h, w))


# ---------------------------------------------------------------------------
# sphere <-> 3D direction
# ---------------------------------------------------------------------------

def sphere_to_dir3(c: SphericalCoord) -> Dir3:
    """Unit direction for spherical coordinates (range r is dropped)."""
    ct = math.cos(c.theta)
    return Dir3(ct * math.cos(c.phi), ct * math.sin(c.phi), math.sin(c.theta))


def dir3_to_sphere(d: Dir3) -> SphericalCoord:
    """Spherical coordinates of a unit direction; longitude 0 at the poles."""
    z = min(1.0, max(-1.0, d.z))
    theta = math.asin(z)
    if math.hypot(d.x, d.y) < 1e-12:
        phi = 0.0
    else:
        phi = math.atan2(d.y, d.x)
    return SphericalCoord(phi, theta)


def sphere_to_dir3_arrays(phi, theta):
    """Vectorized sphere_to_dir3: returns (x, y, z) ndarrays."""
    ct = np.cos(theta)
    return ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)


def dir3_to_sphere_arrays(x, y, z):
    """Vectorized dir3_to_sphere for unit vectors: returns (phi, theta)."""
    theta = np.arcsin(np.clip(z, -1.0, 1.0))
    phi = np.arctan2(y, x)
    # atan2 returns (-pi, pi]; fold the single closed endpoint.
    phi = np.where(phi >= PI, phi - TWO_PI, phi)
    return phi, theta


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def rigid_rotate_arrays(x, y, z, dphi: float, dtheta: float, inverse: bool = False):
    """Apply (or invert) the rigid (dphi, dtheta) rotation to direction components.

    Forward: pitch about y (x-z plane, +dtheta raises +x toward +z), then
    yaw about z.  Inverse: yaw back, then pitch back.
    """
    cp, sp = math.cos(dtheta), math.sin(dtheta)
    cy, sy = math.cos(dphi), math.sin(dphi)
    if not inverse:
        x1 = cp * x - sp * z
        z1 = sp * x + cp * z
        x2 = cy * x1 - sy * y
        y2 = sy * x1 + cy * y
        return x2, y2, z1
    x1 = cy * x + sy * y
    y1 = -sy * x + cy * y
    x2 = cp * x1 + sp * z
    z2 = -sp * x1 + cp * z
    return x2, y1, z2


def rotate_spherical(c: SphericalCoord, rot: RotationSpec) -> SphericalCoord:
    """Rotate spherical coordinates by ``rot``; the range r is preserved."""
    if rot.mode == "paper_literal":
        phi = normalize_longitude(c.phi + rot.dphi)
        theta = wrap_latitude(c.theta + rot.dtheta)
        return SphericalCoord(phi, theta, c.r)
    x, y, z = sphere_to_dir3_arrays(c.phi, c.theta)
    x, y, z = rigid_rotate_arrays(x, y, z, rot.dphi, rot.dtheta)
    phi, theta = dir3_to_sphere_arrays(x, y, z)
    if math.hypot(x, y) < 1e-12:
        phi = 0.0
    return SphericalCoord(float(phi), float(theta), c.r)


def yaw_column_shift(dphi: float, w: int) -> float:
    """Column shift induced by a pure yaw, snapped to integers within 1e-9."""
    shift = dphi * (w / TWO_PI)
    nearest = round(shift)
    if abs(shift - nearest) <= _COLUMN_SNAP * max(1.0, abs(shift)):
        return float(nearest)
    return shift


def rotate_pixel(p: PixelCoord, rot: RotationSpec, dims, inverse: bool = False) -> PixelCoord:
    """Rotate a pixel coordinate through sphere space and come back.

    ``inverse=True`` applies the exact inverse of ``rot`` (for rigid mode
    this is the transposed rotation, which is not itself expressible as a
    RotationSpec).  Pure-yaw rotations take a wrap-only fast path in which
    integer-column shifts are exact.
    """
    w, h = check_pano_dims(dims)
    if rot.dtheta == 0.0:
        shift = yaw_column_shift(rot.dphi, w)
        if inverse:
            shift = -shift
        return PixelCoord((p.u + shift) % w, p.v)
    c = pixel_to_sphere(p, dims)
    if rot.mode == "paper_literal":
        eff = RotationSpec(-rot.dphi, -rot.dtheta, "paper_literal") if inverse else rot
        c2 = rotate_spherical(c, eff)
    else:
        x, y, z = sphere_to_dir3_arrays(c.phi, c.theta)
        x, y, z = rigid_rotate_arrays(x, y, z, rot.dphi, rot.dtheta, inverse=inverse)
        phi, theta = dir3_to_sphere_arrays(x, y, z)
        if math.hypot(float(x), float(y)) < 1e-12:
            phi = 0.0
        c2 = SphericalCoord(float(phi), float(theta))
    q = sphere_to_pixel(c2, dims)
    return PixelCoord(q.u % w, min(float(h), max(0.0, q.v)))


# ---------------------------------------------------------------------------
# cube faces
# ---------------------------------------------------------------------------
# Each face is (normal, right, down) in world coordinates.  Face-local a, b
# run in [-1, 1] along right/down; the face image stores a left-to-right,
# b top-to-bottom.

FACE_AXES: dict[str, tuple[tuple, tuple, tuple]] = {
    "front": ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
    "back": ((-1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "left": ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
    "right": ((0, -1, 0), (-1, 0, 0), (0, 0, -1)),
    "up": ((0, 0, 1), (0, -1, 0), (1, 0, 0)),
    "down": ((0, 0, -1), (0, -1, 0), (-1, 0, 0)),
}

FACE_IDS = tuple(FACE_AXES)


def dir3_to_face(d: Dir3, face_size: float = 1.0):
    """(face_id, face_u, face_v) of the cube face a direction pierces.

    The dominant |component| picks the face; ties resolve x over y over z,
    positive over negative.  Face coordinates lie in [0, face_size] (the
    upper edge only at exact tie boundaries).
    """
    ax, ay, az = abs(d.x), abs(d.y), abs(d.z)
    if ax >= ay and ax >= az:
        face = "front" if d.x > 0 else "back"
    elif ay >= az:
        face = "left" if d.y > 0 else "right"
    else:
        face = "up" if d.z > 0 else "down"
    n, r, dn = (np.array(v, dtype=np.float64) for v in FACE_AXES[face])
    vec = d.as_array()
    t = vec / float(vec @ n)
    a = float(t @ r)
    b = float(t @ dn)
    return face, (a + 1.0) * 0.5 * face_size, (b + 1.0) * 0.5 * face_size


def face_pixel_to_dir3(face_id: str, face_u: float, face_v: float, face_size: float) -> Dir3:
    """Unit direction through continuous face coordinates (u, v) on ``face_id``.

    For the integer pixel (i, j) pass (i + 0.5, j + 0.5).  Coordinates must
    lie in [0, face_size].
    """
    if face_id not in FACE_AXES:
        raise KeyError(face_id)
    if face_size <= 0:
        raise ParameterError(f"face_size must be positive, got {face_size}")
    if not (0.0 <= face_u <= face_size and 0.0 <= face_v <= face_size):
        raise CoordinateRangeError(
            f"face coords ({face_u}, {face_v}) outside [0, {face_size}]")
    n, r, dn = (np.array(v, dtype=np.float64) for v in FACE_AXES[face_id])
    a = 2.0 * face_u / face_size - 1.0
    b = 2.0 * face_v / face_size - 1.0
    vec = n + a * r + b * dn
    return Dir3(vec[0], vec[1], vec[2])


def dir3_to_face_arrays(x, y, z):
    """Vectorized face partition: (face_index, a, b) with a, b in [-1, 1].

    face_index indexes FACE_IDS.  Same tie-breaking as dir3_to_face.
    """
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    pick_x = (ax >= ay) & (ax >= az)
    pick_y = ~pick_x & (ay >= az)
    pick_z = ~pick_x & ~pick_y
    idx = np.empty(np.shape(x), dtype=np.int8)
    idx[pick_x] = np.where(np.asarray(x)[pick_x] > 0, 0, 1)   # front / back
    idx[pick_y] = np.where(np.asarray(y)[pick_y] > 0, 2, 3)   # left / right
    idx[pick_z] = np.where(np.asarray(z)[pick_z] > 0, 4, 5)   # up / down
    a = np.empty_like(np.asarray(x, dtype=np.float64))
    b = np.empty_like(a)
    for k, fid in enumerate(FACE_IDS):
        m = idx == k
        if not np.any(m):
            continue
        n, r, dn = FACE_AXES[fid]
        denom = n[0] * np.asarray(x)[m] + n[1] * np.asarray(y)[m] + n[2] * np.asarray(z)[m]
        tx = np.asarray(x)[m] / denom
        ty = np.asarray(y)[m] / denom
        tz = np.asarray(z)[m] / denom
        a[m] = r[0] * tx + r[1] * ty + r[2] * tz
        b[m] = dn[0] * tx + dn[1] * ty + dn[2] * tz
    return idx, a, b


def face_grid_dirs(face_id: str, face_size: int):
    """Unit direction components (x, y, z) at every pixel center of a face image."""
    n, r, dn = FACE_AXES[face_id]
    s = (np.arange(face_size, dtype=np.float64) + 0.5) * (2.0 / face_size) - 1.0
    a = s[None, :]
    b = s[:, None]
    x = n[0] + a * r[0] + b * dn[0]
    y = n[1] + a * r[1] + b * dn[1]
    z = n[2] + a * r[2] + b * dn[2]
    norm = np.sqrt(x * x + y * y + z * z)
    return x / norm, y / norm, z / norm


def angular_distance(c1: SphericalCoord, c2: SphericalCoord) -> float:
    """Great-circle angle between two spherical coordinates (ranges ignored)."""
    d1 = sphere_to_dir3(c1)
    d2 = sphere_to_dir3(c2)
    dot = d1.x * d2.x + d1.y * d2.y + d1.z * d2.z
    return math.acos(min(1.0, max(-1.0, dot)))
