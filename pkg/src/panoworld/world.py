"""Procedural 3D worlds and the analytic renderer behind the ground-truth model.

A scene is a flat ground plane (checkerboard), a sky gradient, and a set of
non-overlapping solid primitives (boxes, spheres, cylinders) on the ground.
Rendering is closed-form ray casting -- no meshes, no rasterizer -- so the
same scene can be rendered from any pose bit-reproducibly.

Distances are meters.  The agent is a vertical cylinder of radius 0.3 m and
height 1.8 m whose eye sits at 1.6 m; poses store the ground position and
heading (radians, world frame, 0 = +x, counterclockwise).

Shading is flat per-surface Lambert with a fixed light and a large ambient
term; it scales the base color, so hue ratios survive and color-based
segmentation works from any viewpoint.  The ground checker fades to its
mean color with horizontal distance (an LOD fade that keeps far cells from
aliasing at typical panorama resolutions).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SceneError
from .geometry import PI, TWO_PI, check_pano_dims, normalize_longitude
from .image import PanoramaImage, PerspectiveImage, equirect_to_cubemap, save_cubemap, save_raster

EYE_HEIGHT = 1.6
AGENT_RADIUS = 0.3
AGENT_HEIGHT = 1.8
DEFAULT_EXTENT = 40.0

PALETTE = {
    "red": (0.80, 0.12, 0.12),
    "green": (0.10, 0.65, 0.18),
    "blue": (0.12, 0.25, 0.80),
    "yellow": (0.85, 0.78, 0.10),
    "orange": (0.90, 0.50, 0.08),
    "purple": (0.55, 0.15, 0.70),
    "cyan": (0.08, 0.70, 0.75),
    "magenta": (0.85, 0.15, 0.60),
}

SKY_ZENITH = (0.30, 0.48, 0.85)
SKY_HORIZON = (0.78, 0.86, 0.94)
GROUND_A = (0.46, 0.46, 0.46)
GROUND_B = (0.54, 0.54, 0.54)
GROUND_CELL = 2.0
GROUND_FADE_START = 10.0
GROUND_FADE_END = 40.0

_LIGHT = np.array([0.35, 0.25, 0.90])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
SHADE_AMBIENT = 0.62
SHADE_DIFFUSE = 0.38

_SHAPES = ("box", "sphere", "cylinder")
_EPS = 1e-9


@dataclass(frozen=True)
class AgentPose:
    """Ground position plus heading.  step() is the exact pose algebra:
    rotate first, then travel along the new heading."""

    position: tuple = (0.0, 0.0, 0.0)
    heading: float = 0.0

    def __post_init__(self):
        p = tuple(float(c) for c in self.position)
        if len(p) != 3 or not all(math.isfinite(c) for c in p):
            raise ParameterError(f"position must be 3 finite floats, got {self.position!r}")
        if not math.isfinite(self.heading):
            raise ParameterError("heading must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "heading", normalize_longitude(self.heading))

    @property
    def x(self):
        return self.position[0]

    @property
    def y(self):
        return self.position[1]

    @property
    def z(self):
        return self.position[2]

    def step(self, alpha: float, d: float) -> "AgentPose":
        h = normalize_longitude(self.heading + alpha)
        return AgentPose((self.x + d * math.cos(h), self.y + d * math.sin(h), self.z), h)


@dataclass(frozen=True)
class Primitive:
    """One solid: a box (full extents), sphere (radius), or cylinder (radius, height).

    ``center`` is the 3D centroid; generated objects rest on the ground.
    """

    id: str
    shape: str
    center: tuple
    size: tuple
    color: tuple
    tags: frozenset = frozenset()

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise SceneError(f"unknown shape {self.shape!r}")
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        color = tuple(float(c) for c in self.color)
        want = {"box": 3, "sphere": 1, "cylinder": 2}[self.shape]
        if len(size) != want:
            raise SceneError(f"{self.shape} size needs {want} numbers, got {size}")
        if any(s <= 0 for s in size):
            raise SceneError(f"sizes must be positive, got {size}")
        if len(center) != 3 or center[2] < 0:
            raise SceneError(f"center must be 3 floats with z >= 0, got {center}")
        if len(color) != 3 or any(not (0 <= c <= 1) for c in color):
            raise SceneError(f"color must be RGB in [0,1], got {color}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "tags", frozenset(self.tags))

    # -- footprint on the ground plane ------------------------------------
    def footprint_radius(self) -> float:
        """Radius of the bounding circle of the 2D footprint."""
        if self.shape == "box":
            return math.hypot(self.size[0], self.size[1]) / 2.0
        return self.size[0]

    def z_range(self) -> tuple:
        if self.shape == "box":
            hz = self.size[2] / 2.0
        elif self.shape == "sphere":
            hz = self.size[0]
        else:
            hz = self.size[1] / 2.0
        return (self.center[2] - hz, self.center[2] + hz)

    def top_height(self) -> float:
        return self.z_range()[1]

    def to_dict(self) -> dict:
        return {"id": self.id, "shape": self.shape, "center": list(self.center),
                "size": list(self.size), "color": list(self.color),
                "tags": sorted(self.tags)}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        color = d["color"]
        if isinstance(color, str):
            color = PALETTE[color]
        return cls(id=d["id"], shape=d["shape"], center=tuple(d["center"]),
                   size=tuple(d["size"]), color=tuple(color),
                   tags=frozenset(d.get("tags", ())))


def _footprint_gap(a: Primitive, b: Primitive) -> float:
    """Signed 2D separation between two footprints (<= 0 means overlap/touch)."""
    ar, br = a.shape == "box", b.shape == "box"
    if not ar and not br:
        d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
        return d - a.size[0] - b.size[0]
    if ar and br:
        gx = max(a.center[0] - a.size[0] / 2, b.center[0] - b.size[0] / 2) - \
            min(a.center[0] + a.size[0] / 2, b.center[0] + b.size[0] / 2)
        gy = max(a.center[1] - a.size[1] / 2, b.center[1] - b.size[1] / 2) - \
            min(a.center[1] + a.size[1] / 2, b.center[1] + b.size[1] / 2)
        return max(gx, gy)
    box, circ = (a, b) if ar else (b, a)
    dx = max(abs(circ.center[0] - box.center[0]) - box.size[0] / 2, 0.0)
    dy = max(abs(circ.center[1] - box.center[1]) - box.size[1] / 2, 0.0)
    return math.hypot(dx, dy) - circ.size[0]


@dataclass(frozen=True)
class SceneSpec:
    """A complete, validated world description."""

    seed: int | None = None
    extent: float = DEFAULT_EXTENT
    objects: tuple = ()
    sky_zenith: tuple = SKY_ZENITH
    sky_horizon: tuple = SKY_HORIZON
    ground_a: tuple = GROUND_A
    ground_b: tuple = GROUND_B
    ground_cell: float = GROUND_CELL

    def __post_init__(self):
        if self.extent <= 0:
            raise SceneError(f"extent must be positive, got {self.extent}")
        if self.ground_cell <= 0:
            raise SceneError("ground_cell must be positive")
        objs = tuple(self.objects)
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate object ids")
        half = self.extent / 2.0
        for o in objs:
            if abs(o.center[0]) > half or abs(o.center[1]) > half:
                raise SceneError(f"object {o.id!r} center outside extent")
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                if _footprint_gap(objs[i], objs[j]) <= 0.0:
                    raise SceneError(
                        f"objects {objs[i].id!r} and {objs[j].id!r} overlap on the ground")
        object.__setattr__(self, "objects", objs)
        for name in ("sky_zenith", "sky_horizon", "ground_a", "ground_b"):
            col = tuple(float(c) for c in getattr(self, name))
            if len(col) != 3 or any(not (0 <= c <= 1) for c in col):
                raise SceneError(f"{name} must be RGB in [0,1]")
            object.__setattr__(self, name, col)

    def get(self, object_id: str) -> Primitive:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def index_of(self, object_id: str) -> int:
        for i, o in enumerate(self.objects):
            if o.id == object_id:
                return i
        raise KeyError(object_id)

    def without(self, object_id: str) -> "SceneSpec":
        self.get(object_id)  # raise KeyError if absent
        return SceneSpec(seed=self.seed, extent=self.extent,
                         objects=tuple(o for o in self.objects if o.id != object_id),
                         sky_zenith=self.sky_zenith, sky_horizon=self.sky_horizon,
                         ground_a=self.ground_a, ground_b=self.ground_b,
                         ground_cell=self.ground_cell)

    def with_objects(self, extra) -> "SceneSpec":
        return SceneSpec(seed=self.seed, extent=self.extent,
                         objects=self.objects + tuple(extra),
                         sky_zenith=self.sky_zenith, sky_horizon=self.sky_horizon,
                         ground_a=self.ground_a, ground_b=self.ground_b,
                         ground_cell=self.ground_cell)

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "seed": self.seed,
            "extent": self.extent,
            "objects": [o.to_dict() for o in self.objects],
            "sky_zenith": list(self.sky_zenith),
            "sky_horizon": list(self.sky_horizon),
            "ground_a": list(self.ground_a),
            "ground_b": list(self.ground_b),
            "ground_cell": self.ground_cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(seed=d.get("seed"), extent=d.get("extent", DEFAULT_EXTENT),
                   objects=tuple(Primitive.from_dict(o) for o in d.get("objects", ())),
                   sky_zenith=tuple(d.get("sky_zenith", SKY_ZENITH)),
                   sky_horizon=tuple(d.get("sky_horizon", SKY_HORIZON)),
                   ground_a=tuple(d.get("ground_a", GROUND_A)),
                   ground_b=tuple(d.get("ground_b", GROUND_B)),
                   ground_cell=d.get("ground_cell", GROUND_CELL))


# ---------------------------------------------------------------------------
# procedural generation
# ---------------------------------------------------------------------------

_ORIGIN_CLEARANCE = 2.0
_PLACEMENT_GAP = 0.25


def _sample_primitive(rng: np.random.Generator, index: int, color_names=None) -> Primitive:
    shape = rng.choice(_SHAPES, p=[0.4, 0.3, 0.3])
    names = list(color_names) if color_names else list(PALETTE)
    color_name = names[int(rng.integers(len(names)))]
    color = PALETTE[color_name]
    if shape == "box":
        sx, sy = rng.uniform(0.8, 3.0, size=2)
        sz = rng.uniform(0.8, 3.5)
        size = (float(sx), float(sy), float(sz))
        cz = size[2] / 2.0
    elif shape == "sphere":
        r = float(rng.uniform(0.5, 1.6))
        size = (r,)
        cz = r
    else:
        r = float(rng.uniform(0.4, 1.2))
        h = float(rng.uniform(1.0, 3.5))
        size = (r, h)
        cz = h / 2.0
    return Primitive(id=f"{color_name}_{shape}_{index}", shape=shape,
                     center=(0.0, 0.0, cz), size=size, color=color,
                     tags=frozenset({color_name, shape}))


def _place(rng: np.random.Generator, proto: Primitive, accepted, extent: float,
           origin_clearance: float = _ORIGIN_CLEARANCE):
    half = extent / 2.0 - 2.0
    fr = proto.footprint_radius()
    for _ in range(200):
        cx = float(rng.uniform(-half, half))
        cy = float(rng.uniform(-half, half))
        cand = Primitive(id=proto.id, shape=proto.shape,
                         center=(cx, cy, proto.center[2]), size=proto.size,
                         color=proto.color, tags=proto.tags)
        if math.hypot(cx, cy) - fr < origin_clearance:
            continue
        if all(_footprint_gap(cand, o) >= _PLACEMENT_GAP for o in accepted):
            return cand
    return None


def scene_from_spec(seed: int | None = None, *, spec: dict | None = None,
                    n_objects: int | None = None, extent: float = DEFAULT_EXTENT) -> SceneSpec:
    """Build a scene either procedurally from ``seed`` or from an explicit dict.

    Procedural scenes draw 5-30 primitives with non-overlapping footprints
    (>= 0.25 m apart), keep a 2 m clear disc around the origin, and are a
    pure function of the seed.
    """
    if spec is not None:
        return SceneSpec.from_dict(spec)
    if seed is None:
        raise SceneError("need a seed or an explicit spec")
    rng = np.random.default_rng(int(seed))
    n = int(n_objects) if n_objects is not None else int(rng.integers(5, 31))
    if n < 0:
        raise SceneError(f"n_objects must be >= 0, got {n_objects}")
    accepted = []
    for i in range(n):
        proto = _sample_primitive(rng, i)
        placed = _place(rng, proto, accepted, extent)
        if placed is not None:
            accepted.append(placed)
    return SceneSpec(seed=int(seed), extent=extent, objects=tuple(accepted))


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def _hit_box(o, dx, dy, dz, prim: Primitive):
    cx, cy, cz = prim.center
    hx, hy, hz = (s / 2.0 for s in prim.size)
    lo = (cx - hx, cy - hy, cz - hz)
    hi = (cx + hx, cy + hy, cz + hz)
    tnear = np.full(dx.shape, -np.inf)
    tfar = np.full(dx.shape, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for oc, dc, l, h in ((o[0], dx, lo[0], hi[0]), (o[1], dy, lo[1], hi[1]),
                             (o[2], dz, lo[2], hi[2])):
            t0 = (l - oc) / dc
            t1 = (h - oc) / dc
            tmin = np.minimum(t0, t1)
            tmax = np.maximum(t0, t1)
            tnear = np.maximum(tnear, tmin)
            tfar = np.minimum(tfar, tmax)
    hit = (tnear <= tfar) & (tfar > _EPS)
    t = np.where(tnear > _EPS, tnear, tfar)
    return np.where(hit, t, np.inf)


def _hit_sphere(o, dx, dy, dz, prim: Primitive):
    cx, cy, cz = prim.center
    r = prim.size[0]
    ox, oy, oz = o[0] - cx, o[1] - cy, o[2] - cz
    b = dx * ox + dy * oy + dz * oz
    c = ox * ox + oy * oy + oz * oz - r * r
    disc = b * b - c
    s = np.sqrt(np.maximum(disc, 0.0))
    t1 = -b - s
    t2 = -b + s
    t = np.where(t1 > _EPS, t1, np.where(t2 > _EPS, t2, np.inf))
    return np.where(disc >= 0.0, t, np.inf)


def _hit_cylinder(o, dx, dy, dz, prim: Primitive):
    cx, cy, _ = prim.center
    r, _h = prim.size
    zlo, zhi = prim.z_range()
    ox, oy = o[0] - cx, o[1] - cy
    a = dx * dx + dy * dy
    b = dx * ox + dy * oy
    c = ox * ox + oy * oy - r * r
    best = np.full(dx.shape, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        s = np.sqrt(np.maximum(disc, 0.0))
        for sign in (-1.0, 1.0):
            t = (-b + sign * s) / a
            z = o[2] + t * dz
            ok = (disc >= 0) & (a > 1e-14) & (t > _EPS) & (z >= zlo) & (z <= zhi)
            best = np.where(ok & (t < best), t, best)
        for zcap in (zlo, zhi):
            t = (zcap - o[2]) / dz
            px = ox + t * dx
            py = oy + t * dy
            ok = np.isfinite(t) & (t > _EPS) & (px * px + py * py <= r * r)
            best = np.where(ok & (t < best), t, best)
    return best


_HIT = {"box": _hit_box, "sphere": _hit_sphere, "cylinder": _hit_cylinder}

GROUND_INDEX = -2
SKY_INDEX = -1


def cast_rays(scene: SceneSpec, origin, dirs):
    """Nearest-hit query for a bundle of rays.

    ``origin`` is one 3D point; ``dirs`` is (..., 3) (need not be
    normalized for the hit test itself, but callers pass unit vectors so
    the returned distances are metric).  Returns (t, index) where index
    is the position in scene.objects, GROUND_INDEX, or SKY_INDEX.
    """
    d = np.asarray(dirs, dtype=np.float64)
    shape = d.shape[:-1]
    dx = d[..., 0].reshape(-1)
    dy = d[..., 1].reshape(-1)
    dz = d[..., 2].reshape(-1)
    o = (float(origin[0]), float(origin[1]), float(origin[2]))
    t_best = np.full(dx.shape, np.inf)
    idx = np.full(dx.shape, SKY_INDEX, dtype=np.int32)
    for k, prim in enumerate(scene.objects):
        t = _HIT[prim.shape](o, dx, dy, dz, prim)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        idx = np.where(closer, np.int32(k), idx)
    if o[2] > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = -o[2] / dz
        ok = (dz < 0) & (tg > _EPS) & (tg < t_best)
        t_best = np.where(ok, tg, t_best)
        idx = np.where(ok, np.int32(GROUND_INDEX), idx)
    return t_best.reshape(shape), idx.reshape(shape)


def _ground_color(scene: SceneSpec, px, py, ox, oy):
    cell = scene.ground_cell
    par = (np.floor(px / cell) + np.floor(py / cell)) % 2.0
    a = np.asarray(scene.ground_a)
    b = np.asarray(scene.ground_b)
    col = np.where(par[..., None] == 0.0, a, b)
    dist = np.hypot(px - ox, py - oy)
    f = np.clip((dist - GROUND_FADE_START) / (GROUND_FADE_END - GROUND_FADE_START), 0.0, 1.0)
    mean = (a + b) / 2.0
    col = col * (1.0 - f[..., None]) + mean * f[..., None]
    shade = SHADE_AMBIENT + SHADE_DIFFUSE * _LIGHT[2]
    return col * shade


def _sky_color(scene: SceneSpec, dz):
    t = np.clip(dz, 0.0, 1.0)[..., None]
    return np.asarray(scene.sky_horizon) * (1.0 - t) + np.asarray(scene.sky_zenith) * t


def _primitive_normal(prim: Primitive, px, py, pz):
    if prim.shape == "sphere":
        cx, cy, cz = prim.center
        r = prim.size[0]
        return (px - cx) / r, (py - cy) / r, (pz - cz) / r
    if prim.shape == "box":
        cx, cy, cz = prim.center
        hx, hy, hz = (s / 2.0 for s in prim.size)
        dists = np.stack([
            np.abs(px - (cx - hx)), np.abs(px - (cx + hx)),
            np.abs(py - (cy - hy)), np.abs(py - (cy + hy)),
            np.abs(pz - (cz - hz)), np.abs(pz - (cz + hz)),
        ])
        face = np.argmin(dists, axis=0)
        nx = np.where(face == 0, -1.0, np.where(face == 1, 1.0, 0.0))
        ny = np.where(face == 2, -1.0, np.where(face == 3, 1.0, 0.0))
        nz = np.where(face == 4, -1.0, np.where(face == 5, 1.0, 0.0))
        return nx, ny, nz
    cx, cy, _ = prim.center
    r = prim.size[0]
    zlo, zhi = prim.z_range()
    d_top = np.abs(pz - zhi)
    d_bot = np.abs(pz - zlo)
    d_side = np.abs(np.hypot(px - cx, py - cy) - r)
    side = (d_side <= d_top) & (d_side <= d_bot)
    rad = np.maximum(np.hypot(px - cx, py - cy), 1e-12)
    nx = np.where(side, (px - cx) / rad, 0.0)
    ny = np.where(side, (py - cy) / rad, 0.0)
    nz = np.where(side, 0.0, np.where(d_top < d_bot, 1.0, -1.0))
    return nx, ny, nz


def shade_rays(scene: SceneSpec, origin, dirs):
    """Full color query: cast ``dirs`` and shade the winners.  Returns
    (rgb float32 in [0,1], t, index)."""
    d = np.asarray(dirs, dtype=np.float64)
    shape = d.shape[:-1]
    t, idx = cast_rays(scene, origin, d)
    tf = t.reshape(-1)
    ix = idx.reshape(-1)
    dx = d[..., 0].reshape(-1)
    dy = d[..., 1].reshape(-1)
    dz = d[..., 2].reshape(-1)
    out = np.empty((tf.shape[0], 3), dtype=np.float64)
    sky = ix == SKY_INDEX
    if np.any(sky):
        out[sky] = _sky_color(scene, dz[sky])
    gnd = ix == GROUND_INDEX
    if np.any(gnd):
        px = origin[0] + tf[gnd] * dx[gnd]
        py = origin[1] + tf[gnd] * dy[gnd]
        out[gnd] = _ground_color(scene, px, py, origin[0], origin[1])
    for k, prim in enumerate(scene.objects):
        m = ix == k
        if not np.any(m):
            continue
        px = origin[0] + tf[m] * dx[m]
        py = origin[1] + tf[m] * dy[m]
        pz = origin[2] + tf[m] * dz[m]
        nx, ny, nz = _primitive_normal(prim, px, py, pz)
        lam = np.maximum(nx * _LIGHT[0] + ny * _LIGHT[1] + nz * _LIGHT[2], 0.0)
        shade = SHADE_AMBIENT + SHADE_DIFFUSE * lam
        out[m] = np.asarray(prim.color) * shade[..., None]
    rgb = np.clip(out, 0.0, 1.0).astype(np.float32).reshape(shape + (3,))
    return rgb, t, idx


def ray_color(scene: SceneSpec, origin, direction):
    """Single-ray convenience wrapper: (rgb, t, object_id or 'ground'/'sky')."""
    rgb, t, idx = shade_rays(scene, origin, np.asarray(direction, dtype=np.float64)[None, :])
    i = int(idx[0])
    if i == SKY_INDEX:
        name = "sky"
    elif i == GROUND_INDEX:
        name = "ground"
    else:
        name = scene.objects[i].id
    return rgb[0], float(t[0]), name


# ---------------------------------------------------------------------------
# renderers
# ---------------------------------------------------------------------------

def _pano_cull(prim: Primitive, eye, heading: float, w: int, h: int):
    """Conservative (column segments, row range) that fully contain a
    primitive's image on the panorama grid.  Falls back to everything when
    the eye is inside the bounding cylinder."""
    ex, ey, ez = eye
    cx, cy, _ = prim.center
    ddx, ddy = cx - ex, cy - ey
    dist = math.hypot(ddx, ddy)
    fr = prim.footprint_radius()
    zlo, zhi = prim.z_range()
    if dist <= fr + 1e-6:
        return [(0, w)], (0, h)
    delta = math.asin(min(1.0, fr / dist)) + 2.0 * TWO_PI / w
    phic = normalize_longitude(math.atan2(ddy, ddx) - heading)
    lo, hi = phic - delta, phic + delta
    if hi - lo >= TWO_PI:
        segs = [(0, w)]
    else:
        a = int(math.floor((lo + PI) / TWO_PI * w))
        b = int(math.ceil((hi + PI) / TWO_PI * w))
        if a < 0:
            segs = [(a % w, w), (0, min(b, w))]
        elif b > w:
            segs = [(a, w), (0, b - w)]
        else:
            segs = [(a, b)]
    dmin = max(dist - fr, 1e-6)
    dmax = dist + fr
    th_hi = math.atan2(zhi - ez, dmin if zhi > ez else dmax)
    th_lo = math.atan2(zlo - ez, dmin if zlo < ez else dmax)
    j0 = max(0, int(math.floor((PI / 2 - th_hi) * h / PI)) - 2)
    j1 = min(h, int(math.ceil((PI / 2 - th_lo) * h / PI)) + 2)
    return segs, (j0, j1)


def render_panorama(scene: SceneSpec, pose: AgentPose, dims=(1024, 512),
                    eye_height: float = EYE_HEIGHT, supersample: int = 2) -> PanoramaImage:
    """Equirectangular render from the agent's eye.

    Panorama longitude 0 (image center) looks along the agent's heading.
    ``supersample`` casts that many rays per pixel horizontally and box-
    averages them (the default 2 band-limits vertical silhouette edges so
    that yaw re-projection commutes with rendering to better than 40 dB;
    1 gives raw point sampling).  Per-primitive column/row culling keeps
    the cost near the point-sampled renderer's.
    """
    w, h = check_pano_dims(dims)
    ss = int(supersample)
    if ss < 1:
        raise ParameterError(f"supersample must be >= 1, got {supersample}")
    wss = w * ss
    ex, ey = pose.x, pose.y
    ez = pose.z + eye_height
    eye = (ex, ey, ez)
    phi_view = (np.arange(wss, dtype=np.float64) + 0.5) * (TWO_PI / wss) - PI
    theta = PI / 2 - (np.arange(h, dtype=np.float64) + 0.5) * (PI / h)
    ct = np.cos(theta)[:, None]
    dz_col = np.sin(theta)[:, None]
    cphi = np.cos(phi_view + pose.heading)[None, :]
    sphi = np.sin(phi_view + pose.heading)[None, :]
    dx = ct * cphi
    dy = ct * sphi
    dz = np.broadcast_to(dz_col, (h, wss))
    t_best = np.full((h, wss), np.inf)
    idx = np.full((h, wss), SKY_INDEX, dtype=np.int16)
    for k, prim in enumerate(scene.objects):
        segs, (j0, j1) = _pano_cull(prim, eye, pose.heading, wss, h)
        if j0 >= j1:
            continue
        for a, b in segs:
            if a >= b:
                continue
            sl = (slice(j0, j1), slice(a, b))
            t = _HIT[prim.shape](eye, dx[sl], dy[sl], dz[sl], prim)
            closer = t < t_best[sl]
            t_best[sl] = np.where(closer, t, t_best[sl])
            idx[sl] = np.where(closer, np.int16(k), idx[sl])
    if ez > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = -ez / dz
        ok = (dz < 0) & (tg > _EPS) & (tg < t_best)
        t_best = np.where(ok, tg, t_best)
        idx = np.where(ok, np.int16(GROUND_INDEX), idx)
    out = np.empty((h, wss, 3), dtype=np.float64)
    sky = idx == SKY_INDEX
    if np.any(sky):
        out[sky] = _sky_color(scene, dz[sky])
    gnd = idx == GROUND_INDEX
    if np.any(gnd):
        px = ex + t_best[gnd] * dx[gnd]
        py = ey + t_best[gnd] * dy[gnd]
        out[gnd] = _ground_color(scene, px, py, ex, ey)
    for k, prim in enumerate(scene.objects):
        m = idx == k
        if not np.any(m):
            continue
        px = ex + t_best[m] * dx[m]
        py = ey + t_best[m] * dy[m]
        pz = ez + t_best[m] * dz[m]
        nx, ny, nz = _primitive_normal(prim, px, py, pz)
        lam = np.maximum(nx * _LIGHT[0] + ny * _LIGHT[1] + nz * _LIGHT[2], 0.0)
        out[m] = np.asarray(prim.color) * (SHADE_AMBIENT + SHADE_DIFFUSE * lam)[..., None]
    if ss > 1:
        out = out.reshape(h, w, ss, 3).mean(axis=2)
    return PanoramaImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def render_bev(scene: SceneSpec, pose: AgentPose, height: float = 10.0,
               size: int = 512, hfov: float = PI / 2,
               orthographic: bool = False) -> PerspectiveImage:
    """Bird's-eye view from ``height`` meters above the pose's ground point.

    The camera looks straight down; image up is the agent's heading (the
    layout of the down cube face rotated into the world frame).  Pinhole by
    default with hfov = pi/2 (so the image is exactly the elevated down
    face); ``orthographic=True`` switches to parallel rays covering the
    same ground square as the pinhole does at z = 0.
    """
    if height <= 0:
        raise ParameterError(f"height must be positive, got {height}")
    if not (0 < hfov < PI):
        raise ParameterError(f"hfov must be in (0, pi), got {hfov}")
    if size < 2:
        raise ParameterError(f"size must be >= 2, got {size}")
    ch, sh = math.cos(pose.heading), math.sin(pose.heading)
    r_w = np.array([sh, -ch, 0.0])
    d_w = np.array([-ch, -sh, 0.0])
    th = math.tan(hfov / 2.0)
    s = (np.arange(size, dtype=np.float64) + 0.5) * (2.0 / size) - 1.0
    a = s[None, :, None]
    b = s[:, None, None]
    eye = np.array([pose.x, pose.y, pose.z + height])
    if orthographic:
        half = height * th
        px = eye[0] + a[..., 0] * half * r_w[0] + b[..., 0] * half * d_w[0]
        py = eye[1] + a[..., 0] * half * r_w[1] + b[..., 0] * half * d_w[1]
        data = _ortho_topdown(scene, px, py, eye)
        return PerspectiveImage(data, yaw=pose.heading, pitch=-PI / 2, hfov=hfov)
    down = np.array([0.0, 0.0, -1.0])
    dirs = down[None, None, :] + a * th * r_w + b * th * d_w
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    rgb, _, _ = shade_rays(scene, eye, dirs)
    return PerspectiveImage(rgb, yaw=pose.heading, pitch=-PI / 2, hfov=hfov)


def _ortho_topdown(scene: SceneSpec, px, py, eye):
    """Parallel straight-down rays: a depth-buffered top-surface map."""
    zbuf = np.zeros(px.shape)
    out = _ground_color(scene, px, py, eye[0], eye[1])
    shade_top = SHADE_AMBIENT + SHADE_DIFFUSE * _LIGHT[2]
    for prim in scene.objects:
        cx, cy, cz = prim.center
        if prim.shape == "box":
            hx, hy = prim.size[0] / 2.0, prim.size[1] / 2.0
            m = (np.abs(px - cx) <= hx) & (np.abs(py - cy) <= hy)
            ztop = np.where(m, prim.z_range()[1], -np.inf)
            col = np.asarray(prim.color) * shade_top
            col = np.broadcast_to(col, px.shape + (3,))
        elif prim.shape == "cylinder":
            rho2 = (px - cx) ** 2 + (py - cy) ** 2
            m = rho2 <= prim.size[0] ** 2
            ztop = np.where(m, prim.z_range()[1], -np.inf)
            col = np.asarray(prim.color) * shade_top
            col = np.broadcast_to(col, px.shape + (3,))
        else:
            r = prim.size[0]
            rho2 = (px - cx) ** 2 + (py - cy) ** 2
            m = rho2 <= r * r
            h2 = np.sqrt(np.maximum(r * r - rho2, 0.0))
            ztop = np.where(m, cz + h2, -np.inf)
            nx = (px - cx) / r
            ny = (py - cy) / r
            nz = h2 / r
            lam = np.maximum(nx * _LIGHT[0] + ny * _LIGHT[1] + nz * _LIGHT[2], 0.0)
            col = np.asarray(prim.color) * (SHADE_AMBIENT + SHADE_DIFFUSE * lam)[..., None]
        win = m & (ztop > zbuf) & (ztop < eye[2])
        zbuf = np.where(win, ztop, zbuf)
        out = np.where(win[..., None], col, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def bev_pixel_of_point(point, pose: AgentPose, height: float, size: int,
                       hfov: float = PI / 2):
    """Closed-form pixel position of a world point in the default (pinhole)
    BEV; None if the point is not below the camera."""
    ch, sh = math.cos(pose.heading), math.sin(pose.heading)
    vx = point[0] - pose.x
    vy = point[1] - pose.y
    vz = point[2] - (pose.z + height)
    if vz >= 0:
        return None
    denom = -vz
    th = math.tan(hfov / 2.0)
    a = (vx * sh + vy * (-ch)) / (denom * th)
    b = (vx * (-ch) + vy * (-sh)) / (denom * th)
    return ((a + 1.0) * 0.5 * size, (b + 1.0) * 0.5 * size)


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

_SAMPLE_DIRS = np.array([
    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
    (0.7071, 0.7071, 0), (-0.7071, 0.7071, 0), (0.7071, 0, 0.7071),
])


def _sample_points(prim: Primitive) -> np.ndarray:
    c = np.asarray(prim.center)
    if prim.shape == "sphere":
        scale = np.full(3, prim.size[0] * 0.7)
    elif prim.shape == "box":
        scale = np.asarray(prim.size) * 0.35
    else:
        scale = np.array([prim.size[0] * 0.7, prim.size[0] * 0.7, prim.size[1] * 0.45])
    pts = np.vstack([c, c + _SAMPLE_DIRS * scale])
    pts[:, 2] = np.maximum(pts[:, 2], 0.05)
    return pts


def is_visible(scene: SceneSpec, pose: AgentPose, object_id: str,
               exclude=frozenset()) -> tuple:
    """Line-of-sight test from the agent's eye to an object.

    Casts rays to the target's center and 9 deterministic surface samples;
    the target is visible iff the nearest primitive along at least one ray
    is the target itself.  Returns (visible, bearing) with bearing relative
    to the agent's heading, from the first visible sample (or the center
    direction when hidden).
    """
    target_idx = scene.index_of(object_id)
    target = scene.objects[target_idx]
    eye = np.array([pose.x, pose.y, pose.z + EYE_HEIGHT])
    pts = _sample_points(target)
    vecs = pts - eye[None, :]
    dists = np.linalg.norm(vecs, axis=1)
    dists = np.maximum(dists, 1e-9)
    dirs = vecs / dists[:, None]
    skip = {scene.index_of(e) for e in exclude if e != object_id}
    t_target = _HIT[target.shape]((eye[0], eye[1], eye[2]),
                                  dirs[:, 0], dirs[:, 1], dirs[:, 2], target)
    t_block = np.full(len(pts), np.inf)
    for k, prim in enumerate(scene.objects):
        if k == target_idx or k in skip:
            continue
        t = _HIT[prim.shape]((eye[0], eye[1], eye[2]),
                             dirs[:, 0], dirs[:, 1], dirs[:, 2], prim)
        t_block = np.minimum(t_block, t)
    seen = np.isfinite(t_target) & (t_target <= t_block + 1e-9)
    if np.any(seen):
        i = int(np.argmax(seen))
        bearing = math.atan2(dirs[i, 1], dirs[i, 0]) - pose.heading
        return True, normalize_longitude(bearing)
    bearing = math.atan2(dirs[0, 1], dirs[0, 0]) - pose.heading
    return False, normalize_longitude(bearing)


# ---------------------------------------------------------------------------
# collision
# ---------------------------------------------------------------------------

def _point_seg_dist(px, py, ax, ay, bx, by):
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    if L2 < 1e-18:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / L2))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _segs_cross(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    def orient(ox, oy, px, py, qx, qy):
        return (px - ox) * (qy - oy) - (py - oy) * (qx - ox)
    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def _seg_seg_dist(ax, ay, bx, by, cx, cy, dx, dy):
    if _segs_cross(ax, ay, bx, by, cx, cy, dx, dy):
        return 0.0
    return min(_point_seg_dist(ax, ay, cx, cy, dx, dy),
               _point_seg_dist(bx, by, cx, cy, dx, dy),
               _point_seg_dist(cx, cy, ax, ay, bx, by),
               _point_seg_dist(dx, dy, ax, ay, bx, by))


def _seg_rect_dist(ax, ay, bx, by, xlo, xhi, ylo, yhi):
    def inside(px, py):
        return xlo <= px <= xhi and ylo <= py <= yhi
    if inside(ax, ay) or inside(bx, by):
        return 0.0
    corners = ((xlo, ylo), (xhi, ylo), (xhi, yhi), (xlo, yhi))
    best = math.inf
    for i in range(4):
        cx, cy = corners[i]
        dx, dy = corners[(i + 1) % 4]
        best = min(best, _seg_seg_dist(ax, ay, bx, by, cx, cy, dx, dy))
    return best


def _seg_footprint_dist(prim: Primitive, ax, ay, bx, by) -> float:
    if prim.shape == "box":
        cx, cy, _ = prim.center
        hx, hy = prim.size[0] / 2.0, prim.size[1] / 2.0
        return _seg_rect_dist(ax, ay, bx, by, cx - hx, cx + hx, cy - hy, cy + hy)
    cx, cy, _ = prim.center
    return max(0.0, _point_seg_dist(cx, cy, ax, ay, bx, by) - prim.size[0])


def clearance_along_path(scene: SceneSpec, pose: AgentPose, alpha: float, d: float,
                         cap: float = 100.0) -> float:
    """Smallest 2D distance from the swept path to any footprint the agent's
    body could touch (primitives overlapping z in [0, 1.8]); ``cap`` when
    nothing is in range."""
    h = normalize_longitude(pose.heading + alpha)
    ax, ay = pose.x, pose.y
    bx, by = ax + d * math.cos(h), ay + d * math.sin(h)
    best = cap
    for prim in scene.objects:
        zlo, zhi = prim.z_range()
        if zhi < 0.0 or zlo > AGENT_HEIGHT:
            continue
        best = min(best, _seg_footprint_dist(prim, ax, ay, bx, by))
    return best


def path_blocked(scene: SceneSpec, pose: AgentPose, alpha: float, d: float) -> bool:
    """True when moving by (alpha, d) would bring the agent's 0.3 m body
    disc into contact with any footprint."""
    return clearance_along_path(scene, pose, alpha, d) <= AGENT_RADIUS


def footprint_distance(scene: SceneSpec, point, object_id: str) -> float:
    """Horizontal distance from a ground point to an object's footprint
    surface (0 inside the footprint)."""
    prim = scene.get(object_id)
    x, y = float(point[0]), float(point[1])
    return _seg_footprint_dist(prim, x, y, x, y)


# ---------------------------------------------------------------------------
# trajectory datasets
# ---------------------------------------------------------------------------

def capture_trajectory_dataset(scene: SceneSpec, poses, out_dir: str,
                               dims=(512, 256), face_size: int | None = None) -> dict:
    """Render a pose sequence to panoramas + cubemaps on disk with a manifest.

    Actions are derived from consecutive poses (turn to the new heading,
    then travel the displacement).  If a derived move is blocked by scene
    geometry, capture stops there and the manifest records the truncation.
    """
    poses = [p if isinstance(p, AgentPose) else AgentPose(tuple(p[:3]), p[3]) for p in poses]
    if not poses:
        raise ParameterError("need at least one pose")
    w, h = check_pano_dims(dims)
    fs = int(face_size) if face_size else h
    os.makedirs(out_dir, exist_ok=True)
    kept = [poses[0]]
    actions = []
    truncated_at = None
    for t in range(1, len(poses)):
        prev, cur = kept[-1], poses[t]
        dx, dy = cur.x - prev.x, cur.y - prev.y
        d = math.hypot(dx, dy)
        alpha = normalize_longitude(cur.heading - prev.heading)
        if d > 1e-9 and path_blocked(scene, prev, alpha, d):
            truncated_at = t
            break
        actions.append((alpha, d))
        kept.append(cur)
    steps = []
    for t, pose in enumerate(kept):
        sdir = os.path.join(out_dir, f"step_{t:04d}")
        os.makedirs(sdir, exist_ok=True)
        pano = render_panorama(scene, pose, (w, h))
        save_raster(pano, os.path.join(sdir, "pano.png"))
        cm = equirect_to_cubemap(pano, fs)
        save_cubemap(cm, os.path.join(sdir, "cube"))
        steps.append({"index": t, "dir": f"step_{t:04d}", "pano": "pano.png",
                      "cubemap": "cube.json"})
    manifest = {
        "v": 1,
        "dims": [w, h],
        "face_size": fs,
        "eye_height": EYE_HEIGHT,
        "scene": scene.to_dict(),
        "poses": [[p.x, p.y, p.z, p.heading] for p in kept],
        "actions": [[a, d] for a, d in actions],
        "steps": steps,
        "truncated_at_step": truncated_at,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset_manifest(path: str) -> dict:
    """Read a dataset manifest (pass the directory or the manifest file)."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path) as fh:
        return json.load(fh)


def validate_dataset(root: str) -> dict:
    """Check a captured dataset's structure; returns the manifest or raises
    SceneError describing the first problem found."""
    manifest = load_dataset_manifest(root)
    base = root if os.path.isdir(root) else os.path.dirname(root)
    if manifest.get("v") != 1:
        raise SceneError(f"unsupported manifest version {manifest.get('v')!r}")
    n = len(manifest["poses"])
    if len(manifest["steps"]) != n:
        raise SceneError("steps and poses disagree in length")
    if len(manifest["actions"]) != n - 1:
        raise SceneError("actions must be one shorter than poses")
    for step in manifest["steps"]:
        sdir = os.path.join(base, step["dir"])
        for key in ("pano", "cubemap"):
            p = os.path.join(sdir, step[key])
            if not os.path.exists(p):
                raise SceneError(f"missing file {p}")
    SceneSpec.from_dict(manifest["scene"])
    return manifest
