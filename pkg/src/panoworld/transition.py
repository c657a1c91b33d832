"""Action-conditioned view transitions.

An :class:`Action` is a turn followed by straight travel.  Applying one to
a panoramic view produces a short clip: the view is first re-projected so
the new heading sits at image center, then a world model synthesizes the
forward-motion frames.  ``GroundTruthModel`` renders those frames from the
hidden scene geometry; ``DegradedModel`` wraps it and corrupts the output
with blur and noise that grow along the sequence, which is how imperfect
imagination is simulated throughout the evaluation code.

``rollout`` runs an action list to an :class:`ExplorationSession`, the
unit of storage used by the CLI, the server export, and the loop-closure
evaluation.  Sessions serialize to a directory (or zip) of PNG frames
plus a ``session.json``.
"""

from __future__ import annotations

import io
import json
import math
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import (
    ConfigError,
    ConsistencyError,
    GenerationError,
    ParameterError,
    RolloutError,
)
from .geometry import PI, RotationSpec, check_pano_dims, normalize_longitude
from .image import PanoramaImage, load_raster, rotate_panorama_image, save_raster
from .world import EYE_HEIGHT, AgentPose, SceneSpec, clearance_along_path, path_blocked, render_panorama


@dataclass(frozen=True)
class Action:
    """Turn left by ``alpha`` radians, then walk ``d`` meters forward.

    ``alpha`` is stored normalized to [-pi, pi); ``d`` must be finite and
    non-negative.
    """

    alpha: float
    d: float = 0.0

    def __post_init__(self):
        a = float(self.alpha)
        dd = float(self.d)
        if not (math.isfinite(a) and math.isfinite(dd)):
            raise ParameterError(f"action components must be finite, got ({self.alpha}, {self.d})")
        if dd < 0:
            raise ParameterError(f"travel distance must be >= 0, got {dd}")
        if not (-PI <= a < PI):
            a = normalize_longitude(a)  # in-range values pass through bit-exact
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "d", dd)


@dataclass(frozen=True)
class TransitionConfig:
    """Clip shape for one action: frame density and rotation handling."""

    frames_per_meter: float = 4.0
    min_frames: int = 1
    max_frames: int = 10_000
    rotation_mode: str = "rigid"

    def __post_init__(self):
        if not (math.isfinite(self.frames_per_meter) and self.frames_per_meter > 0):
            raise ConfigError(f"frames_per_meter must be positive, got {self.frames_per_meter}")
        if self.min_frames < 1:
            raise ConfigError(f"min_frames must be >= 1, got {self.min_frames}")
        if self.max_frames < self.min_frames:
            raise ConfigError("max_frames must be >= min_frames")
        if self.rotation_mode not in ("rigid", "paper_literal"):
            raise ConfigError(f"unknown rotation_mode {self.rotation_mode!r}")

    def frame_count(self, d: float) -> int:
        """Number of frames for a travel of ``d`` meters (round half up,
        never fewer than ``min_frames``)."""
        if d < 0:
            raise ParameterError(f"travel distance must be >= 0, got {d}")
        s = max(self.min_frames, int(math.floor(self.frames_per_meter * d + 0.5)))
        if s > self.max_frames:
            raise ConfigError(f"action at d={d} needs {s} frames, limit is {self.max_frames}")
        return s


class WorldModel:
    """Interface for view-conditioned clip generators.

    ``generate`` receives the current view already re-projected to the
    post-turn heading and must return exactly ``n_frames`` panoramas for
    the forward travel.  Exact models are free to ignore the seed view.
    """

    config: TransitionConfig

    def initial_view(self) -> PanoramaImage:
        raise NotImplementedError

    def generate(self, view: PanoramaImage, action: Action, n_frames: int):
        raise NotImplementedError


def apply_action(model: WorldModel, view: PanoramaImage, action: Action):
    """One transition: re-project ``view`` for the turn, then have the
    model generate the travel frames.  Returns the list of frames."""
    cfg = model.config
    rotated = rotate_panorama_image(
        view, RotationSpec(dphi=-action.alpha, dtheta=0.0, mode=cfg.rotation_mode))
    n = cfg.frame_count(action.d)
    frames = model.generate(rotated, action, n)
    if len(frames) != n:
        raise GenerationError(f"model returned {len(frames)} frames, expected {n}")
    return frames


class GroundTruthModel(WorldModel):
    """Exact world model: renders travel frames from the scene geometry.

    The agent pose is internal state and is not part of the generate()
    interface — policies only ever see frames.  ``probe_clearances`` is
    the one sanctioned side channel: how far each candidate action could
    travel before the body radius touches something.
    """

    def __init__(self, scene: SceneSpec, start: AgentPose = AgentPose(),
                 dims=(512, 256), config: TransitionConfig | None = None,
                 eye_height: float = EYE_HEIGHT):
        self.scene = scene
        self.dims = tuple(check_pano_dims(dims))
        self.config = config if config is not None else TransitionConfig()
        self.eye_height = float(eye_height)
        self._pose = start

    @property
    def pose(self) -> AgentPose:
        return self._pose

    def initial_view(self) -> PanoramaImage:
        return render_panorama(self.scene, self._pose, self.dims, self.eye_height)

    def generate(self, view: PanoramaImage, action: Action, n_frames: int):
        if n_frames < 1:
            raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
        turned = self._pose.step(action.alpha, 0.0)
        if action.d > 0 and path_blocked(self.scene, turned, 0.0, action.d):
            raise GenerationError(
                f"path blocked: cannot travel {action.d:.2f} m at heading {turned.heading:.3f}")
        frames = []
        pose = turned
        step_d = action.d / n_frames
        for _ in range(n_frames):
            pose = pose.step(0.0, step_d)
            frames.append(render_panorama(self.scene, pose, self.dims, self.eye_height))
        self._pose = pose
        return frames

    def probe_clearances(self, actions):
        """Clearance (meters of free travel) for each candidate action
        from the current pose."""
        return [clearance_along_path(self.scene, self._pose, a.alpha, a.d) for a in actions]


def degrade_frame(frame: PanoramaImage, step_index: int, kappa: float,
                  rng: np.random.Generator) -> PanoramaImage:
    """Corrupt one frame as if it were the ``step_index``-th of a rollout.

    The frame is blurred with sigma = kappa * step_index (separable
    Gaussian, horizontal axis wraps, clamped at a quarter of the image
    width), then gets additive zero-mean noise with std kappa / 10, and
    is clamped back to [0, 1].  kappa = 0 returns the input unchanged.
    """
    if step_index < 0:
        raise ParameterError(f"step_index must be >= 0, got {step_index}")
    if not (math.isfinite(kappa) and kappa >= 0):
        raise ParameterError(f"kappa must be finite and >= 0, got {kappa}")
    if kappa == 0.0:
        return frame
    a = frame.data.astype(np.float64)
    sigma = min(kappa * step_index, frame.width / 4.0)
    if sigma > 0:
        a = gaussian_filter1d(a, sigma, axis=1, mode="wrap")
        a = gaussian_filter1d(a, sigma, axis=0, mode="nearest")
    a = a + rng.normal(0.0, kappa / 10.0, a.shape)
    return PanoramaImage(np.clip(a, 0.0, 1.0).astype(np.float32))


class DegradedModel(WorldModel):
    """Wraps an exact model and corrupts every emitted frame.

    Frame ``k`` of the whole session (a global counter) is passed through
    :func:`degrade_frame` with ``step_index = k``, so blur grows and error
    compounds with sequence length the way imagination drift would.
    kappa = 0 is a bit-identical passthrough.
    """

    def __init__(self, inner: GroundTruthModel, kappa: float = 0.0, seed: int = 0):
        if not (math.isfinite(kappa) and kappa >= 0):
            raise ParameterError(f"kappa must be finite and >= 0, got {kappa}")
        self.inner = inner
        self.kappa = float(kappa)
        self._rng = np.random.default_rng(seed)
        self._count = 0

    @property
    def config(self) -> TransitionConfig:
        return self.inner.config

    @property
    def pose(self) -> AgentPose:
        return self.inner.pose

    @property
    def scene(self) -> SceneSpec:
        return self.inner.scene

    @property
    def dims(self):
        return self.inner.dims

    def initial_view(self) -> PanoramaImage:
        return self.inner.initial_view()

    def probe_clearances(self, actions):
        return self.inner.probe_clearances(actions)

    def generate(self, view: PanoramaImage, action: Action, n_frames: int):
        frames = self.inner.generate(view, action, n_frames)
        return [self._degrade(f) for f in frames]

    def _degrade(self, img: PanoramaImage) -> PanoramaImage:
        k = self._count
        self._count += 1
        return degrade_frame(img, k, self.kappa, self._rng)


def initialize_world(model: WorldModel, expected: PanoramaImage | None = None,
                     min_psnr: float = 25.0) -> PanoramaImage:
    """Fetch the model's starting view, optionally checking it against the
    panorama the session was told to start from."""
    x0 = model.initial_view()
    if expected is not None:
        if expected.dims != x0.dims:
            raise ConsistencyError(
                f"initial view dims {x0.dims} do not match expected {expected.dims}")
        mse = float(np.mean((x0.data.astype(np.float64) - expected.data.astype(np.float64)) ** 2))
        psnr = math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
        if psnr < min_psnr:
            raise ConsistencyError(
                f"initial view disagrees with expected start ({psnr:.1f} dB < {min_psnr} dB)")
    return x0


def sample_action(rng: np.random.Generator, max_distance: float = 4.0) -> Action:
    """Uniform random turn in [-pi, pi) and travel in [0, max_distance]."""
    return Action(float(rng.uniform(-PI, PI)), float(rng.uniform(0.0, max_distance)))


def invert_actions(actions) -> list:
    """Actions that walk the path back and restore the start pose exactly.

    Each original (alpha, d) is undone by an about-face travel (pi, d)
    followed by the turn (-alpha - pi, 0) that restores the prior heading;
    originals are undone last-to-first.
    """
    out = []
    for a in reversed(list(actions)):
        out.append(Action(PI, a.d))
        out.append(Action(normalize_longitude(-a.alpha - PI), 0.0))
    return out


@dataclass
class SessionStep:
    action: Action
    frames: list


@dataclass
class ExplorationSession:
    """A rollout's record: starting view, per-action clips, and (when the
    model exposes its pose) the pose after each step."""

    x0: PanoramaImage
    steps: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def actions(self):
        return [s.action for s in self.steps]

    @property
    def frames(self):
        out = []
        for s in self.steps:
            out.extend(s.frames)
        return out

    @property
    def final_view(self) -> PanoramaImage:
        for s in reversed(self.steps):
            if s.frames:
                return s.frames[-1]
        return self.x0

    def save(self, out_dir: str) -> str:
        """Write PNG frames plus session.json; returns the manifest path."""
        os.makedirs(out_dir, exist_ok=True)
        save_raster(self.x0.data, os.path.join(out_dir, "x0.png"))
        steps = []
        for i, s in enumerate(self.steps):
            names = []
            for j, f in enumerate(s.frames):
                name = f"step{i:03d}_f{j:03d}.png"
                save_raster(f.data, os.path.join(out_dir, name))
                names.append(name)
            steps.append({"alpha": s.action.alpha, "d": s.action.d, "frames": names})
        manifest = {
            "v": 1,
            "dims": [self.x0.width, self.x0.height],
            "x0": "x0.png",
            "steps": steps,
            "poses": [[p.x, p.y, p.z, p.heading] for p in self.poses] or None,
            "meta": self.meta,
        }
        path = os.path.join(out_dir, "session.json")
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=1)
        return path


def _session_reader(path: str):
    """Yield a read(name) -> bytes accessor for a session dir or zip."""
    if os.path.isdir(path):
        def read(name):
            with open(os.path.join(path, name), "rb") as fh:
                return fh.read()
        return read
    if zipfile.is_zipfile(path):
        zf = zipfile.ZipFile(path)
        roots = {n.split("/", 1)[0] for n in zf.namelist() if "/" in n}
        prefix = ""
        if "session.json" not in zf.namelist() and len(roots) == 1:
            prefix = next(iter(roots)) + "/"

        def read(name):
            return zf.read(prefix + name)
        return read
    raise FileNotFoundError(f"no session directory or zip at {path}")


def load_session(path: str) -> ExplorationSession:
    """Load a saved session from a directory or a zip archive of one."""
    read = _session_reader(path)
    manifest = json.loads(read("session.json").decode("utf-8"))
    if manifest.get("v") != 1:
        raise ConfigError(f"unsupported session manifest version {manifest.get('v')!r}")

    def img(name):
        return PanoramaImage(load_raster(io.BytesIO(read(name))))

    x0 = img(manifest["x0"])
    steps = [
        SessionStep(Action(s["alpha"], s["d"]), [img(n) for n in s["frames"]])
        for s in manifest["steps"]
    ]
    poses = [AgentPose((p[0], p[1], p[2]), p[3]) for p in manifest.get("poses") or []]
    return ExplorationSession(x0=x0, steps=steps, poses=poses, meta=manifest.get("meta", {}))


def rollout(model: WorldModel, actions, *, x0: PanoramaImage | None = None,
            on_step=None) -> ExplorationSession:
    """Apply ``actions`` in order, collecting every frame.

    A failure mid-way raises :class:`RolloutError` carrying the partial
    session (``.session``) and the original exception (``.cause``).
    ``on_step(index, action, frames)`` is called after each action.
    """
    if x0 is None:
        x0 = model.initial_view()
    session = ExplorationSession(x0=x0, meta={"dims": [x0.width, x0.height]})
    if hasattr(model, "pose"):
        session.poses.append(model.pose)
    view = x0
    for i, action in enumerate(actions):
        try:
            frames = apply_action(model, view, action)
        except Exception as exc:
            raise RolloutError(f"action {i} ({action.alpha:+.3f}, {action.d:.2f}) failed: {exc}",
                               session=session, cause=exc) from exc
        session.steps.append(SessionStep(action, frames))
        if hasattr(model, "pose"):
            session.poses.append(model.pose)
        if on_step is not None:
            on_step(i, action, frames)
        view = frames[-1]
    return session
