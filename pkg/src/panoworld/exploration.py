"""Exploration sessions: pilots that pick actions from panoramic views.

Three action sources drive a session: a pilot callable (automatic), an
:class:`ActionFeed` (interactive, e.g. fed by a websocket), or a
:class:`GoalSpec` (navigate to a colored target seen only in pixels).
All of them act through the same world-model interface — frames in,
actions out — with clearance probes as the single sanctioned side
channel for collision awareness.

Goal seeking is entirely image-driven: a chromaticity mask finds the
target (flat shading preserves chromaticity, so the mask is robust to
lighting), the mask's vertical extent gives range through the elevation
difference of its top and bottom edges, and the mask's circular-mean
longitude gives bearing.
"""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DetectionError, GenerationError, ParameterError, RolloutError
from .geometry import PI, TWO_PI, normalize_longitude
from .image import PanoramaImage
from .transition import Action, ExplorationSession, SessionStep, apply_action
from .world import AGENT_RADIUS, PALETTE


class ActionFeed:
    """Thread-safe action queue with a close signal.

    ``get`` blocks until an action arrives and returns None once the feed
    is closed and drained; ``put`` after ``close`` raises RuntimeError.
    """

    _SENTINEL = object()

    def __init__(self):
        self._q = queue.Queue()
        self._closed = threading.Event()

    def put(self, action: Action):
        if self._closed.is_set():
            raise RuntimeError("action feed is closed")
        self._q.put(action)

    def close(self):
        if not self._closed.is_set():
            self._closed.set()
            self._q.put(self._SENTINEL)

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def get(self, timeout: float | None = None):
        item = self._q.get(timeout=timeout)
        if item is self._SENTINEL:
            self._q.put(self._SENTINEL)  # keep returning None to later calls
            return None
        return item


# ---------------------------------------------------------------------------
# clearance-probing pilot
# ---------------------------------------------------------------------------

CANDIDATE_HEADINGS = (0.0, PI / 4, -PI / 4, PI / 2, -PI / 2, 3 * PI / 4, -3 * PI / 4, -PI)
CANDIDATE_DISTANCES = (1.0, 2.0, 4.0)


def candidate_actions():
    """The pilot's fixed action menu: 8 headings x 3 travel distances."""
    return [Action(a, d) for a in CANDIDATE_HEADINGS for d in CANDIDATE_DISTANCES]


def heuristic_pilot(model, view=None) -> Action:
    """Pick the menu action whose swept path stays farthest from geometry.

    Ties prefer going straight (smallest |turn|), then the shortest
    travel.  On an open plain that lands on (0, 1 m).  When every menu
    action would collide, turn in place to face backward.
    """
    cands = candidate_actions()
    clearances = model.probe_clearances(cands)
    safe = [(c, a) for c, a in zip(clearances, cands) if c > AGENT_RADIUS]
    if not safe:
        return Action(-PI, 0.0)
    best = min(safe, key=lambda ca: (-ca[0], abs(ca[1].alpha), ca[1].d, ca[1].alpha))
    return best[1]


# ---------------------------------------------------------------------------
# color-target detection
# ---------------------------------------------------------------------------

def chroma_mask(image, color, threshold: float = 0.10) -> np.ndarray:
    """Boolean mask of pixels whose chromaticity matches ``color``.

    ``color`` is an RGB triple or a palette name.  Chromaticity (RGB
    normalized by its sum) cancels the shading term, so the mask covers
    the whole lit object, not just bright faces.
    """
    if isinstance(color, str):
        color = PALETTE[color]
    data = getattr(image, "data", image)
    a = np.asarray(data, dtype=np.float64)
    s = a.sum(axis=2, keepdims=True)
    chroma = a / np.maximum(s, 1e-9)
    t = np.asarray(color, dtype=np.float64)
    tc = t / max(float(t.sum()), 1e-9)
    dist = np.sqrt(((chroma - tc) ** 2).sum(axis=2))
    return (dist < threshold) & (s[..., 0] > 0.1)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """The largest 4-connected component, with horizontal wrap handled by
    rolling an empty column to the seam first.  All-False in, all-False out."""
    if not mask.any():
        return np.zeros_like(mask)
    cols = mask.any(axis=0)
    if cols.all():
        shift = 0
    else:
        first_empty = int(np.argmin(cols))
        shift = first_empty + 1
    rolled = np.roll(mask, -shift, axis=1)
    labels, n = ndimage.label(rolled)
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    comp = labels == int(np.argmax(sizes))
    return np.roll(comp, shift, axis=1)


@dataclass(frozen=True)
class Detection:
    """Where a color target sits in a panorama: view-relative bearing,
    estimated horizontal range, the mask's pixel footprint, and the
    angular width of the mask (for sizing the target)."""

    bearing: float
    range_m: float
    n_pixels: int
    rows: tuple
    phi_span: float


def detect_goal(view: PanoramaImage, color, height: float,
                min_pixels: int = 12, threshold: float = 0.10) -> Detection:
    """Find a target of known physical ``height`` (meters) by color.

    Range comes from the elevation spread of the mask: for an object
    standing on the ground, tan(top) - tan(bottom) = height / range
    independent of eye height.  Raises DetectionError when no usable
    blob exists.
    """
    if height <= 0:
        raise ParameterError(f"target height must be positive, got {height}")
    mask = largest_component(chroma_mask(view, color, threshold))
    n = int(mask.sum())
    if n < min_pixels:
        raise DetectionError(f"target color not found ({n} matching pixels)")
    h, w = mask.shape
    js, us = np.nonzero(mask)
    phis = (us + 0.5) * (TWO_PI / w) - PI
    bearing = math.atan2(float(np.sin(phis).mean()), float(np.cos(phis).mean()))
    jmin, jmax = int(js.min()), int(js.max())
    theta_top = PI / 2 - (jmin + 0.5) * (PI / h)
    theta_bot = PI / 2 - (jmax + 0.5) * (PI / h)
    denom = math.tan(theta_top) - math.tan(theta_bot)
    if denom <= 1e-6:
        raise DetectionError("target too small to range")
    # Angular width, measured around the bearing so a blob straddling the
    # seam is not misread as spanning the whole panorama.
    rel = np.mod(phis - bearing + PI, TWO_PI) - PI
    span = float(rel.max() - rel.min()) + TWO_PI / w
    return Detection(bearing=normalize_longitude(bearing),
                     range_m=height / denom, n_pixels=n, rows=(jmin, jmax),
                     phi_span=span)


# ---------------------------------------------------------------------------
# goal-seeking pilot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoalSpec:
    """Navigate until within ``stop_range`` meters of the target's
    estimated surface.  ``color`` is a palette name or RGB; ``height``
    the object's physical height used for ranging."""

    color: object
    height: float
    stop_range: float = 1.0


class GoalNavigator:
    """Stateful pilot: turn toward the target and close the distance.

    When the target is not visible it scans in place by quarter-ish
    turns; eight consecutive fruitless attempts (a full revolution) raise
    DetectionError.  Blocked approaches halve the travel distance before
    falling back to a scan turn.
    """

    SCAN_TURN = PI / 4
    MAX_SCANS = 8
    MAX_STEP = 4.0

    def __init__(self, goal: GoalSpec):
        self.goal = goal
        self.reached = False
        self._failures = 0

    def __call__(self, model, view: PanoramaImage):
        try:
            det = detect_goal(view, self.goal.color, self.goal.height)
        except DetectionError:
            self._failures += 1
            if self._failures >= self.MAX_SCANS:
                raise
            return Action(self.SCAN_TURN, 0.0)
        d = min(det.range_m - self.goal.stop_range, self.MAX_STEP)
        if d < 0.1:
            # Within the stop ring, or so close that the remaining gap is
            # below the minimum step — stepping 1 cm forever is pointless.
            self.reached = True
            return None
        while d >= 0.1:
            action = Action(det.bearing, d)
            if model.probe_clearances([action])[0] > AGENT_RADIUS:
                self._failures = 0
                return action
            d /= 2.0
        self._failures += 1
        if self._failures >= self.MAX_SCANS:
            raise DetectionError("no clear approach to target")
        return Action(self.SCAN_TURN, 0.0)


def orbit_actions(distance: float, n_chords: int = 8):
    """Walk a full circle of radius ``distance`` around the point the
    agent currently faces at that distance, counterclockwise, ending at
    the start pose facing the center again.

    The circle is approximated by ``n_chords`` equal chords; each vertex
    lies exactly on the circle, so every intermediate view faces the
    orbited object from a fresh angle.
    """
    if distance <= 0:
        raise ParameterError(f"orbit distance must be positive, got {distance}")
    if n_chords < 3:
        raise ParameterError(f"orbit needs >= 3 chords, got {n_chords}")
    delta = TWO_PI / n_chords
    chord = 2.0 * distance * math.sin(delta / 2.0)
    acts = [Action(delta / 2.0 - PI / 2.0, chord)]
    acts += [Action(delta, chord) for _ in range(n_chords - 1)]
    total = delta / 2.0 - PI / 2.0 + (n_chords - 1) * delta
    acts.append(Action(normalize_longitude(-total), 0.0))
    return acts


# ---------------------------------------------------------------------------
# the session loop
# ---------------------------------------------------------------------------

def run_session(model, *, pilot=None, action_feed: ActionFeed | None = None,
                goal: GoalSpec | None = None, x0: PanoramaImage | None = None,
                max_steps: int = 64, on_step=None, on_error=None) -> ExplorationSession:
    """Drive a model with exactly one action source until it stops.

    The session records every frame.  ``meta['stopped']`` says why the
    loop ended: 'pilot_done', 'goal_reached', 'goal_not_found',
    'feed_closed', or 'max_steps'.  ``on_step(i, action, frames)`` fires
    after each transition.

    A blocked action from a feed is survivable: ``on_error(i, action,
    exc)`` is notified and the session keeps waiting for the next action.
    The same failure from a pilot is a pilot bug and raises RolloutError
    carrying the partial session.
    """
    sources = sum(s is not None for s in (pilot, action_feed, goal))
    if sources != 1:
        raise ParameterError("exactly one of pilot, action_feed, goal is required")
    navigator = None
    if goal is not None:
        navigator = GoalNavigator(goal)
        pilot = navigator
    if x0 is None:
        x0 = model.initial_view()
    session = ExplorationSession(x0=x0, meta={"dims": [x0.width, x0.height]})
    if hasattr(model, "pose"):
        session.poses.append(model.pose)
    view = x0
    stopped = "max_steps"
    for i in range(max_steps):
        if action_feed is not None:
            action = action_feed.get()
            if action is None:
                stopped = "feed_closed"
                break
        else:
            try:
                action = pilot(model, view)
            except DetectionError:
                stopped = "goal_not_found"
                break
            if action is None:
                stopped = "goal_reached" if navigator is not None else "pilot_done"
                break
        try:
            frames = apply_action(model, view, action)
        except GenerationError as exc:
            if action_feed is not None:
                if on_error is not None:
                    on_error(i, action, exc)
                continue
            raise RolloutError(f"pilot action {i} ({action.alpha:+.3f}, {action.d:.2f}) "
                               f"failed: {exc}", session=session, cause=exc) from exc
        session.steps.append(SessionStep(action, frames))
        if hasattr(model, "pose"):
            session.poses.append(model.pose)
        if on_step is not None:
            on_step(i, action, frames)
        view = frames[-1]
    session.meta["stopped"] = stopped
    if navigator is not None:
        session.meta["goal_reached"] = navigator.reached
    return session
