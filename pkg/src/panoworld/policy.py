"""Question-answering policies over hidden objects.

Each scenario hides one colored target (a box or a sphere) behind a
large occluder and asks a four-way multiple-choice question: which
(color, shape) pair is the hidden object?  The policies differ only in
how much of the world they look at before answering:

* :func:`decide_random` guesses uniformly.
* :func:`decide_base` answers from the starting panorama alone.
* :func:`decide_imagine` rolls a world model through an orbit around
  the occluder and answers from the imagined frames.
* :func:`decide_multi_agent` imagines walking to a teammate's
  broadcast pose (marked by a colored cylinder) and answers from that
  vantage.

Scenario generation is rejection-sampled until a solvability
certificate holds: the target is invisible from the start pose, the
orbit (or the teammate vantage) is reachable, and a single rendered
view from the certified vantage classifies correctly.  Decision logic
itself only ever reads rendered frames plus the broadcast scenario
fields (option list, occluder color and height, marker poses); the
``scene`` field is the simulator's ground truth and is touched only to
build the world model.
"""

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DetectionError, ParameterError, RolloutError, SceneError
from .exploration import (GoalSpec, chroma_mask, detect_goal,
                          largest_component, orbit_actions, run_session)
from .geometry import PI, TWO_PI, normalize_longitude
from .metrics import loop_feasible
from .transition import (Action, GroundTruthModel, TransitionConfig, rollout)
from .world import (AgentPose, PALETTE, Primitive, SceneSpec, is_visible,
                    render_panorama)

OPTION_SHAPES = ("box", "sphere")


# ---------------------------------------------------------------------------
# the answerer: color + silhouette-shape classification from panoramas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    """One view's evidence: which option color dominates, how many
    pixels it covers, how fully it fills its bounding box, and the
    view-relative bearing of the blob centroid."""

    color: str
    area: int
    fill: float
    bearing: float


class ColorShapeReasoner:
    """Answer a (color, shape) multiple-choice question from views.

    Color comes from chromaticity masks (shading-invariant); shape from
    the silhouette's bounding-box fill: an axis-aligned box seen near
    face-on fills its box (fill close to 1), a sphere is an ellipse
    (fill near pi/4).  Because a box seen corner-on dips toward the
    ellipse value, the shape call uses the 75th-percentile fill across
    views rather than any single frame, and only views whose blob is at
    least half the largest seen (partially occluded slivers distort
    fill).  Color is an area-weighted vote.  With no usable view at
    all the reasoner falls back to option 0.
    """

    def __init__(self, options, fill_threshold: float = 0.85,
                 min_pixels: int = 12, threshold: float = 0.10):
        self.options = tuple((str(c), str(s)) for c, s in options)
        if len(self.options) != len(set(self.options)):
            raise ParameterError("duplicate question options")
        for _, shape in self.options:
            if shape not in OPTION_SHAPES:
                raise ParameterError(f"unknown option shape {shape!r}")
        self.colors = tuple(dict.fromkeys(c for c, _ in self.options))
        self.fill_threshold = float(fill_threshold)
        self.min_pixels = int(min_pixels)
        self.threshold = float(threshold)

    def measure(self, view):
        """Largest option-colored blob in one view, or None."""
        best = None
        for color in self.colors:
            comp = largest_component(chroma_mask(view, color, self.threshold))
            area = int(comp.sum())
            if area >= self.min_pixels and (best is None or area > best[1]):
                best = (color, area, comp)
        if best is None:
            return None
        color, area, comp = best
        w = comp.shape[1]
        phis = (np.nonzero(comp)[1] + 0.5) * (TWO_PI / w) - PI
        bearing = math.atan2(float(np.sin(phis).mean()),
                             float(np.cos(phis).mean()))
        cols = comp.any(axis=0)
        if cols.all():
            rolled = comp
        else:
            rolled = np.roll(comp, -(int(np.argmin(cols)) + 1), axis=1)
        js, us = np.nonzero(rolled)
        box = (int(js.max()) - int(js.min()) + 1) * (int(us.max()) - int(us.min()) + 1)
        return Measurement(color=color, area=area, fill=area / box,
                           bearing=normalize_longitude(bearing))

    def evidence(self, views) -> tuple:
        """Every usable measurement, one per view that shows an option
        color; the audit trail behind :meth:`decide`."""
        return tuple(m for m in (self.measure(v) for v in views)
                     if m is not None)

    def decide(self, views) -> int:
        ms = list(self.evidence(views))
        if not ms:
            return 0
        votes = {}
        for m in ms:
            votes[m.color] = votes.get(m.color, 0) + m.area
        color = max(votes, key=lambda c: (votes[c], c))
        picked = [m for m in ms if m.color == color]
        amax = max(m.area for m in picked)
        fills = [m.fill for m in picked if m.area >= 0.5 * amax]
        fill = float(np.quantile(fills, 0.75))
        shape = "box" if fill >= self.fill_threshold else "sphere"
        return self.options.index((color, shape))


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EqaScenario:
    """A hidden-object question with a certified solution path.

    ``options`` is the 2x2 grid of (color, shape) answers; ``answer``
    indexes the true one.  ``occluder_color``/``occluder_height`` are
    part of the question text (the agent may range the occluder by
    them); ``vantage`` is an orbit vertex from which generation
    verified the target is visible and classifies correctly.
    """

    scene: SceneSpec
    start: AgentPose
    options: tuple
    answer: int
    target_id: str
    occluder_id: str
    occluder_color: str
    occluder_height: float
    orbit_chords: int
    vantage: AgentPose

    @property
    def control_scene(self) -> SceneSpec:
        """The same world with the occluder removed."""
        return self.scene.without(self.occluder_id)


@dataclass(frozen=True)
class MarkerInfo:
    """One teammate broadcast: marker object id, its color and height
    (for detection/ranging), and the pose it marks."""

    id: str
    color: str
    height: float
    pose: AgentPose


@dataclass(frozen=True)
class MultiAgentScenario:
    """Hidden-object question answerable from teammate ``k``'s pose.

    Markers are colored cylinders standing at each broadcast pose; the
    k-th one is certified to see the target (once the marker itself is
    ignored) while the start pose does not.
    """

    scene: SceneSpec
    start: AgentPose
    options: tuple
    answer: int
    target_id: str
    occluder_id: str
    markers: tuple
    k: int


def _option_grid(c1: str, c2: str) -> tuple:
    return tuple((c, s) for c in (c1, c2) for s in OPTION_SHAPES)


def _unit(angle: float):
    return math.cos(angle), math.sin(angle)


def _target_primitive(rng, color_rgb, shape: str) -> Primitive:
    if shape == "box":
        side = rng.uniform(1.4, 1.8)
        height = rng.uniform(1.8, 2.4)
        return Primitive(id="target", shape="box", center=(0, 0, height / 2),
                         size=(side, side, height), color=color_rgb)
    r = rng.uniform(0.8, 1.1)
    return Primitive(id="target", shape="sphere", center=(0, 0, r),
                     size=(r,), color=color_rgb)


def _half_plan(prim: Primitive) -> float:
    return prim.footprint_radius()


def _moved(prim: Primitive, x: float, y: float) -> Primitive:
    return Primitive(id=prim.id, shape=prim.shape,
                     center=(x, y, prim.center[2]), size=prim.size,
                     color=prim.color, tags=prim.tags)


def _clutter(rng, names, back_angle: float, count: int, start_depth: float,
             prefix: str = "c") -> list:
    """Small bystander objects strung out behind the start pose."""
    bx, by = _unit(back_angle)
    px, py = -by, bx
    out = []
    for i in range(count):
        depth = start_depth + i * 2.4
        lat = rng.uniform(-3.0, 3.0)
        x, y = bx * depth + px * lat, by * depth + py * lat
        color = PALETTE[names[i % len(names)]]
        kind = ("box", "cylinder", "sphere")[int(rng.integers(0, 3))]
        if kind == "box":
            s, h = rng.uniform(0.6, 1.1), rng.uniform(0.8, 1.6)
            out.append(Primitive(id=f"{prefix}{i}", shape="box",
                                 center=(x, y, h / 2), size=(s, s, h),
                                 color=color))
        elif kind == "cylinder":
            r, h = rng.uniform(0.3, 0.55), rng.uniform(0.8, 1.6)
            out.append(Primitive(id=f"{prefix}{i}", shape="cylinder",
                                 center=(x, y, h / 2), size=(r, h),
                                 color=color))
        else:
            r = rng.uniform(0.4, 0.7)
            out.append(Primitive(id=f"{prefix}{i}", shape="sphere",
                                 center=(x, y, r), size=(r,), color=color))
    return out


def _sample_hidden_core(rng):
    """Draw the shared geometry: occluder ahead, target tucked behind it.

    Returns a dict of loose parts; callers assemble and certify."""
    names = list(PALETTE)
    rng.shuffle(names)
    c1, c2, occ_color = names[0], names[1], names[2]
    options = _option_grid(c1, c2)
    answer = int(rng.integers(0, len(options)))
    t_color, t_shape = options[answer]

    start = AgentPose(heading=rng.uniform(-PI, PI))
    beta = rng.uniform(-PI, PI)
    dist = rng.uniform(8.0, 9.5)
    bx, by = _unit(beta)
    ox, oy = bx * dist, by * dist

    sx, sy = rng.uniform(2.6, 3.2), rng.uniform(2.6, 3.2)
    oh = rng.uniform(2.6, 3.2)
    occluder = Primitive(id="occluder", shape="box", center=(ox, oy, oh / 2),
                         size=(sx, sy, oh), color=PALETTE[occ_color])

    target = _target_primitive(rng, PALETTE[t_color], t_shape)
    delta = occluder.footprint_radius() + _half_plan(target) + rng.uniform(0.5, 1.1)
    lat = rng.uniform(-0.3, 0.3)
    target = _moved(target, ox + bx * delta - by * lat, oy + by * delta + bx * lat)

    return {"names": names, "options": options, "answer": answer,
            "start": start, "beta": beta, "dist": dist, "occluder": occluder,
            "target": target, "occ_color": occ_color, "t_shape": t_shape}


def make_eqa_scenario(rng, *, dims=(384, 192), max_tries: int = 200) -> EqaScenario:
    """Rejection-sample a hidden-object scenario until its certificate
    holds: target invisible from start, occluder visible, an orbit
    annulus around the occluder walkable, and the far orbit vertex both
    sees the target and classifies it correctly from a real render."""
    n_chords = 8
    for _ in range(max_tries):
        core = _sample_hidden_core(rng)
        clutter = _clutter(rng, core["names"][3:], core["beta"] + PI,
                           int(rng.integers(2, 5)), core["dist"] * 0.5 + 1.5)
        try:
            scene = SceneSpec(objects=(core["occluder"], core["target"], *clutter))
        except SceneError:
            continue
        start = core["start"]
        if is_visible(scene, start, "target")[0]:
            continue
        if not is_visible(scene, start, "occluder")[0]:
            continue
        face = Action(normalize_longitude(core["beta"] - start.heading), 0.0)
        if not all(loop_feasible(scene, start,
                                 [face] + orbit_actions(f * core["dist"], n_chords))
                   for f in (0.85, 1.0, 1.2)):
            continue
        pose = start.step(face.alpha, 0.0)
        for a in orbit_actions(core["dist"], n_chords)[:1 + n_chords // 2]:
            pose = pose.step(a.alpha, a.d)
        if not is_visible(scene, pose, "target")[0]:
            continue
        scenario = EqaScenario(scene=scene, start=start, options=core["options"],
                               answer=core["answer"], target_id="target",
                               occluder_id="occluder",
                               occluder_color=core["occ_color"],
                               occluder_height=core["occluder"].size[2],
                               orbit_chords=n_chords, vantage=pose)
        view = render_panorama(scene, pose, dims=dims)
        if ColorShapeReasoner(core["options"]).decide([view]) != core["answer"]:
            continue
        return scenario
    raise SceneError(f"no certifiable scenario in {max_tries} tries")


def make_multi_agent_scenario(rng, *, n_agents: int | None = None,
                              dims=(384, 192),
                              max_tries: int = 200) -> MultiAgentScenario:
    """Like :func:`make_eqa_scenario` but the certified vantage is a
    teammate pose marked by a colored cylinder: the marker is visible
    from start, a straight approach to it is walkable, and the marked
    pose sees and correctly classifies the target once the marker
    itself is removed from the world."""
    if n_agents is None:
        n_agents = int(rng.integers(1, 4))
    if not 1 <= n_agents <= 3:
        raise ParameterError(f"n_agents must be 1..3, got {n_agents}")
    for _ in range(max_tries):
        core = _sample_hidden_core(rng)
        names = core["names"]
        marker_colors = names[3:3 + n_agents]
        k = int(rng.integers(0, n_agents))
        beta, dist = core["beta"], core["dist"]
        bx, by = _unit(beta)
        px, py = -by, bx
        ox, oy = core["occluder"].center[0], core["occluder"].center[1]
        tx, ty = core["target"].center[0], core["target"].center[1]

        side = 1.0 if rng.integers(0, 2) else -1.0
        lat = side * rng.uniform(4.0, 5.5)
        fwd = rng.uniform(1.5, 3.0)
        vx, vy = ox + px * lat + bx * fwd, oy + py * lat + by * fwd
        v_heading = math.atan2(ty - vy, tx - vx)
        markers = []
        prims = []
        height = 2.6
        for j in range(n_agents):
            if j == k:
                mx, my, mh = vx, vy, v_heading
            else:
                back = dist * 0.35 + 2.0 + j * 2.5
                mlat = (j + 1) * (1.0 if j % 2 else -1.0) * rng.uniform(3.5, 5.0)
                mx, my = -bx * back + px * mlat, -by * back + py * mlat
                mh = rng.uniform(-PI, PI)
            markers.append(MarkerInfo(id=f"marker{j}", color=marker_colors[j],
                                      height=height,
                                      pose=AgentPose((mx, my, 0.0), mh)))
            prims.append(Primitive(id=f"marker{j}", shape="cylinder",
                                   center=(mx, my, height / 2), size=(0.35, height),
                                   color=PALETTE[marker_colors[j]]))
        clutter = _clutter(rng, names[3 + n_agents:], beta + PI,
                           int(rng.integers(2, 4)), dist * 0.5 + 1.5)
        try:
            scene = SceneSpec(objects=(core["occluder"], core["target"],
                                       *prims, *clutter))
        except SceneError:
            continue
        start = core["start"]
        if is_visible(scene, start, "target")[0]:
            continue
        if not is_visible(scene, start, f"marker{k}")[0]:
            continue
        vantage = markers[k].pose
        if not is_visible(scene, vantage, "target", exclude={f"marker{k}"})[0]:
            continue
        reach = math.hypot(vx - start.x, vy - start.y) - 1.9
        bearing = normalize_longitude(math.atan2(vy - start.y, vx - start.x)
                                      - start.heading)
        if reach <= 0 or not loop_feasible(scene, start, [Action(bearing, reach)]):
            continue
        x0 = render_panorama(scene, start, dims=dims)
        try:
            detect_goal(x0, marker_colors[k], height)
        except DetectionError:
            continue
        view = render_panorama(scene.without(f"marker{k}"), vantage, dims=dims)
        if ColorShapeReasoner(core["options"]).decide([view]) != core["answer"]:
            continue
        return MultiAgentScenario(scene=scene, start=start,
                                  options=core["options"], answer=core["answer"],
                                  target_id="target", occluder_id="occluder",
                                  markers=tuple(markers), k=k)
    raise SceneError(f"no certifiable scenario in {max_tries} tries")


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def decide_random(scenario, rng) -> int:
    """Uniform guess over the option grid."""
    return int(rng.integers(0, len(scenario.options)))


def decide_base(scenario, *, dims=(384, 192)) -> int:
    """Answer from the starting panorama alone."""
    model = GroundTruthModel(scenario.scene, scenario.start, dims=dims)
    return ColorShapeReasoner(scenario.options).decide([model.initial_view()])


def decide_imagine(scenario: EqaScenario, *, dims=(384, 192),
                   frames_per_meter: float = 0.5,
                   n_chords: int | None = None, model=None) -> int:
    """Orbit the occluder in imagination, then answer from the frames.

    The occluder is found and ranged in the starting view by its
    broadcast color and height; the orbit radius adds the apparent
    half-width plus a safety margin.  ``n_chords=0`` degenerates to
    :func:`decide_base`.  A model may be injected (e.g. a degraded
    one); by default the exact model plays the imagination engine.
    """
    if n_chords is None:
        n_chords = scenario.orbit_chords
    if model is None:
        cfg = TransitionConfig(frames_per_meter=frames_per_meter)
        model = GroundTruthModel(scenario.scene, scenario.start,
                                 dims=dims, config=cfg)
    reasoner = ColorShapeReasoner(scenario.options)
    x0 = model.initial_view()
    if n_chords <= 0:
        return reasoner.decide([x0])
    try:
        det = detect_goal(x0, scenario.occluder_color, scenario.occluder_height)
    except DetectionError:
        return reasoner.decide([x0])
    half_width = det.range_m * math.tan(min(det.phi_span, 0.9 * PI) / 2.0)
    radius = min(max(det.range_m + half_width + 1.2, 3.0), 14.0)
    actions = [Action(det.bearing, 0.0)] + orbit_actions(radius, n_chords)
    views = [x0]
    try:
        views += rollout(model, actions, x0=x0).frames
    except RolloutError as err:
        views += err.session.frames
    return reasoner.decide(views)


def decide_multi_agent(scenario: MultiAgentScenario, *, dims=(384, 192),
                       frames_per_meter: float = 0.5, max_steps: int = 20,
                       return_details: bool = False):
    """Walk to teammate ``k``'s marker, then answer from its exact pose.

    Navigation is the color-goal pilot homing on the marker cylinder.
    The final alignment is dead-reckoned: the executed actions are
    integrated from the known start pose, and one last (turn, travel,
    turn) lands exactly on the broadcast pose.  For that last hop the
    model switches to the same world without the marker — the agent now
    stands where the cylinder was.
    """
    cfg = TransitionConfig(frames_per_meter=frames_per_meter)
    model = GroundTruthModel(scenario.scene, scenario.start, dims=dims, config=cfg)
    reasoner = ColorShapeReasoner(scenario.options)
    marker = scenario.markers[scenario.k]
    session = run_session(model, goal=GoalSpec(marker.color, marker.height,
                                               stop_range=1.5),
                          max_steps=max_steps)
    if session.meta.get("stopped") != "goal_reached":
        guess = reasoner.decide([session.x0] + session.frames)
        if return_details:
            return guess, {"reached": False, "final_view": session.final_view,
                           "pose": None}
        return guess

    pose = scenario.start
    for a in session.actions:
        pose = pose.step(a.alpha, a.d)
    v = marker.pose
    dx, dy = v.x - pose.x, v.y - pose.y
    d = math.hypot(dx, dy)
    a1 = Action(normalize_longitude(math.atan2(dy, dx) - pose.heading)
                if d > 1e-12 else 0.0, d)
    after = pose.step(a1.alpha, a1.d)
    a2 = Action(normalize_longitude(v.heading - after.heading), 0.0)
    hop_model = GroundTruthModel(scenario.scene.without(marker.id),
                                 start=AgentPose((pose.x, pose.y, 0.0),
                                                 pose.heading),
                                 dims=dims, config=cfg)
    try:
        hop = rollout(hop_model, [a1, a2])
        final = hop.final_view
        landed = after.step(a2.alpha, 0.0)
    except RolloutError as err:
        final = err.session.final_view
        landed = None
    guess = reasoner.decide([final])
    if return_details:
        return guess, {"reached": True, "final_view": final, "pose": landed}
    return guess


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------

def evaluate_policies(*, seed: int = 0, n_random: int = 1000, n_base: int = 500,
                      n_imagine: int = 500, n_multi: int = 200,
                      dims=(384, 192), frames_per_meter: float = 0.5,
                      out_dir=None) -> dict:
    """Score the four policies on freshly generated scenario populations.

    One shared hidden-object population serves random/base/imagine (the
    random policy just guesses over it); the teammate population cycles
    the agent count through 1..3.  Fully deterministic for a given
    seed.  With ``out_dir`` set, writes ``policy_results.json`` and a
    per-trial ``policy_trials.csv``.
    """
    for name, n in (("n_random", n_random), ("n_base", n_base),
                    ("n_imagine", n_imagine), ("n_multi", n_multi)):
        if n < 0:
            raise ParameterError(f"{name} must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    n_eqa = max(n_base, n_imagine, 1 if n_random else 0)
    eqa = [make_eqa_scenario(rng, dims=dims) for _ in range(n_eqa)]
    multi = [make_multi_agent_scenario(rng, n_agents=1 + (i % 3), dims=dims)
             for i in range(n_multi)]

    trials = []

    def tally(policy, guesses, answers):
        correct = 0
        for i, (g, a) in enumerate(zip(guesses, answers)):
            ok = int(g == a)
            correct += ok
            trials.append((policy, i, g, a, ok))
        n = len(guesses)
        return {"n": n, "correct": correct,
                "accuracy": correct / n if n else None}

    results = {"config": {"seed": seed, "dims": list(dims),
                          "frames_per_meter": frames_per_meter,
                          "n_random": n_random, "n_base": n_base,
                          "n_imagine": n_imagine, "n_multi": n_multi},
               "policies": {}}
    results["policies"]["random"] = tally(
        "random",
        [decide_random(eqa[i % len(eqa)], rng) for i in range(n_random)],
        [eqa[i % len(eqa)].answer for i in range(n_random)]) if n_random else \
        {"n": 0, "correct": 0, "accuracy": None}
    results["policies"]["base"] = tally(
        "base", [decide_base(s, dims=dims) for s in eqa[:n_base]],
        [s.answer for s in eqa[:n_base]])
    results["policies"]["imagine"] = tally(
        "imagine",
        [decide_imagine(s, dims=dims, frames_per_meter=frames_per_meter)
         for s in eqa[:n_imagine]],
        [s.answer for s in eqa[:n_imagine]])
    results["policies"]["multi_agent"] = tally(
        "multi_agent",
        [decide_multi_agent(s, dims=dims, frames_per_meter=frames_per_meter)
         for s in multi],
        [s.answer for s in multi])

    if out_dir is not None:
        write_policy_outputs(results, trials, out_dir)
    return results


def write_policy_outputs(results: dict, trials, out_dir) -> None:
    """Write ``policy_results.json`` and ``policy_trials.csv``;
    byte-identical across reruns with the same inputs."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "policy_results.json"), "w") as f:
        json.dump(results, f, indent=1, sort_keys=True)
        f.write("\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "trial", "guess", "answer", "correct"])
    for row in trials:
        w.writerow(row)
    with open(os.path.join(out_dir, "policy_trials.csv"), "w") as f:
        f.write(buf.getvalue())
