"""Transition-engine tests: actions, frame clips, models, rollouts, sessions.

The loop-closure oracle is pure pose algebra computed here with
AgentPose.step; image expectations come from fresh renders at analytically
known poses.
"""

import json
import math
import shutil

import numpy as np
import pytest

from panoworld.errors import (
    ConfigError,
    ConsistencyError,
    GenerationError,
    ParameterError,
    RolloutError,
)
from panoworld.geometry import normalize_longitude
from panoworld.image import PanoramaImage
from panoworld.transition import (
    Action,
    DegradedModel,
    ExplorationSession,
    GroundTruthModel,
    TransitionConfig,
    WorldModel,
    apply_action,
    degrade_frame,
    initialize_world,
    invert_actions,
    load_session,
    rollout,
    sample_action,
)
from panoworld.world import PALETTE, AgentPose, Primitive, SceneSpec, render_panorama, scene_from_spec

PI = math.pi


def wall_scene():
    """A 4 m wide box straight ahead of the origin (near face at x = 4.5)."""
    wall = Primitive(id="wall", shape="box", center=(5.0, 0.0, 1.0),
                     size=(1.0, 4.0, 2.0), color=PALETTE["red"])
    return SceneSpec(seed=None, objects=(wall,))


def empty_scene():
    return SceneSpec(seed=None, objects=())


def mse(a, b):
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


def psnr(a, b):
    m = mse(a, b)
    return math.inf if m == 0 else 10.0 * math.log10(1.0 / m)


class StubModel(WorldModel):
    """Echoes the (already re-projected) seed view; records what it saw."""

    def __init__(self, dims=(128, 64), config=None):
        self.config = config if config is not None else TransitionConfig()
        w, h = dims
        ramp = np.linspace(0.0, 1.0, w, dtype=np.float32)
        data = np.broadcast_to(ramp[None, :, None], (h, w, 3)).copy()
        self._x0 = PanoramaImage(data)
        self.received = None

    def initial_view(self):
        return self._x0

    def generate(self, view, action, n_frames):
        self.received = view
        return [view] * n_frames


class TestAction:
    def test_normalizes_half_open(self):
        assert Action(PI, 1.0).alpha == -PI
        assert abs(Action(3 * PI / 2, 0.0).alpha - (-PI / 2)) < 1e-12
        assert Action(0.25, 0.0).alpha == 0.25

    def test_rejects_bad_values(self):
        with pytest.raises(ParameterError):
            Action(0.0, -0.1)
        with pytest.raises(ParameterError):
            Action(float("nan"), 1.0)
        with pytest.raises(ParameterError):
            Action(0.0, float("inf"))


class TestTransitionConfig:
    def test_frame_count_rounds_half_up(self):
        cfg = TransitionConfig(frames_per_meter=4.0, min_frames=1)
        assert cfg.frame_count(0.0) == 1
        assert cfg.frame_count(0.1) == 1      # 0.4 rounds to 0, floor of min_frames
        assert cfg.frame_count(0.375) == 2    # 1.5 rounds up
        assert cfg.frame_count(1.0) == 4
        assert cfg.frame_count(2.6) == 10     # 10.4 rounds down

    def test_frame_budget_enforced(self):
        cfg = TransitionConfig(frames_per_meter=4.0, max_frames=100)
        with pytest.raises(ConfigError):
            cfg.frame_count(1000.0)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TransitionConfig(frames_per_meter=0.0)
        with pytest.raises(ConfigError):
            TransitionConfig(min_frames=0)
        with pytest.raises(ConfigError):
            TransitionConfig(rotation_mode="spline")
        with pytest.raises(ParameterError):
            TransitionConfig().frame_count(-1.0)


class TestGroundTruthModel:
    def test_initial_view_is_fresh_render(self):
        scene = scene_from_spec(5)
        start = AgentPose((1.0, -2.0, 0.0), 0.7)
        model = GroundTruthModel(scene, start, dims=(128, 64))
        expected = render_panorama(scene, start, (128, 64))
        assert np.array_equal(model.initial_view().data, expected.data)

    def test_travel_emits_requested_frames_and_lands_exactly(self):
        scene = empty_scene()
        model = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        frames = apply_action(model, model.initial_view(), Action(PI / 3, 2.0))
        assert len(frames) == 8  # 4 frames/m * 2 m
        target = AgentPose().step(PI / 3, 2.0)
        assert abs(model.pose.x - target.x) < 1e-9
        assert abs(model.pose.y - target.y) < 1e-9
        assert abs(normalize_longitude(model.pose.heading - target.heading)) < 1e-12
        # the last frame is a render at the model's final pose, bit for bit
        check = render_panorama(scene, model.pose, (128, 64))
        assert np.array_equal(frames[-1].data, check.data)

    def test_pure_rotation_is_one_frame(self):
        scene = scene_from_spec(5)
        model = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        frames = apply_action(model, model.initial_view(), Action(-PI / 2, 0.0))
        assert len(frames) == 1
        assert model.pose.x == 0.0 and model.pose.y == 0.0
        check = render_panorama(scene, AgentPose().step(-PI / 2, 0.0), (128, 64))
        assert np.array_equal(frames[0].data, check.data)

    def test_blocked_path_refused(self):
        model = GroundTruthModel(wall_scene(), AgentPose(), dims=(128, 64))
        with pytest.raises(GenerationError):
            model.generate(model.initial_view(), Action(0.0, 6.0), 24)
        # pose untouched by the failed attempt
        assert model.pose.x == 0.0 and model.pose.heading == 0.0

    def test_probe_clearances(self):
        model = GroundTruthModel(wall_scene(), AgentPose(), dims=(128, 64))
        got = model.probe_clearances([Action(0.0, 10.0), Action(PI / 2, 10.0), Action(0.0, 2.0)])
        assert got[0] == 0.0          # path crosses the wall footprint
        assert abs(got[1] - 4.5) < 1e-12   # perpendicular path: near face distance
        assert abs(got[2] - 2.5) < 1e-12   # short path stops 2.5 m from the face


class TestApplyAction:
    def test_view_is_rotated_before_generation(self):
        model = StubModel(dims=(128, 64))
        x0 = model.initial_view()
        apply_action(model, x0, Action(PI / 2, 0.0))
        # quarter turn left on 128 columns: content shifts 32 columns left
        expected = np.roll(x0.data, -32, axis=1)
        assert np.array_equal(model.received.data, expected)

    def test_frame_count_follows_config(self):
        model = StubModel(config=TransitionConfig(frames_per_meter=2.0))
        frames = apply_action(model, model.initial_view(), Action(0.0, 3.0))
        assert len(frames) == 6

    def test_wrong_frame_count_rejected(self):
        class Short(StubModel):
            def generate(self, view, action, n_frames):
                return [view] * (n_frames - 1) if n_frames > 1 else []

        model = Short()
        with pytest.raises(GenerationError):
            apply_action(model, model.initial_view(), Action(0.0, 1.0))


class TestDegradedModel:
    def test_kappa_zero_is_passthrough(self):
        scene = scene_from_spec(3)
        deg = DegradedModel(GroundTruthModel(scene, AgentPose(), dims=(128, 64)), kappa=0.0)
        ref = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        a = apply_action(deg, deg.initial_view(), Action(0.4, 1.5))
        b = apply_action(ref, ref.initial_view(), Action(0.4, 1.5))
        assert len(a) == len(b)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.data, fb.data)

    def test_degradation_grows_along_sequence(self):
        scene = scene_from_spec(3)
        deg = DegradedModel(GroundTruthModel(scene, AgentPose(), dims=(128, 64)), kappa=0.5, seed=1)
        ref = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        action = Action(0.0, 3.0)  # 12 frames
        a = apply_action(deg, deg.initial_view(), action)
        b = apply_action(ref, ref.initial_view(), action)
        first = psnr(a[0].data, b[0].data)
        last = psnr(a[-1].data, b[-1].data)
        assert first < math.inf          # noise hits frame 0 already
        assert first - last > 3.0        # compounding blur dominates later

    def test_seed_determinism(self):
        scene = scene_from_spec(3)

        def run(seed):
            m = DegradedModel(GroundTruthModel(scene, AgentPose(), dims=(128, 64)),
                              kappa=0.3, seed=seed)
            return apply_action(m, m.initial_view(), Action(0.2, 1.0))[-1]

        assert np.array_equal(run(7).data, run(7).data)
        assert not np.array_equal(run(7).data, run(8).data)

    def test_counter_spans_actions(self):
        # frame index is global: re-running the same action later in a
        # session degrades more than the first time
        scene = scene_from_spec(3)
        deg = DegradedModel(GroundTruthModel(scene, AgentPose(), dims=(128, 64)), kappa=0.5, seed=0)
        ref = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        a1 = apply_action(deg, deg.initial_view(), Action(PI / 2, 1.0))
        a2 = apply_action(deg, a1[-1], Action(PI / 2, 1.0))
        b1 = apply_action(ref, ref.initial_view(), Action(PI / 2, 1.0))
        b2 = apply_action(ref, b1[-1], Action(PI / 2, 1.0))
        early = psnr(a1[0].data, b1[0].data)
        late = psnr(a2[0].data, b2[0].data)
        assert early - late > 3.0

    def test_validation_and_delegation(self):
        scene = wall_scene()
        inner = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        with pytest.raises(ParameterError):
            DegradedModel(inner, kappa=-0.1)
        deg = DegradedModel(inner, kappa=0.1)
        assert deg.pose == inner.pose
        assert deg.probe_clearances([Action(0.0, 10.0)])[0] == 0.0
        assert deg.dims == inner.dims


class TestDegradeFrame:
    def test_kappa_zero_bit_identical(self):
        rng = np.random.default_rng(0)
        frame = PanoramaImage(rng.random((32, 64, 3)).astype(np.float32))
        out = degrade_frame(frame, 5, 0.0, rng)
        assert out is frame

    def test_constant_image_noise_std(self):
        # blurring a constant image changes nothing, so the residual is
        # exactly the additive noise: std should land near kappa / 10
        kappa = 0.3
        frame = PanoramaImage(np.full((64, 128, 3), 0.5, dtype=np.float32))
        out = degrade_frame(frame, 4, kappa, np.random.default_rng(11))
        resid = out.data.astype(np.float64) - 0.5
        assert abs(float(resid.std()) - kappa / 10.0) < 0.1 * (kappa / 10.0)
        assert abs(float(resid.mean())) < 0.01

    def test_output_clamped_to_unit_range(self):
        rng = np.random.default_rng(2)
        data = np.where(rng.random((32, 64, 3)) > 0.5, 1.0, 0.0).astype(np.float32)
        out = degrade_frame(PanoramaImage(data), 3, 2.0, rng)
        assert float(out.data.min()) >= 0.0 and float(out.data.max()) <= 1.0

    def test_matches_model_path(self):
        # DegradedModel is this function applied with a running frame index
        scene = scene_from_spec(3)
        deg = DegradedModel(GroundTruthModel(scene, AgentPose(), dims=(128, 64)), kappa=0.2, seed=5)
        ref = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        got = apply_action(deg, deg.initial_view(), Action(0.0, 1.0))
        clean = apply_action(ref, ref.initial_view(), Action(0.0, 1.0))
        rng = np.random.default_rng(5)
        want = [degrade_frame(f, k, 0.2, rng) for k, f in enumerate(clean)]
        assert len(got) == len(want)
        for a, b in zip(got, want):
            assert np.array_equal(a.data, b.data)

    def test_rejects_bad_arguments(self):
        rng = np.random.default_rng(0)
        frame = PanoramaImage(np.zeros((16, 32, 3), dtype=np.float32))
        with pytest.raises(ParameterError):
            degrade_frame(frame, -1, 0.1, rng)
        with pytest.raises(ParameterError):
            degrade_frame(frame, 0, -0.5, rng)


class TestInitializeWorld:
    def test_matching_start_accepted(self):
        model = GroundTruthModel(scene_from_spec(2), AgentPose(), dims=(128, 64))
        x0 = model.initial_view()
        got = initialize_world(model, expected=x0)
        assert np.array_equal(got.data, x0.data)

    def test_dim_mismatch_rejected(self):
        model = GroundTruthModel(scene_from_spec(2), AgentPose(), dims=(128, 64))
        other = PanoramaImage(np.zeros((32, 64, 3), dtype=np.float32))
        with pytest.raises(ConsistencyError):
            initialize_world(model, expected=other)

    def test_disagreeing_start_rejected(self):
        model = GroundTruthModel(scene_from_spec(2), AgentPose(), dims=(128, 64))
        rng = np.random.default_rng(0)
        noise = PanoramaImage(rng.random((64, 128, 3), dtype=np.float32))
        with pytest.raises(ConsistencyError):
            initialize_world(model, expected=noise)


class TestInvertActions:
    def test_single_action_inverse_frozen(self):
        inv = invert_actions([Action(PI / 2, 2.0)])
        assert len(inv) == 2
        assert inv[0].alpha == -PI and inv[0].d == 2.0
        assert abs(inv[1].alpha - PI / 2) < 1e-12 and inv[1].d == 0.0

    def test_closure_property(self):
        rng = np.random.default_rng(20)
        for _ in range(300):
            n = int(rng.integers(1, 7))
            acts = [sample_action(rng) for _ in range(n)]
            pose = AgentPose((3.0, -1.0, 0.0), 0.8)
            for a in acts + invert_actions(acts):
                pose = pose.step(a.alpha, a.d)
            assert math.hypot(pose.x - 3.0, pose.y - (-1.0)) < 1e-9
            assert abs(normalize_longitude(pose.heading - 0.8)) < 1e-9


class TestRollout:
    def test_out_and_back_restores_view(self):
        scene = empty_scene()
        model = GroundTruthModel(scene, AgentPose(), dims=(128, 64))
        rng = np.random.default_rng(4)
        acts = [sample_action(rng, max_distance=3.0) for _ in range(4)]
        session = rollout(model, acts + invert_actions(acts))
        assert mse(session.final_view.data, session.x0.data) < 1e-5
        assert len(session.poses) == len(session.steps) + 1
        assert session.actions[: len(acts)] == acts

    def test_on_step_callback(self):
        model = GroundTruthModel(empty_scene(), AgentPose(), dims=(128, 64))
        seen = []
        rollout(model, [Action(0.0, 0.5), Action(PI / 2, 0.0)],
                on_step=lambda i, a, fr: seen.append((i, a.d, len(fr))))
        assert seen == [(0, 0.5, 2), (1, 0.0, 1)]

    def test_failure_carries_partial_session(self):
        model = GroundTruthModel(wall_scene(), AgentPose(), dims=(128, 64))
        with pytest.raises(RolloutError) as ei:
            rollout(model, [Action(PI / 2, 1.0), Action(-PI / 2, 8.0)])
        err = ei.value
        assert isinstance(err.cause, GenerationError)
        assert len(err.session.steps) == 1
        assert err.session.steps[0].action.d == 1.0


class TestSessionIO:
    def _make_session(self):
        model = GroundTruthModel(scene_from_spec(9), AgentPose(), dims=(128, 64))
        session = rollout(model, [Action(0.3, 1.0), Action(-PI / 2, 0.0)])
        session.meta["note"] = "fixture"
        return session

    def test_directory_round_trip(self, tmp_path):
        session = self._make_session()
        session.save(str(tmp_path / "sess"))
        assert (tmp_path / "sess" / "session.json").exists()
        back = load_session(str(tmp_path / "sess"))
        assert [a.alpha for a in back.actions] == [a.alpha for a in session.actions]
        assert [a.d for a in back.actions] == [a.d for a in session.actions]
        assert back.meta["note"] == "fixture"
        assert len(back.poses) == len(session.poses)
        assert back.poses[-1].heading == session.poses[-1].heading
        assert np.max(np.abs(back.x0.data - session.x0.data)) <= 1.0 / 255.0 + 1e-6
        assert np.max(np.abs(back.final_view.data - session.final_view.data)) <= 1.0 / 255.0 + 1e-6

    def test_zip_round_trip(self, tmp_path):
        session = self._make_session()
        session.save(str(tmp_path / "sess"))
        zpath = shutil.make_archive(str(tmp_path / "archive"), "zip",
                                    root_dir=str(tmp_path), base_dir="sess")
        back = load_session(zpath)
        assert len(back.steps) == len(session.steps)
        assert np.max(np.abs(back.x0.data - session.x0.data)) <= 1.0 / 255.0 + 1e-6

    def test_missing_and_bad_version(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_session(str(tmp_path / "nope"))
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "session.json").write_text(json.dumps({"v": 99}))
        with pytest.raises(ConfigError):
            load_session(str(bad))


class TestSampleAction:
    def test_ranges(self):
        rng = np.random.default_rng(0)
        acts = [sample_action(rng, max_distance=2.5) for _ in range(200)]
        assert all(-PI <= a.alpha < PI for a in acts)
        assert all(0.0 <= a.d <= 2.5 for a in acts)
        assert any(a.alpha < -1 for a in acts) and any(a.alpha > 1 for a in acts)
