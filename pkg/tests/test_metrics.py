"""Metric and loop-evaluation tests.

The SSIM oracle below recomputes the score window by window with direct
weighted sums (no separable filtering), so agreement is a real check of
the production implementation.
"""

import json
import math

import numpy as np
import pytest

from panoworld.errors import DimensionError, ParameterError, SceneError
from panoworld.geometry import normalize_longitude
from panoworld.image import PanoramaImage
from panoworld.metrics import (
    EVAL_NOTE,
    LOOP_SHAPES,
    evaluate_ielc,
    evaluate_session,
    loop_feasible,
    mse,
    psnr,
    sample_loop,
    ssim,
    write_ielc_outputs,
)
from panoworld.transition import Action, ExplorationSession, SessionStep
from panoworld.world import PALETTE, AgentPose, Primitive, SceneSpec

PI = math.pi


def empty_scene():
    return SceneSpec(seed=None, objects=())


def box_ring_scene():
    """Four walls boxing the origin in at 1.5 m; the corner channels are
    0.14 m wide, far too narrow for the 0.3 m body radius."""
    walls = []
    for i, (cx, cy, sx, sy) in enumerate([
            (2.0, 0.0, 1.0, 2.8), (-2.0, 0.0, 1.0, 2.8),
            (0.0, 2.0, 2.8, 1.0), (0.0, -2.0, 2.8, 1.0)]):
        walls.append(Primitive(id=f"w{i}", shape="box", center=(cx, cy, 1.0),
                               size=(sx, sy, 2.0), color=PALETTE["red"]))
    return SceneSpec(seed=None, objects=tuple(walls))


# --- independent SSIM oracle -------------------------------------------------

def ssim_oracle(a, b):
    """Direct windowed SSIM: for every fully-supported 11x11 window,
    weighted moments by explicit summation."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    r = 5
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * 1.5 ** 2))
    g = g / g.sum()
    w = np.outer(g, g)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, wd = x.shape[:2]
    chans = []
    for c in range(x.shape[2]):
        vals = []
        for i in range(r, h - r):
            for j in range(r, wd - r):
                px = x[i - r:i + r + 1, j - r:j + r + 1, c]
                py = y[i - r:i + r + 1, j - r:j + r + 1, c]
                mx = float((w * px).sum())
                my = float((w * py).sum())
                vx = float((w * px * px).sum()) - mx * mx
                vy = float((w * py * py).sum()) - my * my
                cov = float((w * px * py).sum()) - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        chans.append(float(np.mean(vals)))
    return float(np.mean(chans))


class TestBasicMetrics:
    def test_psnr_of_identical_is_inf(self):
        img = np.random.default_rng(0).random((16, 32, 3))
        assert psnr(img, img) == math.inf
        assert mse(img, img) == 0.0

    def test_uniform_offset_frozen_value(self):
        a = np.full((8, 16, 3), 0.4)
        b = np.full((8, 16, 3), 0.5)
        assert abs(mse(a, b) - 0.01) < 1e-15
        assert abs(psnr(a, b) - 20.0) < 1e-9  # 10*log10(1/0.01)

    def test_accepts_panorama_wrapper(self):
        img = PanoramaImage(np.full((8, 16, 3), 0.25, dtype=np.float32))
        assert mse(img, img) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_is_exactly_one(self):
        img = np.random.default_rng(1).random((24, 48, 3))
        assert ssim(img, img) == 1.0

    def test_matches_window_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.random((32, 32, 3))
        b = np.clip(a + rng.normal(0, 0.08, a.shape), 0, 1)
        got = ssim(a, b)
        want = ssim_oracle(a, b)
        assert abs(got - want) < 1e-9
        assert got < 1.0

    def test_more_noise_scores_lower(self):
        rng = np.random.default_rng(3)
        a = rng.random((32, 64, 3))
        small = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
        large = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert ssim(a, large) < ssim(a, small) < 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        a = rng.random((20, 40, 3))
        b = rng.random((20, 40, 3))
        assert ssim(a, b) == ssim(b, a)

    def test_too_small_rejected(self):
        with pytest.raises(ParameterError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestLoops:
    def test_out_back_structure(self):
        loop = sample_loop(np.random.default_rng(0), "out_back", 8.0)
        acts = loop.actions
        assert len(acts) == 3
        assert acts[0].d == 4.0 and acts[1].d == 4.0 and acts[2].d == 0.0
        assert acts[1].alpha == -PI
        assert sum(a.d for a in acts) == 8.0

    def test_ngon_side_lengths(self):
        for shape, n in (("ngon3", 3), ("ngon4", 4), ("ngon6", 6)):
            loop = sample_loop(np.random.default_rng(1), shape, 12.0)
            travels = [a.d for a in loop.actions if a.d > 0]
            assert len(travels) == n
            assert all(abs(d - 12.0 / n) < 1e-12 for d in travels)

    def test_all_shapes_close_exactly(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            for shape in LOOP_SHAPES:
                length = float(rng.uniform(1.0, 20.0))
                loop = sample_loop(rng, shape, length)
                pose = AgentPose((2.0, 1.0, 0.0), -0.3)
                for a in loop.actions:
                    pose = pose.step(a.alpha, a.d)
                assert math.hypot(pose.x - 2.0, pose.y - 1.0) < 1e-9
                assert abs(normalize_longitude(pose.heading + 0.3)) < 1e-9

    def test_bad_inputs(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ParameterError):
            sample_loop(rng, "out_back", 0.0)
        with pytest.raises(ParameterError):
            sample_loop(rng, "figure8", 4.0)

    def test_feasibility(self):
        start = AgentPose()
        open_loop = [Action(0.0, 2.0), Action(-PI, 2.0), Action(-PI, 0.0)]
        assert loop_feasible(empty_scene(), start, open_loop)
        assert not loop_feasible(box_ring_scene(), start, open_loop)


class TestEvaluateIelc:
    def test_exact_model_closes_loops(self):
        res = evaluate_ielc(empty_scene(), kappa=0.0, n_loops=8,
                            lengths=(2.0, 4.0), shapes=("out_back", "ngon4"),
                            dims=(128, 64), seed=3)
        assert len(res["loops"]) == 8
        assert res["aggregates"]["overall_mean_mse"] < 1e-6
        assert res["note"] == EVAL_NOTE
        # even split over the 4 cells
        assert all(c["n"] == 2 for c in res["aggregates"]["by_shape_length"])

    def test_degradation_monotone_in_kappa_and_length(self):
        kwargs = dict(n_loops=6, lengths=(2.0, 6.0), shapes=("out_back",),
                      dims=(128, 64), seed=11)
        weak = evaluate_ielc(empty_scene(), kappa=0.2, **kwargs)
        strong = evaluate_ielc(empty_scene(), kappa=0.8, **kwargs)
        assert (strong["aggregates"]["overall_mean_mse"]
                > weak["aggregates"]["overall_mean_mse"])
        for res in (weak, strong):
            by_len = res["aggregates"]["by_length"]
            assert by_len[0]["length"] < by_len[1]["length"]
            assert by_len[0]["mean_mse"] < by_len[1]["mean_mse"]

    def test_blocked_cells_raise(self):
        with pytest.raises(SceneError):
            evaluate_ielc(box_ring_scene(), n_loops=2, lengths=(8.0,),
                          shapes=("out_back",), dims=(128, 64),
                          seed=0, max_attempts=50)

    def test_outputs_deterministic_bytes(self, tmp_path):
        kwargs = dict(kappa=0.3, n_loops=4, lengths=(2.0,),
                      shapes=("out_back", "ngon3"), dims=(128, 64), seed=2)
        a = evaluate_ielc(empty_scene(), out_dir=str(tmp_path / "a"), **kwargs)
        b = evaluate_ielc(empty_scene(), out_dir=str(tmp_path / "b"), **kwargs)
        for name in ("results.json", "results.csv"):
            ba = (tmp_path / "a" / name).read_bytes()
            bb = (tmp_path / "b" / name).read_bytes()
            assert ba == bb
        assert a == b

    def test_json_csv_contents(self, tmp_path):
        res = evaluate_ielc(empty_scene(), kappa=0.0, n_loops=2, lengths=(2.0,),
                            shapes=("out_back",), dims=(128, 64), seed=5,
                            out_dir=str(tmp_path))
        loaded = json.loads((tmp_path / "results.json").read_text())
        assert loaded["note"] == EVAL_NOTE
        for rec in loaded["loops"]:
            assert rec["psnr"] == "inf" or isinstance(rec["psnr"], float)
        lines = (tmp_path / "results.csv").read_text().strip().splitlines()
        assert lines[0] == "loop,shape,length,frames,mse,psnr"
        assert len(lines) == 1 + len(res["loops"])
        for line in lines[1:]:
            cells = line.split(",")
            assert cells[1] == "out_back"
            float(cells[4])  # mse parses
            assert cells[5] == "inf" or float(cells[5]) > 0


class TestEvaluateSession:
    def test_perfect_session_scores_perfectly(self):
        img = PanoramaImage(np.random.default_rng(0).random((32, 64, 3)).astype(np.float32))
        sess = ExplorationSession(x0=img, steps=[SessionStep(Action(0.0, 0.0), [img])])
        res = evaluate_session(sess)
        assert res["mse"] == 0.0
        assert res["psnr"] == math.inf
        assert res["ssim"] == 1.0
        assert res["n_steps"] == 1 and res["n_frames"] == 1

    def test_degraded_session_scores_lower(self):
        rng = np.random.default_rng(1)
        base = rng.random((32, 64, 3)).astype(np.float32)
        noisy = np.clip(base + rng.normal(0, 0.1, base.shape), 0, 1).astype(np.float32)
        sess = ExplorationSession(
            x0=PanoramaImage(base),
            steps=[SessionStep(Action(0.0, 0.0), [PanoramaImage(noisy)])])
        res = evaluate_session(sess)
        assert 0.0 < res["mse"] < 0.05
        assert res["ssim"] < 1.0
