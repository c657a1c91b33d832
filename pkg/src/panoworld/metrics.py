"""Fidelity metrics and loop-consistency evaluation.

The core question the evaluation answers: after walking a closed loop of
actions, how far is the final view from the starting view?  For the exact
model the answer should be numerical noise; for degraded models the error
should grow with corruption strength and loop length.  Final-view fidelity
is measured with plain pixel MSE/PSNR plus SSIM on float images — no
learned metric is involved anywhere.

All metric math runs in float64.  SSIM uses an 11x11 Gaussian window
(sigma 1.5, K1=0.01, K2=0.03, L=1), applied separably, with a 5-pixel
border crop so every retained window is fully supported.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionError, ParameterError, SceneError
from .geometry import PI, TWO_PI, normalize_longitude
from .transition import (
    Action,
    DegradedModel,
    GroundTruthModel,
    TransitionConfig,
    rollout,
)
from .world import AgentPose, SceneSpec, path_blocked

EVAL_NOTE = ("final-view fidelity is plain pixel MSE/PSNR/SSIM on float "
             "images; no learned metric is involved")


def _arr(x) -> np.ndarray:
    a = getattr(x, "data", x)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise DimensionError(f"expected (H, W) or (H, W, C) image, got shape {a.shape}")
    return a


def _pair(a, b):
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def mse(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for unit-range images; inf when equal."""
    m = mse(a, b)
    return math.inf if m == 0.0 else float(10.0 * math.log10(1.0 / m))


_SSIM_RADIUS = 5
_x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
_SSIM_KERNEL = np.exp(-(_x ** 2) / (2.0 * 1.5 ** 2))
_SSIM_KERNEL /= _SSIM_KERNEL.sum()
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _ssim_filter(x: np.ndarray) -> np.ndarray:
    y = correlate1d(x, _SSIM_KERNEL, axis=0, mode="reflect")
    return correlate1d(y, _SSIM_KERNEL, axis=1, mode="reflect")


def ssim(a, b) -> float:
    """Mean structural similarity over all fully-supported windows.

    Identical inputs score exactly 1.0: every sub-expression is shared
    between the two operands, so the ratio is bit-for-bit 1 per pixel.
    """
    x, y = _pair(a, b)
    h, w = x.shape[:2]
    if h < 2 * _SSIM_RADIUS + 1 or w < 2 * _SSIM_RADIUS + 1:
        raise ParameterError(f"image {h}x{w} too small for an 11x11 window")
    r = _SSIM_RADIUS
    means = []
    for c in range(x.shape[2]):
        xa, yb = x[:, :, c], y[:, :, c]
        mu_x = _ssim_filter(xa)
        mu_y = _ssim_filter(yb)
        var_x = _ssim_filter(xa * xa) - mu_x * mu_x
        var_y = _ssim_filter(yb * yb) - mu_y * mu_y
        cov = _ssim_filter(xa * yb) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        means.append(float(np.mean((num / den)[r:-r, r:-r])))
    return float(np.mean(means))


# ---------------------------------------------------------------------------
# closed loops
# ---------------------------------------------------------------------------

LOOP_SHAPES = ("out_back", "ngon3", "ngon4", "ngon6")


@dataclass(frozen=True)
class Loop:
    shape: str
    length: float
    actions: tuple


def sample_loop(rng: np.random.Generator, shape: str, length: float) -> Loop:
    """A closed action loop of total travel ``length`` at a random initial
    bearing.  The last action is a pure turn restoring the start heading,
    so a perfectly executed loop reproduces the start pose exactly."""
    if length <= 0:
        raise ParameterError(f"loop length must be positive, got {length}")
    a0 = float(rng.uniform(-PI, PI))
    if shape == "out_back":
        acts = [Action(a0, length / 2.0), Action(PI, length / 2.0),
                Action(normalize_longitude(-a0 - PI), 0.0)]
    elif shape.startswith("ngon"):
        n = int(shape[4:])
        if n < 3:
            raise ParameterError(f"polygon loop needs >= 3 sides, got {shape!r}")
        side = length / n
        turn = TWO_PI / n
        acts = [Action(a0, side)]
        acts += [Action(turn, side) for _ in range(n - 1)]
        acts.append(Action(normalize_longitude(-a0 - (n - 1) * turn), 0.0))
    else:
        raise ParameterError(f"unknown loop shape {shape!r}")
    return Loop(shape=shape, length=float(length), actions=tuple(acts))


def loop_feasible(scene: SceneSpec, start: AgentPose, actions) -> bool:
    """True when every leg of the action list stays clear of geometry
    (checked by pose algebra alone, no rendering)."""
    pose = start
    for a in actions:
        if a.d > 0 and path_blocked(scene, pose, a.alpha, a.d):
            return False
        pose = pose.step(a.alpha, a.d)
    return True


# ---------------------------------------------------------------------------
# loop-consistency evaluation
# ---------------------------------------------------------------------------

def evaluate_ielc(scene: SceneSpec, *, kappa: float = 0.0, n_loops: int = 50,
                  lengths=(4.0, 8.0, 16.0), shapes=LOOP_SHAPES,
                  dims=(384, 192), frames_per_meter: float = 4.0,
                  seed: int = 0, start: AgentPose = AgentPose(),
                  out_dir: str | None = None, max_attempts: int = 500) -> dict:
    """Walk sampled closed loops and measure how far the final view drifts
    from the starting view.

    Loops are spread evenly over (shape, length) cells; blocked candidates
    are discarded and resampled (pose algebra only, so rejection is cheap).
    The whole run is a pure function of (scene, parameters, seed): reruns
    produce identical results files byte for byte.
    """
    if n_loops < 1:
        raise ParameterError(f"n_loops must be >= 1, got {n_loops}")
    rng = np.random.default_rng(seed)
    cfg = TransitionConfig(frames_per_meter=frames_per_meter)
    cells = [(shape, float(L)) for L in lengths for shape in shapes]
    base, extra = divmod(n_loops, len(cells))
    records = []
    loop_id = 0
    for ci, (shape, length) in enumerate(cells):
        quota = base + (1 if ci < extra else 0)
        got = attempts = 0
        while got < quota:
            attempts += 1
            if attempts > max_attempts:
                raise SceneError(
                    f"could not place {quota} feasible {shape} loops of length {length} "
                    f"within {max_attempts} attempts")
            loop = sample_loop(rng, shape, length)
            if not loop_feasible(scene, start, loop.actions):
                continue
            model = DegradedModel(
                GroundTruthModel(scene, start, dims=dims, config=cfg),
                kappa=kappa, seed=seed * 100_003 + loop_id)
            x0 = model.initial_view()
            session = rollout(model, loop.actions, x0=x0)
            m = mse(x0, session.final_view)
            records.append({
                "loop": loop_id,
                "shape": shape,
                "length": length,
                "frames": len(session.frames),
                "mse": m,
                "psnr": psnr(x0, session.final_view),
            })
            got += 1
            loop_id += 1
    by_cell = []
    for shape, length in cells:
        sel = [r["mse"] for r in records if r["shape"] == shape and r["length"] == length]
        by_cell.append({"shape": shape, "length": length,
                        "mean_mse": float(np.mean(sel)) if sel else None, "n": len(sel)})
    by_length = []
    for length in sorted({c[1] for c in cells}):
        sel = [r["mse"] for r in records if r["length"] == length]
        by_length.append({"length": length,
                          "mean_mse": float(np.mean(sel)) if sel else None, "n": len(sel)})
    result = {
        "config": {
            "kappa": float(kappa), "n_loops": n_loops,
            "lengths": [float(v) for v in lengths], "shapes": list(shapes),
            "dims": list(dims), "frames_per_meter": float(frames_per_meter),
            "seed": seed,
        },
        "note": EVAL_NOTE,
        "loops": records,
        "aggregates": {
            "overall_mean_mse": float(np.mean([r["mse"] for r in records])),
            "by_shape_length": by_cell,
            "by_length": by_length,
        },
    }
    if out_dir is not None:
        write_ielc_outputs(result, out_dir)
    return result


def write_ielc_outputs(result: dict, out_dir: str) -> dict:
    """Write results.json and results.csv; returns their paths.

    Infinite PSNR serializes as the string "inf" in both formats, and the
    files are deterministic for identical results.
    """
    os.makedirs(out_dir, exist_ok=True)
    jpath = os.path.join(out_dir, "results.json")
    with open(jpath, "w") as fh:
        json.dump(_sanitize(result), fh, indent=1, sort_keys=True)
        fh.write("\n")
    cpath = os.path.join(out_dir, "results.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["loop", "shape", "length", "frames", "mse", "psnr"])
    for r in result["loops"]:
        writer.writerow([r["loop"], r["shape"], repr(r["length"]), r["frames"],
                         repr(r["mse"]), "inf" if r["psnr"] == math.inf else repr(r["psnr"])])
    with open(cpath, "w") as fh:
        fh.write(buf.getvalue())
    return {"json": jpath, "csv": cpath}


def _sanitize(obj):
    """Deep-replace non-finite floats with their string sentinels so the
    JSON stays standard-compliant."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def evaluate_session(session) -> dict:
    """Loop-closure fidelity of a recorded session: final view vs x0."""
    x0 = session.x0
    final = session.final_view
    return {
        "mse": mse(x0, final),
        "psnr": psnr(x0, final),
        "ssim": ssim(x0, final),
        "n_steps": len(session.steps),
        "n_frames": len(session.frames),
        "dims": [x0.width, x0.height],
    }
