"""Command-line front end.

One executable, ``panoworld``, with a subcommand per task: rendering,
projection conversions, dataset capture, exploration sessions, the two
evaluation sweeps, pairwise image metrics, and the live session server.
Every subcommand accepts ``--seed``, ``--dims`` and ``--out``; angles
cross this boundary in degrees and are converted to radians immediately.

Exit codes: 0 success, 1 usage error (synopsis on stderr), 2 runtime
failure (message on stderr).
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .errors import ParameterError, SceneError
from .geometry import RotationSpec
from .image import (cubemap_to_equirect, equirect_to_cubemap,
                    extract_perspective, load_cubemap, load_panorama,
                    rotate_panorama_image, save_cubemap, save_raster)
from .metrics import _sanitize, evaluate_ielc, evaluate_session, mse, psnr, ssim
from .transition import (Action, DegradedModel, GroundTruthModel,
                         TransitionConfig, load_session, rollout, sample_action)
from .world import (AgentPose, capture_trajectory_dataset, path_blocked,
                    render_bev, render_panorama, scene_from_spec)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this artifact reserves 2 for
    runtime failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dims(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"dims must look like WIDTHxHEIGHT (e.g. 1024x512), got {text!r}")


def _pose(args) -> AgentPose:
    x, y = args.pos
    return AgentPose((x, y, 0.0), math.radians(args.heading_deg))


def _model(args, dims):
    scene = scene_from_spec(args.seed)
    cfg = TransitionConfig(frames_per_meter=args.fpm)
    model = GroundTruthModel(scene, _pose(args), dims=dims, config=cfg)
    if args.kappa > 0:
        model = DegradedModel(model, kappa=args.kappa, seed=args.seed)
    return model


def _print_json(payload, out_path=None):
    text = json.dumps(_sanitize(payload), indent=1, sort_keys=True)
    print(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {out_path}")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_render(args):
    scene = scene_from_spec(args.seed, n_objects=args.objects)
    dims = args.dims or (1024, 512)
    img = render_panorama(scene, _pose(args), dims=dims,
                          supersample=args.supersample)
    save_raster(img.data, args.out or "panorama.png")
    print(f"wrote {args.out or 'panorama.png'}")


def _cmd_convert(args):
    if args.to == "cubemap":
        pano = load_panorama(args.input)
        face = args.face_size or pano.height // 2
        prefix = args.out or os.path.splitext(args.input)[0] + "_cube"
        manifest = save_cubemap(equirect_to_cubemap(pano, face), prefix)
        print(f"wrote {manifest}")
    else:
        cm = load_cubemap(args.input)
        dims = args.dims or (4 * cm.face_size, 2 * cm.face_size)
        out = args.out or os.path.splitext(args.input)[0] + "_equirect.png"
        save_raster(cubemap_to_equirect(cm, dims).data, out)
        print(f"wrote {out}")


def _cmd_rotate(args):
    pano = load_panorama(args.input)
    rot = RotationSpec(dphi=math.radians(args.yaw_deg),
                       dtheta=math.radians(args.pitch_deg), mode=args.mode)
    out = args.out or "rotated.png"
    save_raster(rotate_panorama_image(pano, rot).data, out)
    print(f"wrote {out}")


def _cmd_perspective(args):
    pano = load_panorama(args.input)
    w, h = args.dims or (512, 512)
    view = extract_perspective(pano, math.radians(args.yaw_deg),
                               math.radians(args.pitch_deg),
                               math.radians(args.fov_deg), w, h)
    out = args.out or "perspective.png"
    save_raster(view.data, out)
    print(f"wrote {out}")


def _cmd_bev(args):
    w, h = args.dims or (512, 512)
    if w != h:
        raise ParameterError(f"top-down views are square; got {w}x{h}")
    scene = scene_from_spec(args.seed)
    img = render_bev(scene, _pose(args), height=args.height, size=w,
                     hfov=math.radians(args.fov_deg),
                     orthographic=args.ortho)
    out = args.out or "bev.png"
    save_raster(img.data, out)
    print(f"wrote {out}")


def _cmd_dataset(args):
    scene = scene_from_spec(args.seed)
    rng = np.random.default_rng(args.seed)
    pose = AgentPose()
    poses = [pose]
    attempts = 0
    while len(poses) < args.steps + 1:
        attempts += 1
        if attempts > 200 * (args.steps + 1):
            raise SceneError("could not draw an unblocked pose walk; "
                             "try another seed")
        a = sample_action(rng, max_distance=2.0)
        if path_blocked(scene, pose, a.alpha, a.d):
            continue
        pose = pose.step(a.alpha, a.d)
        poses.append(pose)
    out = args.out or "dataset"
    manifest = capture_trajectory_dataset(scene, poses, out,
                                          dims=args.dims or (512, 256),
                                          face_size=args.face_size)
    print(f"wrote {os.path.join(out, 'manifest.json')} "
          f"({len(manifest['poses'])} poses)")


def _load_script(path):
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ParameterError("action script must be a JSON list")
    actions = []
    for i, e in enumerate(entries):
        try:
            actions.append(Action(math.radians(float(e["alpha_deg"])),
                                  float(e["d_m"])))
        except (TypeError, KeyError):
            raise ParameterError(
                f"script entry {i} must be an object with alpha_deg and d_m, "
                f"got {e!r}")
    return actions


def _cmd_explore(args):
    from .exploration import GoalSpec, heuristic_pilot, run_session

    dims = args.dims or (512, 256)
    model = _model(args, dims)
    if args.mode == "scripted":
        if not args.script:
            raise _Usage("--script is required in scripted mode")
        session = rollout(model, _load_script(args.script))
        session.meta["stopped"] = "script_done"
    elif args.mode == "goal":
        if not args.goal_color:
            raise _Usage("--goal-color is required in goal mode")
        goal = GoalSpec(args.goal_color, args.goal_height,
                        stop_range=args.stop_range)
        session = run_session(model, goal=goal, max_steps=args.steps)
    else:
        session = run_session(model, pilot=heuristic_pilot,
                              max_steps=args.steps)
    out = args.out or "session"
    manifest = session.save(out)
    print(f"wrote {manifest} ({len(session.steps)} steps, "
          f"stopped: {session.meta.get('stopped')})")


def _cmd_eval_ielc(args):
    if args.session:
        report = evaluate_session(load_session(args.session))
        _print_json(report, args.out)
        return
    n_loops = args.n_loops or {"ci": 50, "full": 1000}[args.preset]
    out = args.out or "ielc_out"
    result = evaluate_ielc(scene_from_spec(args.seed), kappa=args.kappa,
                           n_loops=n_loops, lengths=args.lengths,
                           dims=args.dims or (384, 192),
                           frames_per_meter=args.fpm, seed=args.seed,
                           out_dir=out)
    agg = result["aggregates"]
    print(f"{n_loops} loops, overall mean MSE {agg['overall_mean_mse']:.3e}")
    for cell in agg["by_shape_length"]:
        if cell["n"] == 0:
            continue
        print(f"  {cell['shape']:>8s} L={cell['length']:<4g} "
              f"mean MSE {cell['mean_mse']:.3e} (n={cell['n']})")
    print(f"wrote {os.path.join(out, 'results.json')} and results.csv")


def _cmd_eval_policy(args):
    from .policy import evaluate_policies

    presets = {"ci": (60, 10, 10, 6), "full": (1000, 500, 500, 200)}
    n_random, n_base, n_imagine, n_multi = presets[args.preset]
    if args.n_random is not None:
        n_random = args.n_random
    if args.n_base is not None:
        n_base = args.n_base
    if args.n_imagine is not None:
        n_imagine = args.n_imagine
    if args.n_multi is not None:
        n_multi = args.n_multi
    out = args.out or "policy_out"
    result = evaluate_policies(seed=args.seed, n_random=n_random,
                               n_base=n_base, n_imagine=n_imagine,
                               n_multi=n_multi, dims=args.dims or (384, 192),
                               frames_per_meter=args.fpm, out_dir=out)
    for name, entry in result["policies"].items():
        acc = entry["accuracy"]
        shown = "n/a" if acc is None else f"{100 * acc:.1f}%"
        print(f"  {name:>12s}: {shown} ({entry['correct']}/{entry['n']})")
    print(f"wrote {os.path.join(out, 'policy_results.json')} "
          f"and policy_trials.csv")


def _cmd_metric(args):
    from .image import load_raster

    x, y = load_raster(args.a), load_raster(args.b)
    report = {"a": args.a, "b": args.b, "mse": mse(x, y), "psnr": psnr(x, y),
              "ssim": ssim(x, y)}
    _print_json(report, args.out)


def _cmd_serve(args):
    from .server import create_app

    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port,
                log_level="warning")


class _Usage(Exception):
    """Raised by handlers for argument combinations the parser cannot
    express; converted to a usage error (exit 1)."""


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="procedural world seed (default 0)")
    common.add_argument("--dims", type=_dims, default=None, metavar="WxH",
                        help="output dimensions, e.g. 1024x512")
    common.add_argument("--out", default=None,
                        help="output file or directory")

    parser = _Parser(prog="panoworld",
                     description="explorable panoramic worlds: rendering, "
                                 "exploration, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("render", parents=[common],
                       help="render one panorama from a seeded world")
    p.add_argument("--pos", type=float, nargs=2, default=(0.0, 0.0),
                   metavar=("X", "Y"))
    p.add_argument("--heading-deg", type=float, default=0.0)
    p.add_argument("--objects", type=int, default=None,
                   help="object count (default: seed-derived)")
    p.add_argument("--supersample", type=int, default=2)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("convert", parents=[common],
                       help="convert between equirect and cubemap")
    p.add_argument("input", help="panorama PNG or cubemap manifest JSON")
    p.add_argument("--to", choices=("cubemap", "equirect"), required=True)
    p.add_argument("--face-size", type=int, default=None)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("rotate", parents=[common],
                       help="rotate a panorama in place")
    p.add_argument("input")
    p.add_argument("--yaw-deg", type=float, default=0.0)
    p.add_argument("--pitch-deg", type=float, default=0.0)
    p.add_argument("--mode", choices=("rigid", "paper_literal"),
                   default="rigid")
    p.set_defaults(func=_cmd_rotate)

    p = sub.add_parser("perspective", parents=[common],
                       help="extract a pinhole view from a panorama")
    p.add_argument("input")
    p.add_argument("--yaw-deg", type=float, default=0.0)
    p.add_argument("--pitch-deg", type=float, default=0.0)
    p.add_argument("--fov-deg", type=float, default=90.0)
    p.set_defaults(func=_cmd_perspective)

    p = sub.add_parser("bev", parents=[common],
                       help="render the top-down view of a seeded world")
    p.add_argument("--pos", type=float, nargs=2, default=(0.0, 0.0),
                   metavar=("X", "Y"))
    p.add_argument("--heading-deg", type=float, default=0.0)
    p.add_argument("--height", type=float, default=10.0)
    p.add_argument("--fov-deg", type=float, default=90.0)
    p.add_argument("--ortho", action="store_true",
                   help="orthographic map instead of a pinhole camera")
    p.set_defaults(func=_cmd_bev)

    p = sub.add_parser("dataset", parents=[common],
                       help="capture a pose-walk dataset with manifest")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--face-size", type=int, default=None,
                   help="also write cubemaps at this face size")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("explore", parents=[common],
                       help="run an exploration session and save it")
    p.add_argument("--mode", choices=("scripted", "free", "goal"),
                   default="free")
    p.add_argument("--script", default=None,
                   help="JSON action list for scripted mode "
                        '(e.g. [{"alpha_deg": 90, "d_m": 2.0}])')
    p.add_argument("--goal-color", default=None,
                   help="palette color to home on in goal mode")
    p.add_argument("--goal-height", type=float, default=2.0)
    p.add_argument("--stop-range", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=32,
                   help="step budget for free/goal modes")
    p.add_argument("--pos", type=float, nargs=2, default=(0.0, 0.0),
                   metavar=("X", "Y"))
    p.add_argument("--heading-deg", type=float, default=0.0)
    p.add_argument("--fpm", type=float, default=4.0,
                   help="frames per meter of travel")
    p.add_argument("--kappa", type=float, default=0.0,
                   help="degradation strength (0 = exact model)")
    p.set_defaults(func=_cmd_explore)

    p = sub.add_parser("eval-ielc", parents=[common],
                       help="loop-closure drift sweep, or score a saved "
                            "session")
    p.add_argument("--preset", choices=("ci", "full"), default="ci")
    p.add_argument("--n-loops", type=int, default=None,
                   help="override the preset loop count")
    p.add_argument("--lengths", type=lambda s: tuple(float(v) for v in s.split(",")),
                   default=(4.0, 8.0, 16.0), metavar="L1,L2,...")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--fpm", type=float, default=4.0)
    p.add_argument("--session", default=None,
                   help="score a saved session directory or zip instead")
    p.set_defaults(func=_cmd_eval_ielc)

    p = sub.add_parser("eval-policy", parents=[common],
                       help="accuracy sweep over the decision policies")
    p.add_argument("--preset", choices=("ci", "full"), default="ci")
    p.add_argument("--n-random", type=int, default=None)
    p.add_argument("--n-base", type=int, default=None)
    p.add_argument("--n-imagine", type=int, default=None)
    p.add_argument("--n-multi", type=int, default=None)
    p.add_argument("--fpm", type=float, default=0.5)
    p.set_defaults(func=_cmd_eval_policy)

    p = sub.add_parser("metric", parents=[common],
                       help="MSE/PSNR/SSIM between two same-sized PNGs")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=_cmd_metric)

    p = sub.add_parser("serve", parents=[common],
                       help="start the interactive session server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except _Usage as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # the CLI boundary: report, don't traceback
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    return 0


def entry() -> int:
    return main()


if __name__ == "__main__":
    sys.exit(main())
