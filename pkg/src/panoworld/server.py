"""Live exploration sessions over WebSocket, plus the small HTTP surface
around them.

Wire protocol (schema version ``v: 1``)
----------------------------------------

Every message — both directions — is one JSON text frame::

    {"v": 1, "kind": <str>, "session_id": <str | null>, "payload": {...}}

Frames cross the wire as base64-encoded PNGs inside the JSON payload (the
single documented transport choice; there are no adjacent binary frames).
Angles are degrees on the wire and radians inside.

Client -> server kinds:

``init``
    payload: ``seed`` (int >= 0, default 0), ``dims`` ([width, height],
    default [512, 256]), ``mode`` ("free" | "pilot", default "free"),
    ``frames_per_meter`` (number > 0, default 4.0).  Creates the session;
    must be the first message, exactly once.
``action``
    payload: ``{"alpha_deg": <number>, "d_m": <number >= 0>}`` to turn
    left by alpha and walk d forward, or ``{"pilot": true}`` to let the
    clearance-probing pilot pick and execute one step.  Only valid after
    the init acknowledgement.
``end``
    Finishes the session cleanly; the server acknowledges and closes.

Server -> client kinds:

``init``
    Acknowledgement; payload echoes seed/dims/mode/frames_per_meter and
    carries the initial view: ``frame`` (base64 PNG) and ``pose``
    (``{"x", "y", "heading_deg"}``).
``frame_batch``
    One executed step: ``step`` (1-based, strictly increasing), ``frames``
    (list of base64 PNGs, one per travel frame), ``action`` (the executed
    ``{"alpha_deg", "d_m"}``), ``pilot`` (bool), ``pose`` (post-step).
``state``
    After each step: ``step_count`` (int), ``done`` (bool).
``error``
    payload: ``message`` (str), ``done`` (bool).  A malformed or rejected
    message leaves the connection and session alive (``done: false``); a
    backend failure marks the session done (``done: true``) — no further
    actions, but the socket stays open for export bookkeeping.
``end``
    Acknowledgement of a client ``end``; payload: ``step_count``.

HTTP surface: ``GET /healthz`` (liveness), ``GET /sessions/{id}/bev``
(top-down PNG at the session's current pose), ``GET /sessions/{id}/export``
(zip archive loadable by ``load_session`` and the eval CLI), and static
files for the UI bundle mounted at ``/`` when a bundle directory exists.

Concurrency: one logical worker per session — each connection is a single
coroutine that executes at most one step at a time, with rendering
offloaded to the thread pool, so no session ever waits on another's
pending action.  Sessions share nothing but code.
"""

from __future__ import annotations

import base64
import io
import json
import math
import os
import secrets
import tempfile
import threading
import zipfile
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response, WebSocket
from starlette.concurrency import run_in_threadpool
from starlette.staticfiles import StaticFiles
from starlette.websockets import WebSocketDisconnect

from .errors import GenerationError
from .exploration import heuristic_pilot
from .image import save_raster
from .transition import (Action, ExplorationSession, GroundTruthModel,
                         SessionStep, TransitionConfig, apply_action)
from .world import AgentPose, render_bev, scene_from_spec

PROTOCOL_VERSION = 1
DEFAULT_DIMS = (512, 256)
MODES = ("free", "pilot")


def _png_b64(img) -> str:
    buf = io.BytesIO()
    save_raster(img, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _png_bytes(img) -> bytes:
    buf = io.BytesIO()
    save_raster(img, buf)
    return buf.getvalue()


class ProtocolError(ValueError):
    """A message that cannot be accepted; the connection survives it."""


class ServerSession:
    """One live exploration: the exact world model plus the step record
    needed to stream frames now and export an archive later."""

    def __init__(self, session_id: str, seed: int, dims, mode: str,
                 frames_per_meter: float):
        self.id = session_id
        self.seed = seed
        self.mode = mode
        scene = scene_from_spec(seed)
        cfg = TransitionConfig(frames_per_meter=frames_per_meter)
        self.model = GroundTruthModel(scene, AgentPose(), dims=tuple(dims), config=cfg)
        self.x0 = self.model.initial_view()
        self.view = self.x0
        self.steps: list = []
        self.done = False

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def pose_payload(self) -> dict:
        pose = self.model.pose
        return {"x": pose.x, "y": pose.y,
                "heading_deg": math.degrees(pose.heading)}

    def execute(self, action: Action, pilot: bool) -> dict:
        """Run one step and build the frame_batch payload.  Raises
        GenerationError when the path is blocked (survivable)."""
        if pilot:
            action = heuristic_pilot(self.model, self.view)
        frames = apply_action(self.model, self.view, action)
        self.steps.append(SessionStep(action, frames))
        self.view = frames[-1]
        return {
            "step": self.step_count,
            "frames": [_png_b64(f) for f in frames],
            "action": {"alpha_deg": math.degrees(action.alpha), "d_m": action.d},
            "pilot": pilot,
            "pose": self.pose_payload(),
        }

    def to_exploration_session(self) -> ExplorationSession:
        poses = [AgentPose()]
        for step in self.steps:
            poses.append(poses[-1].step(step.action.alpha, step.action.d))
        return ExplorationSession(
            x0=self.x0, steps=list(self.steps), poses=poses,
            meta={"dims": [self.x0.width, self.x0.height],
                  "stopped": "feed_closed", "seed": self.seed})

    def export_zip(self) -> bytes:
        session = self.to_exploration_session()
        buf = io.BytesIO()
        with tempfile.TemporaryDirectory() as tmp:
            session.save(tmp)
            with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
                for root, _dirs, files in os.walk(tmp):
                    for name in sorted(files):
                        full = os.path.join(root, name)
                        zf.write(full, arcname=os.path.relpath(full, tmp))
        return buf.getvalue()


# ---------------------------------------------------------------------------
# message validation
# ---------------------------------------------------------------------------

def _parse_message(raw: str) -> dict:
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    if msg.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {msg.get('v')!r}; "
                            f"this server speaks v={PROTOCOL_VERSION}")
    kind = msg.get("kind")
    if kind not in ("init", "action", "end"):
        raise ProtocolError(f"unknown message kind {kind!r}")
    payload = msg.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be a JSON object")
    return {"kind": kind, "payload": payload}


def _number(payload: dict, key: str) -> float:
    value = payload.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"action payload needs numeric {key!r}")
    if not math.isfinite(value):
        raise ProtocolError(f"{key!r} must be finite, got {value!r}")
    return float(value)


def _parse_action(payload: dict) -> tuple:
    """Return (action_or_None, pilot_flag)."""
    if payload.get("pilot") is True:
        return None, True
    alpha = _number(payload, "alpha_deg")
    d = _number(payload, "d_m")
    if d < 0:
        raise ProtocolError(f"d_m must be >= 0, got {d}")
    return Action(math.radians(alpha), d), False


def _parse_init(payload: dict) -> dict:
    seed = payload.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ProtocolError(f"seed must be a non-negative integer, got {seed!r}")
    dims = payload.get("dims", list(DEFAULT_DIMS))
    if (not isinstance(dims, (list, tuple)) or len(dims) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in dims)):
        raise ProtocolError(f"dims must be [width, height] integers, got {dims!r}")
    mode = payload.get("mode", "free")
    if mode not in MODES:
        raise ProtocolError(f"mode must be one of {MODES}, got {mode!r}")
    fpm = payload.get("frames_per_meter", 4.0)
    if isinstance(fpm, bool) or not isinstance(fpm, (int, float)) \
            or not math.isfinite(fpm) or fpm <= 0:
        raise ProtocolError(f"frames_per_meter must be a positive number, got {fpm!r}")
    return {"seed": seed, "dims": (dims[0], dims[1]), "mode": mode,
            "frames_per_meter": float(fpm)}


# ---------------------------------------------------------------------------
# application factory
# ---------------------------------------------------------------------------

def create_app(static_dir=None, max_kept_sessions: int = 32) -> FastAPI:
    """Build the session server.

    ``static_dir`` overrides where the UI bundle is looked for; the
    default is ``frontend/dist`` next to the package source.  Finished
    sessions stay in memory (newest ``max_kept_sessions``) so the export
    endpoint keeps working after a socket closes.
    """
    app = FastAPI(title="panoworld session server")
    sessions: dict[str, ServerSession] = {}
    order: list[str] = []
    registry_lock = threading.Lock()
    app.state.sessions = sessions

    def register(sess: ServerSession) -> None:
        with registry_lock:
            sessions[sess.id] = sess
            order.append(sess.id)
            while len(order) > max_kept_sessions:
                sessions.pop(order.pop(0), None)

    def lookup(session_id: str) -> ServerSession:
        with registry_lock:
            sess = sessions.get(session_id)
        if sess is None:
            raise HTTPException(status_code=404,
                                detail=f"no session {session_id!r}")
        return sess

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "v": PROTOCOL_VERSION}

    @app.get("/sessions/{session_id}/bev")
    def session_bev(session_id: str, size: int = 256, height: float = 10.0):
        sess = lookup(session_id)
        size = max(16, min(1024, int(size)))
        height = max(2.0, min(100.0, float(height)))
        img = render_bev(sess.model.scene, sess.model.pose,
                         height=height, size=size)
        return Response(content=_png_bytes(img), media_type="image/png")

    @app.get("/sessions/{session_id}/export")
    def session_export(session_id: str):
        sess = lookup(session_id)
        data = sess.export_zip()
        return Response(
            content=data, media_type="application/zip",
            headers={"Content-Disposition":
                     f'attachment; filename="session-{session_id}.zip"'})

    @app.websocket("/session")
    async def session_socket(ws: WebSocket) -> None:
        await ws.accept()
        sess: ServerSession | None = None

        async def send(kind: str, payload: dict) -> None:
            await ws.send_text(json.dumps({
                "v": PROTOCOL_VERSION, "kind": kind,
                "session_id": sess.id if sess is not None else None,
                "payload": payload,
            }, sort_keys=True))

        async def send_error(message: str, done: bool) -> None:
            await send("error", {"message": message, "done": done})

        try:
            while True:
                raw = await ws.receive()
                if raw["type"] == "websocket.disconnect":
                    break
                text = raw.get("text")
                if text is None:
                    await send_error("binary frames are not part of this "
                                     "protocol; send JSON text", done=False)
                    continue
                try:
                    msg = _parse_message(text)
                except ProtocolError as exc:
                    await send_error(str(exc), done=False)
                    continue

                if msg["kind"] == "init":
                    if sess is not None:
                        await send_error("session already initialized", done=False)
                        continue
                    try:
                        cfg = _parse_init(msg["payload"])
                    except ProtocolError as exc:
                        await send_error(str(exc), done=False)
                        continue
                    try:
                        sess = await run_in_threadpool(
                            ServerSession, secrets.token_hex(8), cfg["seed"],
                            cfg["dims"], cfg["mode"], cfg["frames_per_meter"])
                    except Exception as exc:
                        await send_error(f"init failed: {exc}", done=False)
                        continue
                    register(sess)
                    await send("init", {
                        "seed": sess.seed,
                        "dims": list(sess.model.dims),
                        "mode": sess.mode,
                        "frames_per_meter": sess.model.config.frames_per_meter,
                        "frame": _png_b64(sess.x0),
                        "pose": sess.pose_payload(),
                    })

                elif msg["kind"] == "action":
                    if sess is None:
                        await send_error("action before init: send an init "
                                         "message first", done=False)
                        continue
                    if sess.done:
                        await send_error("session is done", done=True)
                        continue
                    try:
                        action, pilot = _parse_action(msg["payload"])
                    except ProtocolError as exc:
                        await send_error(str(exc), done=False)
                        continue
                    try:
                        batch = await run_in_threadpool(sess.execute, action, pilot)
                    except GenerationError as exc:
                        # Blocked path: the step is rejected, the session
                        # stays live for the next action.
                        await send_error(str(exc), done=False)
                        continue
                    except Exception as exc:
                        sess.done = True
                        await send_error(f"backend failure: {exc}", done=True)
                        continue
                    await send("frame_batch", batch)
                    await send("state", {"step_count": sess.step_count,
                                         "done": sess.done})

                else:  # end
                    await send("end", {"step_count":
                                       sess.step_count if sess is not None else 0})
                    break
        except WebSocketDisconnect:
            pass
        finally:
            if sess is not None:
                sess.done = True

    if static_dir is None:
        static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    static_dir = Path(static_dir)
    if static_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")

    return app
