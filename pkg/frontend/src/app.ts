/** Browser entry point: wires the session client, frame player, and
 * view state to the page. Every pixel shown came from the server — the
 * projection modes only resample frames it already rendered.
 */

import { SessionClient, SocketLike } from "./client.js";
import { FramePlayer } from "./player.js";
import {
  ActionRequest,
  InitAck,
  PilotRequest,
  Pose,
  pngDataUrl,
} from "./protocol.js";
import {
  FACE_ORDER,
  faceUvMap,
  perspectiveUvMap,
  resample,
} from "./projection.js";
import { Projection, ViewState } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const bevCanvas = el<HTMLCanvasElement>("bev");
const bevCtx = bevCanvas.getContext("2d")!;
const stepEl = el<HTMLSpanElement>("step");
const poseEl = el<HTMLSpanElement>("pose");
const statusEl = el<HTMLSpanElement>("status");
const lookEl = el<HTMLSpanElement>("look");
const pilotBadge = el<HTMLSpanElement>("pilot-badge");
const logEl = el<HTMLUListElement>("log");
const exportLink = el<HTMLAnchorElement>("export");
const connectBtn = el<HTMLButtonElement>("connect");
const endBtn = el<HTMLButtonElement>("end");
const seedInput = el<HTMLInputElement>("seed");
const projectionSel = el<HTMLSelectElement>("projection");
const resetLookBtn = el<HTMLButtonElement>("reset-look");
const pilotBtn = el<HTMLButtonElement>("pilot");
const pilotAuto = el<HTMLInputElement>("pilot-auto");
const actionButtons = Array.from(
  document.querySelectorAll<HTMLButtonElement>("button[data-alpha]"),
);

const PERSPECTIVE_DIMS: [number, number] = [512, 320];
const FACE_SIZE = 128;
const BEV_HEIGHT_M = 10; // the server endpoint's default camera height

let client: SessionClient | null = null;
let view = new ViewState();

// current panorama at native resolution, ready for reprojection
let frame: ImageData | null = null;
let frameSeq = 0; // guards against PNG decodes finishing out of order
const faceMaps = new Map<string, Float32Array>();

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

function setCanvasSize(w: number, h: number): void {
  if (canvas.width !== w) canvas.width = w;
  if (canvas.height !== h) canvas.height = h;
}

function render(): void {
  if (!frame) return;
  if (view.projection === "equirect") {
    setCanvasSize(frame.width, frame.height);
    ctx.putImageData(frame, 0, 0);
  } else if (view.projection === "perspective") {
    const [w, h] = PERSPECTIVE_DIMS;
    setCanvasSize(w, h);
    const out = ctx.createImageData(w, h);
    const map = perspectiveUvMap(w, h, view.yawDeg, view.pitchDeg, view.fovDeg);
    resample(frame, map, out);
    ctx.putImageData(out, 0, 0);
  } else {
    renderCubeGrid();
  }
  lookEl.textContent =
    view.projection === "perspective"
      ? `yaw ${view.yawDeg.toFixed(0)}° pitch ${view.pitchDeg.toFixed(0)}° ` +
        `fov ${view.fovDeg.toFixed(0)}° — drag to look, wheel to zoom`
      : "";
}

function renderCubeGrid(): void {
  const cols = 3;
  setCanvasSize(cols * FACE_SIZE, 2 * FACE_SIZE);
  const out = ctx.createImageData(FACE_SIZE, FACE_SIZE);
  FACE_ORDER.forEach((face, idx) => {
    let map = faceMaps.get(face);
    if (!map) {
      map = faceUvMap(face, FACE_SIZE);
      faceMaps.set(face, map);
    }
    resample(frame!, map, out);
    const x = (idx % cols) * FACE_SIZE;
    const y = Math.floor(idx / cols) * FACE_SIZE;
    ctx.putImageData(out, x, y);
    ctx.fillStyle = "rgba(0, 0, 0, 0.55)";
    ctx.fillRect(x + 4, y + 4, 7 * face.length + 8, 16);
    ctx.fillStyle = "#fff";
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillText(face, x + 8, y + 16);
  });
}

/** Decode one server frame and show it; stale decodes are dropped. */
function showFrame(src: string): void {
  const seq = ++frameSeq;
  const img = new Image();
  img.onload = () => {
    if (seq !== frameSeq) return; // a newer frame already landed
    const off = document.createElement("canvas");
    off.width = img.naturalWidth;
    off.height = img.naturalHeight;
    const octx = off.getContext("2d")!;
    octx.drawImage(img, 0, 0);
    frame = octx.getImageData(0, 0, off.width, off.height);
    view.advance();
    render();
  };
  img.src = src;
}

const player = new FramePlayer(showFrame);

// ---------------------------------------------------------------------------
// panels
// ---------------------------------------------------------------------------

function setStatus(text: string, isError = false): void {
  statusEl.textContent = text;
  statusEl.className = isError ? "err" : "stat";
}

function log(text: string): void {
  const li = document.createElement("li");
  li.textContent = text;
  logEl.prepend(li);
  while (logEl.children.length > 8) logEl.removeChild(logEl.lastChild!);
}

function showPose(pose: Pose): void {
  poseEl.textContent =
    `x ${pose.x.toFixed(1)}  y ${pose.y.toFixed(1)}  ` +
    `heading ${pose.heading_deg.toFixed(0)}°`;
}

function drawTrack(): void {
  const pts = view.bevTrack(BEV_HEIGHT_M, bevCanvas.width);
  if (pts.length === 0) return;
  bevCtx.strokeStyle = "rgba(255, 255, 255, 0.85)";
  bevCtx.lineWidth = 1.5;
  bevCtx.beginPath();
  pts.forEach(([x, y], i) => (i === 0 ? bevCtx.moveTo(x, y) : bevCtx.lineTo(x, y)));
  bevCtx.stroke();
  for (const [x, y] of pts) {
    bevCtx.fillStyle = "rgba(255, 255, 255, 0.8)";
    bevCtx.beginPath();
    bevCtx.arc(x, y, 2, 0, 2 * Math.PI);
    bevCtx.fill();
  }
  const [cx, cy] = pts[pts.length - 1];
  bevCtx.fillStyle = "#ff5252";
  bevCtx.beginPath();
  bevCtx.arc(cx, cy, 3.5, 0, 2 * Math.PI);
  bevCtx.fill();
}

function refreshBev(): void {
  if (!client?.sessionId) return;
  const img = new Image();
  img.onload = () => {
    bevCtx.drawImage(img, 0, 0, bevCanvas.width, bevCanvas.height);
    drawTrack();
  };
  img.src = client.bevUrl(bevCanvas.width);
}

function refreshControls(): void {
  const ready = client !== null && client.sessionId !== null;
  const idle = ready && !client!.busy && !client!.done;
  for (const b of actionButtons) b.disabled = !idle;
  pilotBtn.disabled = !idle;
  pilotAuto.disabled = !ready || client!.done;
  endBtn.disabled = !ready || client!.done;
  connectBtn.disabled = client !== null && !client.done;
}

// ---------------------------------------------------------------------------
// session wiring
// ---------------------------------------------------------------------------

function maybeAutoPilot(): void {
  if (pilotAuto.checked && client && !client.busy && !client.done) {
    client.action({ pilot: true });
    refreshControls();
  }
}

function connect(): void {
  const seed = Number.parseInt(seedInput.value, 10);
  if (!Number.isInteger(seed) || seed < 0 || String(seed) !== seedInput.value.trim()) {
    setStatus("seed must be a non-negative integer", true);
    return;
  }
  player.stop();
  view = new ViewState();
  view.setProjection(projectionSel.value as Projection);
  pilotAuto.checked = false;
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const ws = new WebSocket(`${proto}://${location.host}/session`);
  ws.onopen = () => {
    client!.init({ seed, dims: [512, 256], frames_per_meter: 4.0 });
  };
  // thin adapter: SessionClient only needs send/close plus two callbacks
  const socket: SocketLike = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onmessage: null,
    onclose: null,
  };
  ws.onmessage = (ev) => socket.onmessage?.({ data: ev.data });
  ws.onclose = () => socket.onclose?.();
  client = new SessionClient(socket, {
    onInit: (ack: InitAck, sessionId: string) => {
      view.startBatch(1);
      view.recordPose(ack.pose);
      player.enqueue([pngDataUrl(ack.frame)]);
      showPose(ack.pose);
      stepEl.textContent = "0";
      exportLink.href = client!.exportUrl();
      exportLink.classList.remove("hidden");
      setStatus(`session ${sessionId} · seed ${ack.seed} · mode ${ack.mode}`);
      refreshBev();
      refreshControls();
    },
    onBatch: (batch) => {
      view.startBatch(batch.frames.length);
      view.recordPose(batch.pose);
      player.enqueue(batch.frames.map(pngDataUrl));
      showPose(batch.pose);
      pilotBadge.classList.toggle("hidden", !batch.pilot);
      const a = batch.action;
      log(
        `step ${batch.step}: turn ${a.alpha_deg.toFixed(0)}°, ` +
          `walk ${a.d_m.toFixed(1)} m (${batch.frames.length} frames)` +
          (batch.pilot ? " [pilot]" : ""),
      );
    },
    onState: (state) => {
      stepEl.textContent = String(state.step_count);
      refreshBev();
      refreshControls();
      maybeAutoPilot();
    },
    onError: (err) => {
      setStatus(err.message, true);
      log(`error: ${err.message}${err.done ? " (session over)" : ""}`);
      pilotAuto.checked = false;
      refreshControls();
    },
    onEnd: (ack) => {
      setStatus(`session ended after ${ack.step_count} steps`);
      pilotAuto.checked = false;
      refreshControls();
    },
    onClose: () => {
      // recorded history stays on screen; only new actions are off
      setStatus("disconnected — start a new session to continue");
      pilotAuto.checked = false;
      refreshControls();
    },
    onBadMessage: (reason) => setStatus(`bad server message: ${reason}`, true),
  });
  setStatus("connecting…");
  refreshControls();
}

function send(req: ActionRequest | PilotRequest): void {
  if (client?.action(req)) refreshControls();
}

// ---------------------------------------------------------------------------
// input
// ---------------------------------------------------------------------------

connectBtn.addEventListener("click", connect);
endBtn.addEventListener("click", () => {
  client?.end();
  pilotAuto.checked = false;
  refreshControls();
});
pilotBtn.addEventListener("click", () => send({ pilot: true }));
pilotAuto.addEventListener("change", maybeAutoPilot);
for (const b of actionButtons) {
  b.addEventListener("click", () =>
    send({
      alpha_deg: Number(b.dataset.alpha),
      d_m: Number(b.dataset.d),
    }),
  );
}

projectionSel.addEventListener("change", () => {
  view.setProjection(projectionSel.value as Projection);
  canvas.classList.toggle("grabbable", view.projection === "perspective");
  render();
});
resetLookBtn.addEventListener("click", () => {
  view.resetLook();
  render();
});

let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("pointerdown", (e) => {
  if (view.projection !== "perspective") return;
  dragging = true;
  lastX = e.clientX;
  lastY = e.clientY;
  canvas.setPointerCapture(e.pointerId);
});
canvas.addEventListener("pointermove", (e) => {
  if (!dragging) return;
  const scale = canvas.width / canvas.getBoundingClientRect().width;
  // content follows the pointer: dragging right turns the view left
  view.look(-(e.clientX - lastX) * scale, (e.clientY - lastY) * scale, canvas.width);
  lastX = e.clientX;
  lastY = e.clientY;
  requestAnimationFrame(render);
});
canvas.addEventListener("pointerup", () => {
  dragging = false;
});
canvas.addEventListener("wheel", (e) => {
  if (view.projection !== "perspective") return;
  e.preventDefault();
  view.zoom(e.deltaY > 0 ? 5 : -5);
  requestAnimationFrame(render);
});

refreshControls();
setStatus("not connected");
