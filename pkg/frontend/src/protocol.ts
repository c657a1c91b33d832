/** Wire protocol v1.
 *
 * Every message, both directions, is one JSON text frame:
 *
 *     {"v": 1, "kind": <string>, "session_id": <string|null>, "payload": {...}}
 *
 * Panorama frames travel inside payloads as base64-encoded PNGs, and all
 * angles on the wire are degrees.
 */

export const PROTOCOL_VERSION = 1;

export class ProtocolError extends Error {}

export interface Pose {
  x: number;
  y: number;
  heading_deg: number;
}

export interface InitRequest {
  seed: number;
  dims: [number, number];
  mode?: "free" | "pilot";
  frames_per_meter?: number;
}

/** Turn left by alpha_deg, then walk d_m meters along the new heading. */
export interface ActionRequest {
  alpha_deg: number;
  d_m: number;
}

/** Ask the server-side pilot to choose and execute one step. */
export interface PilotRequest {
  pilot: true;
}

export interface InitAck {
  seed: number;
  dims: [number, number];
  mode: string;
  frames_per_meter: number;
  frame: string; // base64 PNG of the starting view
  pose: Pose;
}

export interface FrameBatch {
  step: number; // 1-based, strictly increasing
  frames: string[]; // base64 PNGs, in playback order
  action: { alpha_deg: number; d_m: number };
  pilot: boolean;
  pose: Pose;
}

export interface StateMsg {
  step_count: number;
  done: boolean;
}

export interface ErrorMsg {
  message: string;
  done: boolean; // false: session survives; true: session is finished
}

export interface EndAck {
  step_count: number;
}

export type ServerKind = "init" | "frame_batch" | "state" | "error" | "end";

export interface ServerMessage {
  v: number;
  kind: ServerKind;
  session_id: string | null;
  payload: InitAck | FrameBatch | StateMsg | ErrorMsg | EndAck;
}

const SERVER_KINDS: ReadonlySet<string> = new Set([
  "init",
  "frame_batch",
  "state",
  "error",
  "end",
]);

export function encode(
  kind: "init" | "action" | "end",
  payload: InitRequest | ActionRequest | PilotRequest | Record<string, never>,
): string {
  return JSON.stringify({
    v: PROTOCOL_VERSION,
    kind,
    session_id: null,
    payload,
  });
}

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

/** Parse and validate one server frame; throws ProtocolError on junk. */
export function parseServer(text: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new ProtocolError("message is not JSON");
  }
  if (!isRecord(raw)) throw new ProtocolError("message is not an object");
  if (raw.v !== PROTOCOL_VERSION)
    throw new ProtocolError(`unsupported protocol version ${String(raw.v)}`);
  const kind = raw.kind;
  if (typeof kind !== "string" || !SERVER_KINDS.has(kind))
    throw new ProtocolError(`unknown server kind ${String(kind)}`);
  if (!isRecord(raw.payload)) throw new ProtocolError("payload is not an object");
  const sid = raw.session_id;
  if (sid !== null && typeof sid !== "string")
    throw new ProtocolError("session_id must be a string or null");
  const p = raw.payload;
  if (kind === "frame_batch") {
    if (
      typeof p.step !== "number" ||
      !Array.isArray(p.frames) ||
      p.frames.some((f: unknown) => typeof f !== "string")
    )
      throw new ProtocolError("malformed frame_batch payload");
  } else if (kind === "state") {
    if (typeof p.step_count !== "number" || typeof p.done !== "boolean")
      throw new ProtocolError("malformed state payload");
  } else if (kind === "error") {
    if (typeof p.message !== "string" || typeof p.done !== "boolean")
      throw new ProtocolError("malformed error payload");
  } else if (kind === "init") {
    if (typeof p.frame !== "string" || !isRecord(p.pose))
      throw new ProtocolError("malformed init payload");
  }
  return raw as unknown as ServerMessage;
}

export function pngDataUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}
