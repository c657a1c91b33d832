/** Session client: owns one WebSocket, enforces the protocol's turn
 * discipline (at most one request in flight), and surfaces server
 * messages as typed callbacks.
 *
 * The client never invents image data: every frame handed to
 * ``onBatch``/``onInit`` arrived verbatim from the server.
 */

import {
  ActionRequest,
  EndAck,
  ErrorMsg,
  FrameBatch,
  InitAck,
  InitRequest,
  PilotRequest,
  ServerMessage,
  StateMsg,
  encode,
  parseServer,
} from "./protocol.js";

/** The slice of the browser WebSocket the client uses; tests supply fakes. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
}

export interface ClientEvents {
  onInit?: (ack: InitAck, sessionId: string) => void;
  onBatch?: (batch: FrameBatch) => void;
  onState?: (state: StateMsg) => void;
  onError?: (err: ErrorMsg) => void;
  onEnd?: (ack: EndAck) => void;
  onClose?: () => void;
  /** A locally detected protocol violation (unparseable server frame). */
  onBadMessage?: (reason: string) => void;
}

export class SessionClient {
  private socket: SocketLike;
  private events: ClientEvents;

  sessionId: string | null = null;
  /** Last step count reported by a server ``state`` message. */
  stepCount = 0;
  /** True while a request is awaiting its reply. */
  busy = false;
  /** True once the session cannot take further actions. */
  done = false;

  constructor(socket: SocketLike, events: ClientEvents = {}) {
    this.socket = socket;
    this.events = events;
    socket.onmessage = (ev) => this.handle(String(ev.data));
    socket.onclose = () => {
      this.done = true;
      this.events.onClose?.();
    };
  }

  /** Request a new session. Returns false if one is already in flight. */
  init(req: InitRequest): boolean {
    if (this.busy || this.sessionId !== null) return false;
    this.busy = true;
    this.socket.send(encode("init", req));
    return true;
  }

  /**
   * Send one action (manual or pilot). Refused — returning false, with
   * nothing sent — while another request is in flight, before init, or
   * after the session finished.
   */
  action(req: ActionRequest | PilotRequest): boolean {
    if (this.busy || this.done || this.sessionId === null) return false;
    this.busy = true;
    this.socket.send(encode("action", req));
    return true;
  }

  end(): boolean {
    if (this.sessionId === null || this.done) return false;
    this.socket.send(encode("end", {}));
    return true;
  }

  exportUrl(base = ""): string {
    return `${base}/sessions/${this.sessionId}/export`;
  }

  bevUrl(size: number, base = ""): string {
    // cache-buster: the pose moves while the URL otherwise stays the same
    return `${base}/sessions/${this.sessionId}/bev?size=${size}&t=${Date.now()}`;
  }

  private handle(text: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServer(text);
    } catch (e) {
      this.events.onBadMessage?.(e instanceof Error ? e.message : String(e));
      return;
    }
    switch (msg.kind) {
      case "init":
        this.sessionId = msg.session_id;
        this.busy = false;
        this.events.onInit?.(msg.payload as InitAck, msg.session_id ?? "");
        break;
      case "frame_batch":
        // busy stays set: the matching ``state`` message closes the turn
        this.events.onBatch?.(msg.payload as FrameBatch);
        break;
      case "state": {
        const state = msg.payload as StateMsg;
        this.stepCount = state.step_count;
        this.busy = false;
        if (state.done) this.done = true;
        this.events.onState?.(state);
        break;
      }
      case "error": {
        const err = msg.payload as ErrorMsg;
        this.busy = false;
        if (err.done) this.done = true;
        this.events.onError?.(err);
        break;
      }
      case "end":
        this.done = true;
        this.busy = false;
        this.events.onEnd?.(msg.payload as EndAck);
        break;
    }
  }
}
