/** Presentation state: which projection is shown, where playback stands
 * in the last frame batch, the look direction for the pinhole view, and
 * the trajectory so far. Pure state + math; the DOM layer reads it.
 */

export type Projection = "equirect" | "perspective" | "cubemap";

export interface TrackPoint {
  x: number;
  y: number;
  heading_deg: number;
}

export const MIN_FOV = 30;
export const MAX_FOV = 120;

export class ViewState {
  projection: Projection = "equirect";
  yawDeg = 0;
  pitchDeg = 0;
  fovDeg = 90;

  /** Size of the last frame batch and the index currently displayed. */
  batchSize = 0;
  cursor = -1;

  trajectory: TrackPoint[] = [];

  setProjection(p: Projection): void {
    this.projection = p;
  }

  /** A new batch arrived; nothing from it is on screen yet. */
  startBatch(size: number): void {
    this.batchSize = Math.max(0, size);
    this.cursor = -1;
  }

  /** One frame of the current batch was displayed. */
  advance(): void {
    if (this.cursor < this.batchSize - 1) this.cursor += 1;
  }

  /** Drag by a pixel delta across a canvas ``width`` pixels wide. */
  look(dxPx: number, dyPx: number, width: number): void {
    const degPerPx = this.fovDeg / width;
    this.yawDeg = wrapDeg(this.yawDeg + dxPx * degPerPx);
    this.pitchDeg = clamp(this.pitchDeg + dyPx * degPerPx, -90, 90);
  }

  zoom(deltaDeg: number): void {
    this.fovDeg = clamp(this.fovDeg + deltaDeg, MIN_FOV, MAX_FOV);
  }

  resetLook(): void {
    this.yawDeg = 0;
    this.pitchDeg = 0;
    this.fovDeg = 90;
  }

  recordPose(p: TrackPoint): void {
    this.trajectory.push({ ...p });
  }

  /**
   * Past positions mapped into the current top-down panel: the camera
   * hovers ``heightM`` above the newest pose, image-up along its
   * heading, a ``sizePx`` square covering ±heightM meters of ground.
   * Points behind the sensor's square are still returned; callers may
   * clip. Empty until a pose is recorded.
   */
  bevTrack(heightM: number, sizePx: number): Array<[number, number]> {
    if (this.trajectory.length === 0) return [];
    const cur = this.trajectory[this.trajectory.length - 1];
    const h = cur.heading_deg * (Math.PI / 180);
    const ch = Math.cos(h);
    const sh = Math.sin(h);
    return this.trajectory.map((p) => {
      const vx = p.x - cur.x;
      const vy = p.y - cur.y;
      const fwd = vx * ch + vy * sh;
      const left = -vx * sh + vy * ch;
      return [
        ((-left / heightM + 1) / 2) * sizePx,
        ((-fwd / heightM + 1) / 2) * sizePx,
      ];
    });
  }
}

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, x));
}

/** Wrap to [-180, 180). */
export function wrapDeg(deg: number): number {
  const m = ((deg + 180) % 360 + 360) % 360;
  return m - 180;
}
