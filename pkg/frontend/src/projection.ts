/** Client-side reprojection of server equirect frames.
 *
 * The server's pixel conventions: a W x H panorama spans longitude
 * [-pi, pi) left to right and latitude [pi/2, -pi/2] top to bottom,
 * with pixel (i, j) sampled at its center (i+0.5, j+0.5). Directions
 * are (cos t cos p, cos t sin p, sin t), z up. Everything here resamples
 * frames the server already rendered — no scene knowledge involved.
 */

export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8ClampedArray;
}

export const FACE_ORDER = [
  "left",
  "front",
  "right",
  "back",
  "up",
  "down",
] as const;
export type FaceId = (typeof FACE_ORDER)[number];

const DEG = Math.PI / 180;

/** Normalized equirect coordinates (both in [0, 1)) of a direction. */
export function dirToUv(x: number, y: number, z: number): [number, number] {
  const n = Math.hypot(x, y, z);
  const theta = Math.asin(Math.min(1, Math.max(-1, z / n)));
  let phi = Math.atan2(y, x);
  if (phi >= Math.PI) phi -= 2 * Math.PI;
  return [(phi + Math.PI) / (2 * Math.PI), (Math.PI / 2 - theta) / Math.PI];
}

/**
 * Per-pixel source coordinates for a pinhole view.
 *
 * Returns a Float32Array of (u, v) pairs, row-major, normalized to the
 * source panorama. ``yawDeg`` looks toward longitude yaw (0 = panorama
 * center), ``pitchDeg`` tilts up, ``fovDeg`` is the horizontal field.
 */
export function perspectiveUvMap(
  outW: number,
  outH: number,
  yawDeg: number,
  pitchDeg: number,
  fovDeg: number,
): Float32Array {
  const yaw = yawDeg * DEG;
  const pitch = pitchDeg * DEG;
  const tanHalf = Math.tan((fovDeg * DEG) / 2);
  const cp = Math.cos(pitch);
  const sp = Math.sin(pitch);
  const cy = Math.cos(yaw);
  const sy = Math.sin(yaw);
  // camera basis: forward at (yaw, pitch), screen-right toward +phi
  const fx = cp * cy, fy = cp * sy, fz = sp;
  const rx = -sy, ry = cy, rz = 0;
  // up = forward x right
  const ux = fy * rz - fz * ry;
  const uy = fz * rx - fx * rz;
  const uz = fx * ry - fy * rx;

  const map = new Float32Array(outW * outH * 2);
  let k = 0;
  for (let j = 0; j < outH; j += 1) {
    const yn = (1 - (2 * (j + 0.5)) / outH) * tanHalf * (outH / outW);
    for (let i = 0; i < outW; i += 1) {
      const xn = ((2 * (i + 0.5)) / outW - 1) * tanHalf;
      const [u, v] = dirToUv(
        fx + xn * rx + yn * ux,
        fy + xn * ry + yn * uy,
        fz + xn * rz + yn * uz,
      );
      map[k++] = u;
      map[k++] = v;
    }
  }
  return map;
}

/** Direction of a cube-face pixel; (a, b) in [-1, 1], b positive downward. */
export function faceDir(face: FaceId, a: number, b: number): [number, number, number] {
  switch (face) {
    case "front":
      return [1, a, -b];
    case "right":
      return [-a, 1, -b];
    case "back":
      return [-1, -a, -b];
    case "left":
      return [a, -1, -b];
    case "up":
      return [b, a, 1];
    case "down":
      return [-b, a, -1];
  }
}

/** Source coordinates for one cube face at ``size`` x ``size``. */
export function faceUvMap(face: FaceId, size: number): Float32Array {
  const map = new Float32Array(size * size * 2);
  let k = 0;
  for (let j = 0; j < size; j += 1) {
    const b = (2 * (j + 0.5)) / size - 1;
    for (let i = 0; i < size; i += 1) {
      const a = (2 * (i + 0.5)) / size - 1;
      const [x, y, z] = faceDir(face, a, b);
      const [u, v] = dirToUv(x, y, z);
      map[k++] = u;
      map[k++] = v;
    }
  }
  return map;
}

/**
 * Bilinear resample of ``src`` through a (u, v) map into ``out``.
 * Longitude wraps; latitude clamps at the poles. Alpha is set opaque.
 */
export function resample(src: RgbaImage, map: Float32Array, out: RgbaImage): void {
  const { width: w, height: h, data: s } = src;
  const d = out.data;
  const n = out.width * out.height;
  for (let p = 0; p < n; p += 1) {
    // continuous pixel coords: value of pixel k lives at center k + 0.5
    const cu = map[2 * p] * w - 0.5;
    const cv = map[2 * p + 1] * h - 0.5;
    let i0 = Math.floor(cu);
    const fu = cu - i0;
    let j0 = Math.floor(cv);
    const fv = cv - j0;
    let j1 = j0 + 1;
    if (j0 < 0) j0 = 0;
    if (j1 < 0) j1 = 0;
    if (j0 > h - 1) j0 = h - 1;
    if (j1 > h - 1) j1 = h - 1;
    i0 = ((i0 % w) + w) % w;
    const i1 = (i0 + 1) % w;
    const o00 = 4 * (j0 * w + i0), o01 = 4 * (j0 * w + i1);
    const o10 = 4 * (j1 * w + i0), o11 = 4 * (j1 * w + i1);
    const w00 = (1 - fu) * (1 - fv), w01 = fu * (1 - fv);
    const w10 = (1 - fu) * fv, w11 = fu * fv;
    const q = 4 * p;
    for (let c = 0; c < 3; c += 1) {
      d[q + c] =
        w00 * s[o00 + c] + w01 * s[o01 + c] + w10 * s[o10 + c] + w11 * s[o11 + c];
    }
    d[q + 3] = 255;
  }
}
