import * as THREE from "three";
import { PartDescriptor } from "./types.js";

/** Mahalanobis radius of the rendered iso-ellipsoid. */
export const ELLIPSOID_K = 2.0;

const EYE = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

/** Local->world matrix mapping the unit sphere onto the part's gaussian
 * iso-surface at Mahalanobis radius k, with the user transform applied.
 *
 * axes rows are the principal directions (Sigma = A^T diag(lam) A), so the
 * sphere maps through columns axes_i * sqrt(lam_i) * k, then x -> s R x + t.
 */
export function ellipsoidMatrix(part: PartDescriptor, k = ELLIPSOID_K): THREE.Matrix4 {
  const { mu, lam, axes } = part.gaussian;
  const r = part.transform.rotation ?? EYE;
  const s = part.transform.scale;
  const t = part.transform.translation ?? [0, 0, 0];

  // b[i][j] = (axes^T diag(sqrt(lam) k))[i][j] = axes[j][i] * sqrt(lam[j]) * k
  const b = [0, 1, 2].map((i) =>
    [0, 1, 2].map((j) => axes[j][i] * Math.sqrt(Math.max(lam[j], 0)) * k));
  const lin = [0, 1, 2].map((i) =>
    [0, 1, 2].map((j) => s * (r[i][0] * b[0][j] + r[i][1] * b[1][j] + r[i][2] * b[2][j])));
  const c = [0, 1, 2].map((i) =>
    s * (r[i][0] * mu[0] + r[i][1] * mu[1] + r[i][2] * mu[2]) + t[i]);

  const m = new THREE.Matrix4();
  m.set(
    lin[0][0], lin[0][1], lin[0][2], c[0],
    lin[1][0], lin[1][1], lin[1][2], c[1],
    lin[2][0], lin[2][1], lin[2][2], c[2],
    0, 0, 0, 1,
  );
  return m;
}

/** World-space center of a part's gaussian under its current transform. */
export function partCenter(part: PartDescriptor): [number, number, number] {
  const { mu } = part.gaussian;
  const r = part.transform.rotation ?? EYE;
  const s = part.transform.scale;
  const t = part.transform.translation ?? [0, 0, 0];
  return [0, 1, 2].map((i) =>
    s * (r[i][0] * mu[0] + r[i][1] * mu[1] + r[i][2] * mu[2]) + t[i],
  ) as [number, number, number];
}

/** Part id under a raycast hit: majority vote over the face's corners.
 * Returns -1 when ids are missing or the face is out of range. */
export function pickPartId(
  faceIndex: number,
  indices: Uint32Array,
  partIds: Uint8Array | null,
): number {
  if (!partIds || faceIndex < 0 || faceIndex * 3 + 2 >= indices.length) return -1;
  const ids = [0, 1, 2].map((c) => partIds[indices[faceIndex * 3 + c]]);
  if (ids[0] === ids[1] || ids[0] === ids[2]) return ids[0];
  if (ids[1] === ids[2]) return ids[1];
  return ids[0];
}
