export type PartKey = readonly [source: string, index: number];

/** Stable string form used for set membership and legend lookups. */
export function keyId(key: PartKey): string {
  return `${key[0]}:${key[1]}`;
}

export function parseKeyId(id: string): PartKey {
  const sep = id.lastIndexOf(":");
  return [id.slice(0, sep), Number(id.slice(sep + 1))];
}

export interface Transform {
  rotation: number[][] | null;
  scale: number;
  translation: number[] | null;
}

export const IDENTITY: Transform = { rotation: null, scale: 1.0, translation: null };

export interface GaussianDescriptor {
  pi: number;
  mu: number[];          // (3,)
  lam: number[];         // (3,) principal variances
  axes: number[][];      // (3,3) rows are the principal directions
}

export interface PartDescriptor {
  key: PartKey;
  enabled: boolean;
  transform: { rotation: number[][]; scale: number; translation: number[] };
  gaussian: GaussianDescriptor;
}

export interface SessionInfo {
  session_id: string;
  parts: PartDescriptor[];
  mesh_version: number;
  completed_version: number;
  dirty: boolean;
  undo_depth: number;
  redo_depth: number;
}

export type GizmoMode = "translate" | "rotate" | "scale";
