/** Binary mesh frame codec.
 *
 * Layout (little endian): magic "PGMF", uint16 format version, uint16 flags
 * (bit 0 = per-vertex part ids present), uint32 mesh version, uint32 vertex
 * count, uint32 face count; then float32 positions (3 per vertex), uint32
 * triangle indices (3 per face), and optionally one uint8 part id per vertex.
 */

export const FRAME_MAGIC = "PGMF";
export const FRAME_VERSION = 1;
export const FRAME_HEADER_BYTES = 20;

export interface MeshFrame {
  meshVersion: number;
  vertexCount: number;
  faceCount: number;
  positions: Float32Array;
  indices: Uint32Array;
  partIds: Uint8Array | null;
}

export class FrameError extends Error {}

export function decodeMeshFrame(buf: ArrayBuffer): MeshFrame {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new FrameError(`frame too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1),
                                    view.getUint8(2), view.getUint8(3));
  if (magic !== FRAME_MAGIC) throw new FrameError(`bad magic ${magic}`);
  const version = view.getUint16(4, true);
  if (version !== FRAME_VERSION) throw new FrameError(`unsupported frame version ${version}`);
  const flags = view.getUint16(6, true);
  const meshVersion = view.getUint32(8, true);
  const vertexCount = view.getUint32(12, true);
  const faceCount = view.getUint32(16, true);
  const hasIds = (flags & 1) !== 0;

  let offset = FRAME_HEADER_BYTES;
  const need = offset + vertexCount * 12 + faceCount * 12 + (hasIds ? vertexCount : 0);
  if (buf.byteLength < need) {
    throw new FrameError(`truncated frame: need ${need}, got ${buf.byteLength}`);
  }
  const positions = new Float32Array(buf.slice(offset, offset + vertexCount * 12));
  offset += vertexCount * 12;
  const indices = new Uint32Array(buf.slice(offset, offset + faceCount * 12));
  offset += faceCount * 12;
  const partIds = hasIds ? new Uint8Array(buf.slice(offset, offset + vertexCount)) : null;

  for (let i = 0; i < indices.length; i++) {
    if (indices[i] >= vertexCount) {
      throw new FrameError(`face index ${indices[i]} out of range (${vertexCount} vertices)`);
    }
  }
  return { meshVersion, vertexCount, faceCount, positions, indices, partIds };
}

/** Inverse of decodeMeshFrame; mirrors the server-side writer. */
export function encodeMeshFrame(frame: MeshFrame): ArrayBuffer {
  const hasIds = frame.partIds !== null;
  const size = FRAME_HEADER_BYTES + frame.vertexCount * 12 + frame.faceCount * 12
    + (hasIds ? frame.vertexCount : 0);
  const buf = new ArrayBuffer(size);
  const view = new DataView(buf);
  for (let i = 0; i < 4; i++) view.setUint8(i, FRAME_MAGIC.charCodeAt(i));
  view.setUint16(4, FRAME_VERSION, true);
  view.setUint16(6, hasIds ? 1 : 0, true);
  view.setUint32(8, frame.meshVersion, true);
  view.setUint32(12, frame.vertexCount, true);
  view.setUint32(16, frame.faceCount, true);
  new Float32Array(buf, FRAME_HEADER_BYTES, frame.vertexCount * 3).set(frame.positions);
  let offset = FRAME_HEADER_BYTES + frame.vertexCount * 12;
  new Uint32Array(buf, offset, frame.faceCount * 3).set(frame.indices);
  offset += frame.faceCount * 12;
  if (hasIds) new Uint8Array(buf, offset, frame.vertexCount).set(frame.partIds!);
  return buf;
}
