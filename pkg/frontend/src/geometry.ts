import * as THREE from "three";
import { partColor } from "./colors.js";
import { MeshFrame } from "./meshFrame.js";

/** Build renderable buffers from a decoded frame. Per-vertex colors come
 * from the part id byte when present, flat grey otherwise. */
export function frameToGeometry(frame: MeshFrame): THREE.BufferGeometry {
  const geo = new THREE.BufferGeometry();
  geo.setAttribute("position", new THREE.BufferAttribute(frame.positions, 3));
  geo.setIndex(new THREE.BufferAttribute(frame.indices, 1));

  const n = frame.positions.length / 3;
  const colors = new Float32Array(n * 3);
  for (let i = 0; i < n; i++) {
    const [r, g, b] = partColor(frame.partIds ? frame.partIds[i] : -1);
    colors[i * 3] = r;
    colors[i * 3 + 1] = g;
    colors[i * 3 + 2] = b;
  }
  geo.setAttribute("color", new THREE.BufferAttribute(colors, 3));
  geo.computeVertexNormals();
  return geo;
}

/** FNV-1a over the raw vertex+index bytes; stable geometry fingerprint for
 * change detection and undo verification. */
export function geometryHash(frame: MeshFrame): string {
  let h = 0x811c9dc5;
  const mix = (bytes: Uint8Array) => {
    for (let i = 0; i < bytes.length; i++) {
      h ^= bytes[i];
      h = Math.imul(h, 0x01000193);
    }
  };
  mix(new Uint8Array(frame.positions.buffer, frame.positions.byteOffset,
                     frame.positions.byteLength));
  mix(new Uint8Array(frame.indices.buffer, frame.indices.byteOffset,
                     frame.indices.byteLength));
  return (h >>> 0).toString(16).padStart(8, "0");
}
