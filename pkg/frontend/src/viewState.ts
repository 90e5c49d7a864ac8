import { GizmoMode, PartDescriptor, PartKey, keyId } from "./types.js";

export type ConnectionStatus = "connected" | "reconnecting" | "offline";

export interface CameraPose {
  position: [number, number, number];
  target: [number, number, number];
}

/** Client-side view state. Invariants: selection stays a subset of the
 * current part keys, alpha stays in [0, 1], and swapping in a new mesh
 * version never touches the camera. */
export class ViewStore {
  camera: CameraPose = { position: [2.2, 1.6, 2.2], target: [0, 0, 0] };
  gizmoMode: GizmoMode = "translate";
  connection: ConnectionStatus = "connected";
  meshVersion = 0;
  alpha = 0;
  private parts = new Map<string, PartDescriptor>();
  private selected = new Set<string>();
  private listeners = new Set<() => void>();

  onChange(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get partList(): PartDescriptor[] {
    return [...this.parts.values()];
  }

  get selection(): PartKey[] {
    return [...this.selected].map((id) => this.parts.get(id)!.key);
  }

  isSelected(key: PartKey): boolean {
    return this.selected.has(keyId(key));
  }

  setParts(parts: PartDescriptor[]): void {
    this.parts = new Map(parts.map((p) => [keyId(p.key), p]));
    for (const id of [...this.selected]) {
      if (!this.parts.has(id)) this.selected.delete(id);
    }
    this.emit();
  }

  select(key: PartKey, additive = false): void {
    const id = keyId(key);
    if (!this.parts.has(id)) return;
    if (!additive) this.selected.clear();
    this.selected.add(id);
    this.emit();
  }

  clearSelection(): void {
    this.selected.clear();
    this.emit();
  }

  setGizmoMode(mode: GizmoMode): void {
    this.gizmoMode = mode;
    this.emit();
  }

  setAlpha(alpha: number): void {
    this.alpha = Math.min(1, Math.max(0, alpha));
    this.emit();
  }

  setConnection(status: ConnectionStatus): void {
    this.connection = status;
    this.emit();
  }

  /** A new frame arrived: bump the version, leave the camera alone. */
  applyFrameVersion(version: number): void {
    this.meshVersion = version;
    this.emit();
  }
}
