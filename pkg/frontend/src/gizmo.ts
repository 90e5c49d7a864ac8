import { GizmoMode, PartKey, Transform } from "./types.js";

function matmul(a: number[][], b: number[][]): number[][] {
  const out = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      for (let k = 0; k < 3; k++) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

function matvec(a: number[][], v: number[]): number[] {
  return [0, 1, 2].map((i) => a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2]);
}

const EYE = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

/** (second ∘ first): apply `first`, then `second` — the same composition
 * order the server uses when stacking a drag onto a part's transform. */
export function composeTransforms(second: Transform, first: Transform): Transform {
  const r2 = second.rotation ?? EYE;
  const r1 = first.rotation ?? EYE;
  const t2 = second.translation ?? [0, 0, 0];
  const t1 = first.translation ?? [0, 0, 0];
  const rt1 = matvec(r2, t1).map((v, i) => second.scale * v + t2[i]);
  return { rotation: matmul(r2, r1), scale: second.scale * first.scale, translation: rt1 };
}

export function rotationAboutAxis(axis: [number, number, number], angle: number): number[][] {
  const n = Math.hypot(...axis);
  const [x, y, z] = axis.map((v) => v / n);
  const c = Math.cos(angle), s = Math.sin(angle), t = 1 - c;
  return [
    [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
    [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
    [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
  ];
}

export interface DragResult {
  keys: PartKey[];
  transform: Transform;
}

/** Accumulates gizmo motion during a drag and emits a single net transform
 * on release. Increments arriving mid-drag fold into the pending transform;
 * a drag with no net motion emits nothing. */
export class DragAccumulator {
  private active = false;
  private keys: PartKey[] = [];
  private pending: Transform = { rotation: null, scale: 1, translation: null };
  private moved = false;

  get isActive(): boolean {
    return this.active;
  }

  /** Transform accumulated so far; drives the optimistic proxy preview. */
  get preview(): Transform {
    return this.pending;
  }

  begin(mode: GizmoMode, keys: PartKey[]): void {
    if (keys.length === 0) throw new Error("drag needs a selection");
    this.active = true;
    this.keys = [...keys];
    this.pending = { rotation: null, scale: 1, translation: null };
    this.moved = false;
  }

  translate(delta: [number, number, number]): void {
    this.push({ rotation: null, scale: 1, translation: [...delta] });
  }

  rotate(axis: [number, number, number], angle: number): void {
    this.push({ rotation: rotationAboutAxis(axis, angle), scale: 1, translation: null });
  }

  scaleBy(factor: number): void {
    this.push({ rotation: null, scale: factor, translation: null });
  }

  private push(step: Transform): void {
    if (!this.active) throw new Error("no active drag");
    this.pending = composeTransforms(step, this.pending);
    this.moved = true;
  }

  /** Finish the drag. Returns the net transform request, or null for a
   * click that never moved. */
  end(): DragResult | null {
    if (!this.active) return null;
    this.active = false;
    if (!this.moved) return null;
    return { keys: this.keys, transform: this.pending };
  }

  cancel(): void {
    this.active = false;
    this.moved = false;
  }
}
