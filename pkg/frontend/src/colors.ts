/** Deterministic part palette: evenly spaced hues, fixed s/l. Index i
 * always maps to the same color across sessions and reloads. */

export function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const f = (n: number) => {
    const k = (n + h * 12) % 12;
    const a = s * Math.min(l, 1 - l);
    return l - a * Math.max(-1, Math.min(k - 3, 9 - k, 1));
  };
  return [f(0), f(8), f(4)];
}

const GOLDEN = 0.618033988749895;

export function partColor(index: number): [number, number, number] {
  if (index < 0) return [0.62, 0.62, 0.62];
  const h = (index * GOLDEN) % 1;
  return hslToRgb(h, 0.65, 0.55);
}

export const SELECTION_COLOR: [number, number, number] = [1.0, 0.82, 0.25];
export const CHANGED_COLOR: [number, number, number] = [0.95, 0.35, 0.25];
