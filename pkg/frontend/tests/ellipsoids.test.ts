import * as THREE from "three";
import { describe, expect, it } from "vitest";
import { ellipsoidMatrix, partCenter, pickPartId } from "../src/ellipsoids.js";
import { PartDescriptor } from "../src/types.js";

const EYE = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

function makePart(over: Partial<{
  mu: number[]; lam: number[]; axes: number[][];
  rotation: number[][]; scale: number; translation: number[];
}> = {}): PartDescriptor {
  return {
    key: ["a", 0],
    enabled: true,
    transform: { rotation: over.rotation ?? EYE, scale: over.scale ?? 1,
                 translation: over.translation ?? [0, 0, 0] },
    gaussian: { pi: 1, mu: over.mu ?? [0, 0, 0], lam: over.lam ?? [1, 1, 1],
                axes: over.axes ?? EYE },
  };
}

function apply(m: THREE.Matrix4, v: [number, number, number]): number[] {
  return new THREE.Vector3(...v).applyMatrix4(m).toArray();
}

function expectClose(got: number[], want: number[], tol = 1e-9): void {
  for (let i = 0; i < want.length; i++) {
    expect(Math.abs(got[i] - want[i])).toBeLessThanOrEqual(tol);
  }
}

const ROT_Z90 = [[0, -1, 0], [1, 0, 0], [0, 0, 1]];

describe("ellipsoidMatrix", () => {
  it("scales sphere axes by k*sqrt(lam) for an axis-aligned gaussian", () => {
    const m = ellipsoidMatrix(makePart({ lam: [4, 1, 0.25], mu: [0.1, 0.2, 0.3] }), 2);
    expectClose(apply(m, [1, 0, 0]), [4.1, 0.2, 0.3]);
    expectClose(apply(m, [0, 1, 0]), [0.1, 2.2, 0.3]);
    expectClose(apply(m, [0, 0, 1]), [0.1, 0.2, 1.3]);
  });

  it("reads axes rows as principal directions", () => {
    // first principal direction +y with variance 4: unit x of the sphere
    // must land 2*sqrt(4) = 4 along y (k = 2)
    const axes = [[0, 1, 0], [0, 0, 1], [1, 0, 0]];
    const m = ellipsoidMatrix(makePart({ axes, lam: [4, 1, 1] }), 2);
    expectClose(apply(m, [1, 0, 0]), [0, 4, 0]);
  });

  it("matches pushing the gaussian through the transform first", () => {
    // applying (s, R, t) to the part must equal building the ellipsoid from
    // the transformed parameters mu' = sR mu + t, lam' = s^2 lam, axes' = A R^T
    const axes = [[0, 1, 0], [0, 0, 1], [1, 0, 0]];
    const lam = [4, 1, 0.25];
    const mu = [0.2, -0.1, 0.4];
    const s = 1.5, t = [0.3, 0.1, -0.2], r = ROT_Z90;
    const direct = ellipsoidMatrix(makePart({ mu, lam, axes, rotation: r, scale: s,
                                              translation: t }), 2);

    const muT = [0, 1, 2].map((i) =>
      s * (r[i][0] * mu[0] + r[i][1] * mu[1] + r[i][2] * mu[2]) + t[i]);
    const lamT = lam.map((v) => v * s * s);
    const axesT = axes.map((row) =>
      [0, 1, 2].map((j) => row[0] * r[j][0] + row[1] * r[j][1] + row[2] * r[j][2]));
    const viaParams = ellipsoidMatrix(makePart({ mu: muT, lam: lamT, axes: axesT }), 2);

    expectClose([...direct.elements], [...viaParams.elements], 1e-9);
  });

  it("is affine in the k radius", () => {
    const p = makePart({ lam: [2, 3, 4], mu: [1, 2, 3] });
    const m1 = ellipsoidMatrix(p, 1);
    const m2 = ellipsoidMatrix(p, 2);
    // linear block doubles, translation column stays
    expect(m2.elements[0]).toBeCloseTo(2 * m1.elements[0], 9);
    expect(m2.elements[12]).toBeCloseTo(m1.elements[12], 9);
    expect(m2.elements[13]).toBeCloseTo(m1.elements[13], 9);
  });
});

describe("partCenter", () => {
  it("applies the user transform to mu", () => {
    const c = partCenter(makePart({ mu: [1, 0, 0], rotation: ROT_Z90, scale: 2,
                                    translation: [0, 0, 1] }));
    expectClose([...c], [0, 2, 1]);
  });
});

describe("pickPartId", () => {
  const indices = new Uint32Array([0, 1, 2, 2, 3, 4]);

  it("takes the majority id of the face corners", () => {
    const ids = new Uint8Array([3, 3, 5, 5, 5, 0]);
    expect(pickPartId(0, indices, ids)).toBe(3);
    expect(pickPartId(1, indices, ids)).toBe(5);
  });

  it("falls back to the first corner on a three-way tie", () => {
    const ids = new Uint8Array([7, 1, 2, 0, 0]);
    expect(pickPartId(0, indices, ids)).toBe(7);
  });

  it("returns -1 for missing ids or bad faces", () => {
    expect(pickPartId(0, indices, null)).toBe(-1);
    expect(pickPartId(2, indices, new Uint8Array(5))).toBe(-1);
    expect(pickPartId(-1, indices, new Uint8Array(5))).toBe(-1);
  });
});
