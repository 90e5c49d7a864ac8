import { describe, expect, it, vi } from "vitest";
import { ApiClient, FrameResponse } from "../src/api.js";
import { SessionController } from "../src/session.js";
import { PartDescriptor } from "../src/types.js";
import { ViewStore } from "../src/viewState.js";

function part(index: number): PartDescriptor {
  return {
    key: ["a", index],
    enabled: true,
    transform: { rotation: [[1, 0, 0], [0, 1, 0], [0, 0, 1]], scale: 1,
                 translation: [0, 0, 0] },
    gaussian: { pi: 0.5, mu: [0, 0, 0], lam: [1, 1, 1],
                axes: [[1, 0, 0], [0, 1, 0], [0, 0, 1]] },
  };
}

function frameResponse(version: number): FrameResponse {
  return {
    frame: { meshVersion: version, vertexCount: 0, faceCount: 0,
             positions: new Float32Array(0), indices: new Uint32Array(0), partIds: null },
    partKeys: [["a", 0]],
  };
}

const PARKED = new Promise<FrameResponse | null>(() => {});

function mockApi(frames: Array<FrameResponse | Error>) {
  const queue = [...frames];
  return {
    createSession: vi.fn(async () => ({ session_id: "s1", parts: [part(0), part(1)] })),
    extract: vi.fn(async () => ({ mesh_version: 1, queued: true })),
    meshFrame: vi.fn((): Promise<FrameResponse | null> => {
      const next = queue.shift();
      if (next === undefined) return PARKED;
      if (next instanceof Error) return Promise.reject(next);
      return Promise.resolve(next);
    }),
    transform: vi.fn(async () => ({ ok: true, parts: [part(0)] })),
    toggle: vi.fn(async () => ({ ok: true, parts: [part(0), part(1)] })),
    undo: vi.fn(async () => ({ ok: true, parts: [part(0), part(1)] })),
    listParts: vi.fn(async () => ({ parts: [part(0), part(1)] })),
    dropSession: vi.fn(async () => ({ ok: true })),
  };
}

async function until(cond: () => boolean, ms = 3000): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > ms) throw new Error("condition never held");
    await new Promise((r) => setTimeout(r, 5));
  }
}

describe("SessionController", () => {
  it("opens a session, loads parts, and requests a first extraction", async () => {
    const api = mockApi([frameResponse(1)]);
    const store = new ViewStore();
    const ctl = new SessionController(api as unknown as ApiClient, store);
    const seen: number[] = [];
    ctl.onFrame = (res) => seen.push(res.frame.meshVersion);

    await ctl.open({ kind: "seed", seed: 3 });
    expect(api.createSession).toHaveBeenCalledOnce();
    expect(store.partList.length).toBe(2);
    expect(api.extract).toHaveBeenCalledWith("s1", { resolution: 128 });

    await until(() => seen.length === 1);
    expect(seen).toEqual([1]);
    expect(store.meshVersion).toBe(1);
    await ctl.close();
  });

  it("ignores frames older than the newest seen", async () => {
    const api = mockApi([frameResponse(5), frameResponse(3)]);
    const store = new ViewStore();
    const ctl = new SessionController(api as unknown as ApiClient, store);
    const seen: number[] = [];
    ctl.onFrame = (res) => seen.push(res.frame.meshVersion);

    await ctl.open({ kind: "seed", seed: 3 });
    await until(() => api.meshFrame.mock.calls.length >= 3);
    expect(seen).toEqual([5]);
    expect(store.meshVersion).toBe(5);
    await ctl.close();
  });

  it("applies mutations and re-extracts", async () => {
    const api = mockApi([]);
    const store = new ViewStore();
    const ctl = new SessionController(api as unknown as ApiClient, store);
    await ctl.open({ kind: "seed", seed: 3 });

    await ctl.applyTransform([["a", 0]], { rotation: null, scale: 1,
                                           translation: [0.2, 0, 0] });
    expect(api.transform).toHaveBeenCalledOnce();
    expect(store.partList.length).toBe(1);
    expect(api.extract).toHaveBeenCalledTimes(2);

    await ctl.undo();
    expect(store.partList.length).toBe(2);
    expect(api.extract).toHaveBeenCalledTimes(3);
    await ctl.close();
  });

  it("marks the connection and recovers after a poll failure", async () => {
    const api = mockApi([new Error("boom"), frameResponse(1)]);
    const store = new ViewStore();
    const ctl = new SessionController(api as unknown as ApiClient, store);
    const status: string[] = [];
    store.onChange(() => status.push(store.connection));

    await ctl.open({ kind: "seed", seed: 3 });
    await until(() => store.meshVersion === 1, 5000);
    expect(status).toContain("reconnecting");
    expect(store.connection).toBe("connected");
    await ctl.close();
  });

  it("drops the server session on close", async () => {
    const api = mockApi([]);
    const store = new ViewStore();
    const ctl = new SessionController(api as unknown as ApiClient, store);
    await ctl.open({ kind: "seed", seed: 3 });
    await ctl.close();
    expect(api.dropSession).toHaveBeenCalledWith("s1");
  });
});
