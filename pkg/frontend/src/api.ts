import { decodeMeshFrame, MeshFrame } from "./meshFrame.js";
import { PartDescriptor, PartKey, SessionInfo, Transform } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface CreateSessionRequest {
  kind: "seed" | "train_shape" | "obj" | "partset";
  seed?: number;
  index?: number;
  obj_text?: string;
  partset_path?: string;
  source?: string;
}

export interface ExtractOptions {
  resolution?: number;
  method?: "octree" | "dense";
}

export interface FrameResponse {
  frame: MeshFrame;
  partKeys: PartKey[];
}

let requestCounter = 0;

function freshRequestId(): string {
  requestCounter += 1;
  const rand = Math.random().toString(36).slice(2, 10);
  return `ui-${Date.now()}-${requestCounter}-${rand}`;
}

/** Thin typed client over the editing service. Every mutation carries a
 * request id so a retried call replays instead of double-applying. */
export class ApiClient {
  constructor(private baseUrl: string, private token?: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private headers(json = true): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["Content-Type"] = "application/json";
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const err = await res.json();
        detail = typeof err.detail === "string" ? err.detail : JSON.stringify(err.detail);
      } catch { /* non-JSON error body */ }
      throw new ApiError(res.status, detail);
    }
    return res.json() as Promise<T>;
  }

  health(): Promise<{ ok: boolean; sessions: number }> {
    return this.call("GET", "/healthz");
  }

  createSession(req: CreateSessionRequest):
      Promise<{ session_id: string; parts: PartDescriptor[] }> {
    return this.call("POST", "/api/sessions", req);
  }

  sessionState(sid: string): Promise<SessionInfo> {
    return this.call("GET", `/api/sessions/${sid}`);
  }

  listParts(sid: string): Promise<{ parts: PartDescriptor[] }> {
    return this.call("GET", `/api/sessions/${sid}/parts`);
  }

  dropSession(sid: string): Promise<{ ok: boolean }> {
    return this.call("DELETE", `/api/sessions/${sid}`);
  }

  transform(sid: string, keys: PartKey[], transform: Transform, requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/transform`,
      { request_id: requestId ?? freshRequestId(), part_keys: keys, transform });
  }

  toggle(sid: string, keys: PartKey[], enabled: boolean, requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/toggle`,
      { request_id: requestId ?? freshRequestId(), part_keys: keys, enabled });
  }

  deleteParts(sid: string, keys: PartKey[], requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/delete`,
      { request_id: requestId ?? freshRequestId(), part_keys: keys });
  }

  mix(sid: string, fromSession: string, keys: PartKey[], requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/mix`,
      { request_id: requestId ?? freshRequestId(), part_keys: keys,
        from_session: fromSession });
  }

  undo(sid: string, requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/undo`, { request_id: requestId ?? freshRequestId() });
  }

  redo(sid: string, requestId?: string) {
    return this.call<{ ok: boolean; parts: PartDescriptor[] }>(
      "POST", `/api/sessions/${sid}/redo`, { request_id: requestId ?? freshRequestId() });
  }

  extract(sid: string, opts: ExtractOptions = {}, requestId?: string) {
    return this.call<{ mesh_version: number; queued: boolean }>(
      "POST", `/api/sessions/${sid}/extract`,
      { request_id: requestId ?? freshRequestId(),
        resolution: opts.resolution ?? 128, method: opts.method ?? "octree" });
  }

  interpolate(sid: string, withSession: string, alpha: number,
              opts: ExtractOptions = {}, requestId?: string) {
    return this.call<{ mesh_version: number; queued: boolean;
                       keys: PartKey[]; changed_keys: PartKey[] }>(
      "POST", `/api/sessions/${sid}/interpolate`,
      { request_id: requestId ?? freshRequestId(), with_session: withSession,
        alpha, resolution: opts.resolution ?? 128, method: opts.method ?? "octree" });
  }

  /** Long-poll for a frame newer than `after`. Resolves null when nothing
   * newer arrived within the window (HTTP 204). */
  async meshFrame(sid: string, after: number, waitMs = 0): Promise<FrameResponse | null> {
    const res = await fetch(
      `${this.baseUrl}/api/sessions/${sid}/mesh?after=${after}&wait_ms=${waitMs}`,
      { headers: this.headers(false) });
    if (res.status === 204) return null;
    if (!res.ok) throw new ApiError(res.status, res.statusText);
    const keysHeader = res.headers.get("X-Part-Keys") ?? "";
    const partKeys: PartKey[] = keysHeader === "" ? [] :
      keysHeader.split(";").map((tag) => {
        const sep = tag.lastIndexOf(":");
        return [tag.slice(0, sep), Number(tag.slice(sep + 1))] as PartKey;
      });
    const frame = decodeMeshFrame(await res.arrayBuffer());
    return { frame, partKeys };
  }
}
