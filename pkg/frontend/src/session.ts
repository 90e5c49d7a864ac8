import { ApiClient, CreateSessionRequest, FrameResponse } from "./api.js";
import { ViewStore } from "./viewState.js";
import { PartDescriptor, PartKey, Transform } from "./types.js";

const POLL_WAIT_MS = 25000;
const RETRY_BASE_MS = 500;
const RETRY_MAX_MS = 8000;

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

/** Drives one editing session: mutations go out, frames come back over a
 * long-poll loop. Only frames newer than the latest seen are applied, so a
 * stale response can never clobber a newer mesh. */
export class SessionController {
  sessionId = "";
  resolution = 128;
  onFrame: ((frame: FrameResponse) => void) | null = null;
  private running = false;
  private lastSeen = 0;

  constructor(private api: ApiClient, private store: ViewStore) {}

  async open(req: CreateSessionRequest): Promise<void> {
    const res = await this.api.createSession(req);
    this.sessionId = res.session_id;
    this.lastSeen = 0;
    this.store.setParts(res.parts);
    await this.api.extract(this.sessionId, { resolution: this.resolution });
    this.startPolling();
  }

  async close(): Promise<void> {
    this.running = false;
    if (this.sessionId) await this.api.dropSession(this.sessionId).catch(() => {});
    this.sessionId = "";
  }

  private startPolling(): void {
    if (this.running) return;
    this.running = true;
    void this.pollLoop();
  }

  private async pollLoop(): Promise<void> {
    let backoff = RETRY_BASE_MS;
    while (this.running) {
      try {
        const res = await this.api.meshFrame(this.sessionId, this.lastSeen, POLL_WAIT_MS);
        this.store.setConnection("connected");
        backoff = RETRY_BASE_MS;
        if (res && res.frame.meshVersion > this.lastSeen) {
          this.lastSeen = res.frame.meshVersion;
          this.store.applyFrameVersion(res.frame.meshVersion);
          this.onFrame?.(res);
        }
      } catch {
        if (!this.running) return;
        this.store.setConnection("reconnecting");
        await sleep(backoff);
        backoff = Math.min(backoff * 2, RETRY_MAX_MS);
      }
    }
  }

  /** Re-fetch parts after an out-of-band change (reconnect, replay). */
  async resync(): Promise<void> {
    const res = await this.api.listParts(this.sessionId);
    this.store.setParts(res.parts);
  }

  private afterMutation(parts: PartDescriptor[]): Promise<unknown> {
    this.store.setParts(parts);
    return this.api.extract(this.sessionId, { resolution: this.resolution });
  }

  async applyTransform(keys: PartKey[], transform: Transform): Promise<void> {
    const res = await this.api.transform(this.sessionId, keys, transform);
    await this.afterMutation(res.parts);
  }

  async setEnabled(keys: PartKey[], enabled: boolean): Promise<void> {
    const res = await this.api.toggle(this.sessionId, keys, enabled);
    await this.afterMutation(res.parts);
  }

  async deleteParts(keys: PartKey[]): Promise<void> {
    const res = await this.api.deleteParts(this.sessionId, keys);
    await this.afterMutation(res.parts);
  }

  async mixFrom(otherSession: string, keys: PartKey[]): Promise<void> {
    const res = await this.api.mix(this.sessionId, otherSession, keys);
    await this.afterMutation(res.parts);
  }

  async undo(): Promise<void> {
    const res = await this.api.undo(this.sessionId);
    await this.afterMutation(res.parts);
  }

  async redo(): Promise<void> {
    const res = await this.api.redo(this.sessionId);
    await this.afterMutation(res.parts);
  }

  async interpolateWith(otherSession: string, alpha: number): Promise<void> {
    this.store.setAlpha(alpha);
    await this.api.interpolate(this.sessionId, otherSession, this.store.alpha,
                               { resolution: this.resolution });
  }
}
