import {
  encodeClientMessage,
  metaSchema,
  parseServerMessage,
  type ClientMessage,
  type Meta,
} from "./protocol.js";
import { SessionState } from "./state.js";

/** The slice of the WebSocket interface the client uses, so tests can
 * substitute an in-memory fake. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;
export type FetchLike = (url: string) => Promise<{ ok: boolean; json(): Promise<unknown> }>;

/** Connection and command layer. Owns the desired-mask intent set; display
 * state only changes when the server echoes it back in a frame. */
export class LiveClient {
  readonly state = new SessionState();
  private sock: SocketLike | null = null;
  private desired = new Set<string>();
  private listeners = new Set<() => void>();

  constructor(
    private readonly socketFactory: SocketFactory,
    private readonly fetchImpl: FetchLike,
  ) {}

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get connected(): boolean {
    return this.state.status === "connected";
  }

  /** Fetch /api/meta, then open the frame socket. The returned promise
   * resolves once the socket is open. */
  async connect(baseUrl: string): Promise<Meta> {
    const url = baseUrl.replace(/\/$/, "");
    this.state.status = "connecting";
    this.notify();

    const res = await this.fetchImpl(`${url}/api/meta`);
    if (!res.ok) {
      this.state.status = "disconnected";
      this.notify();
      throw new Error(`meta request failed against ${url}`);
    }
    const meta = metaSchema.parse(await res.json());
    this.state.applyMeta(meta);
    this.desired = new Set(meta.parts.filter((_, i) => meta.mask[i] === true));

    const wsUrl = url.replace(/^http/, "ws") + "/ws";
    const sock = this.socketFactory(wsUrl);
    this.sock = sock;
    await new Promise<void>((resolve, reject) => {
      sock.onopen = () => {
        this.state.status = "connected";
        this.notify();
        resolve();
      };
      sock.onerror = () => {
        this.state.status = "disconnected";
        this.notify();
        reject(new Error(`socket refused at ${wsUrl}`));
      };
      sock.onclose = () => {
        this.state.status = "disconnected";
        this.notify();
      };
      sock.onmessage = (event) => this.handleMessage(String(event.data));
    });
    return meta;
  }

  disconnect(): void {
    this.sock?.close();
    this.sock = null;
    this.state.status = "disconnected";
    this.notify();
  }

  private handleMessage(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg === null) return; // diagnostic already logged; keep previous frame
    if (msg.type === "frame") {
      this.state.applyFrame(msg);
    } else {
      this.state.applyError(msg.detail);
    }
    this.notify();
  }

  private send(msg: ClientMessage): boolean {
    if (!this.sock || !this.connected) return false;
    this.sock.send(encodeClientMessage(msg));
    return true;
  }

  /** Flip one part in the desired mask and send the full parts list.
   * Repeated toggles each send the complete list, so the server applies
   * last-write-wins. Returns false when disconnected or the mask is fixed. */
  togglePart(part: string): boolean {
    const meta = this.state.meta;
    if (!this.connected || !meta || meta.mask_fixed) return false;
    if (!meta.parts.includes(part)) return false;
    if (this.desired.has(part)) {
      this.desired.delete(part);
    } else {
      this.desired.add(part);
    }
    return this.send({ type: "set_mask", parts: this.desiredParts() });
  }

  /** Desired parts in the server's partition order. */
  desiredParts(): string[] {
    const meta = this.state.meta;
    if (!meta) return [];
    return meta.parts.filter((p) => this.desired.has(p));
  }

  /** Send a goal command; only commands from the server's preset list go
   * out. Returns false (nothing sent) otherwise. */
  sendGoal(command: string): boolean {
    const meta = this.state.meta;
    if (!meta || command === "" || !meta.commands.includes(command)) return false;
    return this.send({ type: "set_goal", command });
  }

  sendTask(task: string, params: Record<string, number> = {}): boolean {
    const meta = this.state.meta;
    if (!meta || !meta.tasks.includes(task)) return false;
    return this.send({ type: "set_task", task, params });
  }

  pause(): boolean {
    return this.send({ type: "pause" });
  }

  reset(): boolean {
    return this.send({ type: "reset" });
  }
}
