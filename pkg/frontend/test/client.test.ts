import { describe, expect, it, vi } from "vitest";
import { LiveClient, type SocketLike } from "../src/client.js";
import { makeFrame, makeMeta } from "./fixtures.js";
import type { Meta } from "../src/protocol.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  receive(message: unknown): void {
    const data = typeof message === "string" ? message : JSON.stringify(message);
    this.onmessage?.({ data });
  }

  lastSent(): unknown {
    return JSON.parse(this.sent[this.sent.length - 1] ?? "null");
  }
}

async function connected(meta: Meta = makeMeta()) {
  let sock!: FakeSocket;
  const client = new LiveClient(
    () => {
      sock = new FakeSocket();
      queueMicrotask(() => sock.onopen?.());
      return sock;
    },
    async () => ({ ok: true, json: async () => meta }),
  );
  await client.connect("http://testhost");
  return { client, sock };
}

describe("LiveClient", () => {
  it("fetches meta, then opens the socket", async () => {
    const { client } = await connected();
    expect(client.connected).toBe(true);
    expect(client.state.meta?.parts).toEqual(["Trunk", "Arms"]);
    expect(client.state.mask).toEqual([false, false]);
  });

  it("refuses commands while disconnected", () => {
    const client = new LiveClient(
      () => {
        throw new Error("should not open a socket");
      },
      async () => ({ ok: true, json: async () => makeMeta() }),
    );
    expect(client.togglePart("Arms")).toBe(false);
    expect(client.sendGoal("rest")).toBe(false);
    expect(client.pause()).toBe(false);
  });

  it("sends the full desired parts list on toggle, without optimistic state", async () => {
    const { client, sock } = await connected();
    expect(client.togglePart("Arms")).toBe(true);
    expect(sock.lastSent()).toEqual({ type: "set_mask", parts: ["Arms"] });
    // display mask is still the acknowledged one
    expect(client.state.mask).toEqual([false, false]);

    sock.receive(makeFrame(4, { mask: [false, true] }));
    expect(client.state.mask).toEqual([false, true]);
    expect(client.state.maskedParts()).toEqual(["Arms"]);
  });

  it("resolves a rapid double-toggle to the empty list", async () => {
    const { client, sock } = await connected();
    client.togglePart("Arms");
    client.togglePart("Arms");
    expect(sock.sent).toHaveLength(2);
    expect(sock.lastSent()).toEqual({ type: "set_mask", parts: [] });
  });

  it("keeps the partition order in multi-part masks", async () => {
    const { client, sock } = await connected();
    client.togglePart("Arms");
    client.togglePart("Trunk");
    expect(sock.lastSent()).toEqual({ type: "set_mask", parts: ["Trunk", "Arms"] });
  });

  it("rejects toggles on unknown parts and fixed masks", async () => {
    const fixed = await connected(makeMeta({ mask_fixed: true, mask: [false, true] }));
    expect(fixed.client.togglePart("Arms")).toBe(false);
    expect(fixed.sock.sent).toHaveLength(0);

    const { client, sock } = await connected();
    expect(client.togglePart("Wings")).toBe(false);
    expect(sock.sent).toHaveLength(0);
  });

  it("only sends goals from the server preset list", async () => {
    const { client, sock } = await connected();
    expect(client.sendGoal("moonwalk")).toBe(false);
    expect(client.sendGoal("")).toBe(false);
    expect(sock.sent).toHaveLength(0);
    expect(client.sendGoal("raise_arms")).toBe(true);
    expect(sock.lastSent()).toEqual({ type: "set_goal", command: "raise_arms" });
  });

  it("drops malformed inbound messages and keeps the previous frame", async () => {
    const { client, sock } = await connected();
    const warn = vi.spyOn(console, "warn").mockImplementation(() => {});
    try {
      sock.receive(makeFrame(9));
      sock.receive("{definitely not json");
      sock.receive({ type: "frame", t: "soon" });
      expect(warn).toHaveBeenCalledTimes(2);
    } finally {
      warn.mockRestore();
    }
    expect(client.state.frame?.t).toBe(9);
    expect(client.state.lastError).toBeNull();
  });

  it("surfaces server errors alongside the last good frame", async () => {
    const { client, sock } = await connected();
    sock.receive(makeFrame(2));
    sock.receive({ type: "error", detail: "unknown group 'Wings'" });
    expect(client.state.lastError).toContain("Wings");
    expect(client.state.frame?.t).toBe(2);
  });

  it("reports disconnection and blocks further sends", async () => {
    const { client, sock } = await connected();
    sock.close();
    expect(client.state.status).toBe("disconnected");
    expect(client.togglePart("Arms")).toBe(false);
  });
});
