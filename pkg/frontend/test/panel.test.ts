// @vitest-environment jsdom
import { describe, expect, it } from "vitest";
import { LiveClient, type SocketLike } from "../src/client.js";
import { ControlPanel } from "../src/panel.js";
import { makeFrame, makeMeta } from "./fixtures.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.onclose?.();
  }

  receive(message: unknown): void {
    this.onmessage?.({ data: JSON.stringify(message) });
  }
}

async function mountPanel() {
  let sock!: FakeSocket;
  const client = new LiveClient(
    () => {
      sock = new FakeSocket();
      queueMicrotask(() => sock.onopen?.());
      return sock;
    },
    async () => ({ ok: true, json: async () => makeMeta() }),
  );
  const root = document.createElement("main");
  document.body.appendChild(root);
  const panel = new ControlPanel(root, client);
  await client.connect("http://testhost");
  return { client, sock, root, panel };
}

describe("ControlPanel", () => {
  it("builds one toggle per part and fills the goal presets", async () => {
    const { root } = await mountPanel();
    const toggles = root.querySelectorAll<HTMLButtonElement>(".mask-toggle");
    expect([...toggles].map((b) => b.textContent)).toEqual(["Trunk", "Arms"]);
    const options = root.querySelectorAll<HTMLOptionElement>(".goal-select option");
    expect([...options].map((o) => o.value)).toEqual(["rest", "raise_arms"]);
  });

  it("shows masked state only after the server echoes it", async () => {
    const { root, sock } = await mountPanel();
    const toggle = root.querySelector<HTMLButtonElement>('[data-part="Arms"]')!;
    toggle.click();
    expect(JSON.parse(sock.sent[0]!)).toEqual({ type: "set_mask", parts: ["Arms"] });
    expect(toggle.classList.contains("masked")).toBe(false);
    expect(toggle.classList.contains("pending")).toBe(true);

    sock.receive(makeFrame(2, { mask: [false, true] }));
    expect(toggle.classList.contains("masked")).toBe(true);
    expect(toggle.classList.contains("pending")).toBe(false);
  });

  it("sends the selected goal and echoes the acknowledged one", async () => {
    const { root, sock } = await mountPanel();
    const select = root.querySelector<HTMLSelectElement>(".goal-select")!;
    select.value = "raise_arms";
    root.querySelector<HTMLButtonElement>(".goal-send")!.click();
    expect(JSON.parse(sock.sent[0]!)).toEqual({ type: "set_goal", command: "raise_arms" });

    const echo = root.querySelector(".goal-echo")!;
    expect(echo.textContent).toBe("goal: none");
    sock.receive(makeFrame(3, { goal_command: "raise_arms" }));
    expect(echo.textContent).toBe("goal: raise_arms");
  });

  it("disables controls when the socket drops and surfaces errors", async () => {
    const { root, sock } = await mountPanel();
    sock.receive({ type: "error", detail: "unknown group 'Wings'" });
    expect(root.querySelector(".error-line")!.textContent).toContain("Wings");

    sock.close();
    expect(root.querySelector(".status")!.textContent).toBe("disconnected");
    const toggle = root.querySelector<HTMLButtonElement>('[data-part="Arms"]')!;
    expect(toggle.disabled).toBe(true);
    expect(root.querySelector<HTMLButtonElement>(".pause")!.disabled).toBe(true);
  });
});
