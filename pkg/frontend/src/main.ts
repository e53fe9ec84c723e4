import { LiveClient, type SocketLike } from "./client.js";
import { ControlPanel } from "./panel.js";

// Server base URL: same origin by default, ?server=http://host:port to point
// the static bundle at a service running elsewhere.
function serverBase(): string {
  const override = new URLSearchParams(window.location.search).get("server");
  return override ?? window.location.origin;
}

// Narrow the browser socket onto the client's minimal interface.
function adaptSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const adapter: SocketLike = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
  };
  ws.onopen = () => adapter.onopen?.();
  ws.onmessage = (event) => adapter.onmessage?.({ data: event.data });
  ws.onclose = () => adapter.onclose?.();
  ws.onerror = () => adapter.onerror?.();
  return adapter;
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");

  const client = new LiveClient(adaptSocket, (url) => fetch(url));
  const panel = new ControlPanel(root, client);

  const tick = () => {
    panel.draw();
    window.requestAnimationFrame(tick);
  };
  window.requestAnimationFrame(tick);

  client.connect(serverBase()).catch((err) => {
    console.error("connect failed", err);
  });
}

boot();
