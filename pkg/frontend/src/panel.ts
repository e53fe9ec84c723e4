import type { LiveClient } from "./client.js";
import { renderRewardPlot } from "./plot.js";
import { renderSkeleton, type Ctx2D, type ViewAxis } from "./render.js";

const VIEW_W = 320;
const VIEW_H = 320;
const PLOT_W = 656;
const PLOT_H = 120;

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

/** Builds the whole control surface and keeps it in sync with the client
 * state. All mask/goal indicators read acknowledged server state; pressed
 * toggles that the server has not yet echoed render as "pending". */
export class ControlPanel {
  private readonly doc: Document;
  private readonly status: HTMLElement;
  private readonly errorLine: HTMLElement;
  private readonly maskRow: HTMLElement;
  private readonly goalSelect: HTMLSelectElement;
  private readonly goalButton: HTMLButtonElement;
  private readonly goalEcho: HTMLElement;
  private readonly pauseButton: HTMLButtonElement;
  private readonly resetButton: HTMLButtonElement;
  private readonly views: Array<[ViewAxis, Ctx2D | null]> = [];
  private plotCtx: Ctx2D | null = null;
  private toggles = new Map<string, HTMLButtonElement>();

  constructor(root: HTMLElement, private readonly client: LiveClient) {
    this.doc = root.ownerDocument;
    const doc = this.doc;

    this.status = el(doc, "div", "status", "disconnected");
    root.appendChild(this.status);

    const canvases = el(doc, "div", "views");
    for (const view of ["side", "top"] as const) {
      const canvas = el(doc, "canvas", `view-${view}`);
      canvas.width = VIEW_W;
      canvas.height = VIEW_H;
      canvases.appendChild(canvas);
      this.views.push([view, canvas.getContext("2d") as Ctx2D | null]);
    }
    root.appendChild(canvases);

    const plot = el(doc, "canvas", "reward-plot");
    plot.width = PLOT_W;
    plot.height = PLOT_H;
    root.appendChild(plot);
    this.plotCtx = plot.getContext("2d") as Ctx2D | null;

    this.maskRow = el(doc, "div", "mask-row");
    root.appendChild(this.maskRow);

    const goalRow = el(doc, "div", "goal-row");
    this.goalSelect = el(doc, "select", "goal-select");
    this.goalButton = el(doc, "button", "goal-send", "send goal");
    this.goalButton.addEventListener("click", () => {
      this.client.sendGoal(this.goalSelect.value);
    });
    this.goalEcho = el(doc, "span", "goal-echo", "goal: none");
    goalRow.append(this.goalSelect, this.goalButton, this.goalEcho);
    root.appendChild(goalRow);

    const controlRow = el(doc, "div", "control-row");
    this.pauseButton = el(doc, "button", "pause", "pause / resume");
    this.pauseButton.addEventListener("click", () => this.client.pause());
    this.resetButton = el(doc, "button", "reset", "reset");
    this.resetButton.addEventListener("click", () => this.client.reset());
    controlRow.append(this.pauseButton, this.resetButton);
    root.appendChild(controlRow);

    this.errorLine = el(doc, "div", "error-line", "");
    root.appendChild(this.errorLine);

    client.subscribe(() => this.update());
    this.update();
  }

  /** (Re)build per-part toggles and the goal preset list from meta. */
  private buildControls(): void {
    const meta = this.client.state.meta;
    if (!meta || this.toggles.size > 0) return;
    for (const part of meta.parts) {
      const button = el(this.doc, "button", "mask-toggle", part);
      button.dataset.part = part;
      button.addEventListener("click", () => this.client.togglePart(part));
      this.maskRow.appendChild(button);
      this.toggles.set(part, button);
    }
    for (const command of meta.commands) {
      const option = el(this.doc, "option", undefined, command);
      option.value = command;
      this.goalSelect.appendChild(option);
    }
    const goalsAvailable = meta.commands.length > 0;
    this.goalSelect.disabled = !goalsAvailable;
    this.goalButton.disabled = !goalsAvailable;
  }

  update(): void {
    const state = this.client.state;
    this.buildControls();
    this.status.textContent = state.status;

    const meta = state.meta;
    const connected = this.client.connected;
    const desired = new Set(this.client.desiredParts());
    this.toggles.forEach((button, part) => {
      const i = meta ? meta.parts.indexOf(part) : -1;
      const acked = i >= 0 && state.mask[i] === true;
      button.disabled = !connected || meta?.mask_fixed === true;
      button.classList.toggle("masked", acked);
      button.classList.toggle("pending", desired.has(part) !== acked);
    });

    this.goalEcho.textContent = `goal: ${state.goal ?? "none"}`;
    this.errorLine.textContent = state.lastError ?? "";
    this.pauseButton.disabled = !connected;
    this.resetButton.disabled = !connected;
    this.draw();
  }

  /** Paint the latest acknowledged frame; called from update() and from the
   * animation loop. No frame yet means the canvases stay blank. */
  draw(): void {
    const state = this.client.state;
    const meta = state.meta;
    if (meta && state.frame) {
      for (const [view, ctx] of this.views) {
        if (ctx) renderSkeleton(ctx, VIEW_W, VIEW_H, state.frame, meta, view);
      }
    }
    if (this.plotCtx) {
      renderRewardPlot(
        this.plotCtx,
        PLOT_W,
        PLOT_H,
        state.rewards.toArray(),
        state.goalMarks.toArray(),
      );
    }
  }
}
