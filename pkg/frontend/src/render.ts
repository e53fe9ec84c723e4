import type { FrameMessage, Meta } from "./protocol.js";

/** The 2D-context subset the renderers draw with; tests substitute a
 * recording fake since headless DOMs have no raster canvas. */
export interface Ctx2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
}

export type ViewAxis = "side" | "top";

export const COLORS = {
  background: "#111418",
  bone: "#9fb4c7",
  maskedBone: "#ff9e4a", // masked groups tinted
  joint: "#dce7f0",
  label: "#6c7a89",
};

interface Projection {
  x: (v: [number, number, number]) => number;
  y: (v: [number, number, number]) => number;
}

/** Map world coordinates onto the canvas: side view is the x-z plane
 * (height up), top view the x-y plane. Scale fits the joint cloud; a
 * degenerate cloud (all joints coincident) falls back to a unit span so the
 * render stays a well-defined single point. */
function fitProjection(
  frame: FrameMessage,
  view: ViewAxis,
  width: number,
  height: number,
): Projection {
  const hAxis = 0;
  const vAxis = view === "side" ? 2 : 1;
  let hMin = Infinity, hMax = -Infinity, vMin = Infinity, vMax = -Infinity;
  for (const joint of frame.joints) {
    const h = joint.pos[hAxis] ?? 0;
    const v = joint.pos[vAxis] ?? 0;
    hMin = Math.min(hMin, h); hMax = Math.max(hMax, h);
    vMin = Math.min(vMin, v); vMax = Math.max(vMax, v);
  }
  const span = Math.max(hMax - hMin, vMax - vMin, 1e-6);
  const margin = 0.15;
  const scale = Math.min(width, height) * (1 - 2 * margin) / span;
  const hMid = (hMin + hMax) / 2;
  const vMid = (vMin + vMax) / 2;
  return {
    x: (p) => width / 2 + ((p[hAxis] ?? 0) - hMid) * scale,
    // canvas y grows downward
    y: (p) => height / 2 - ((p[vAxis] ?? 0) - vMid) * scale,
  };
}

/** Which joints sit inside a masked group for this frame. */
export function maskedJointFlags(meta: Meta, mask: boolean[]): boolean[] {
  const flags = new Array<boolean>(meta.joints.length).fill(false);
  meta.part_joints.forEach((joints, g) => {
    if (mask[g] !== true) return;
    for (const j of joints) {
      if (j < flags.length) flags[j] = true;
    }
  });
  return flags;
}

/** Draw one orthographic skeleton view: bones as parent links, joints as
 * dots, masked groups tinted. A bone takes the tint of its child joint. */
export function renderSkeleton(
  ctx: Ctx2D,
  width: number,
  height: number,
  frame: FrameMessage,
  meta: Meta,
  view: ViewAxis,
): void {
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, width, height);
  const project = fitProjection(frame, view, width, height);
  const masked = maskedJointFlags(meta, frame.mask);

  for (let j = 0; j < frame.joints.length; j++) {
    const parent = meta.parents[j] ?? -1;
    if (parent < 0 || parent >= frame.joints.length) continue;
    const a = frame.joints[parent]!.pos;
    const b = frame.joints[j]!.pos;
    ctx.strokeStyle = masked[j] ? COLORS.maskedBone : COLORS.bone;
    ctx.lineWidth = masked[j] ? 3 : 2;
    ctx.beginPath();
    ctx.moveTo(project.x(a), project.y(a));
    ctx.lineTo(project.x(b), project.y(b));
    ctx.stroke();
  }

  for (let j = 0; j < frame.joints.length; j++) {
    const p = frame.joints[j]!.pos;
    ctx.fillStyle = masked[j] ? COLORS.maskedBone : COLORS.joint;
    ctx.beginPath();
    ctx.arc(project.x(p), project.y(p), 3, 0, 2 * Math.PI);
    ctx.fill();
  }

  ctx.fillStyle = COLORS.label;
  ctx.font = "11px sans-serif";
  ctx.fillText(view === "side" ? "side (x-z)" : "top (x-y)", 8, 14);
}
