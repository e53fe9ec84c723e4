import { describe, expect, it } from "vitest";
import { renderRewardPlot } from "../src/plot.js";
import { COLORS, maskedJointFlags, renderSkeleton, type Ctx2D } from "../src/render.js";
import { SessionState } from "../src/state.js";
import { makeFrame, makeMeta } from "./fixtures.js";

/** Records enough of the drawing stream to assert on colors and coordinate
 * sanity without a raster backend. */
class RecordingCtx implements Ctx2D {
  strokeStyle = "";
  fillStyle = "";
  lineWidth = 1;
  font = "";
  strokes: Array<{ color: string; points: number[] }> = [];
  labels: string[] = [];
  ops = 0;
  private path: number[] = [];

  clearRect(): void {
    this.ops++;
  }
  fillRect(): void {
    this.ops++;
  }
  beginPath(): void {
    this.ops++;
    this.path = [];
  }
  moveTo(x: number, y: number): void {
    this.ops++;
    this.path.push(x, y);
  }
  lineTo(x: number, y: number): void {
    this.ops++;
    this.path.push(x, y);
  }
  arc(x: number, y: number): void {
    this.ops++;
    this.path.push(x, y);
  }
  stroke(): void {
    this.ops++;
    this.strokes.push({ color: this.strokeStyle, points: [...this.path] });
  }
  fill(): void {
    this.ops++;
  }
  fillText(text: string): void {
    this.ops++;
    this.labels.push(text);
  }
}

describe("renderSkeleton", () => {
  it("draws bones for every parent link in both views", () => {
    for (const view of ["side", "top"] as const) {
      const ctx = new RecordingCtx();
      renderSkeleton(ctx, 320, 320, makeFrame(0), makeMeta(), view);
      // 3 bones (root has no parent link)
      expect(ctx.strokes).toHaveLength(3);
      for (const stroke of ctx.strokes) {
        for (const value of stroke.points) expect(Number.isFinite(value)).toBe(true);
      }
    }
  });

  it("tints exactly the bones of masked groups", () => {
    const ctx = new RecordingCtx();
    const frame = makeFrame(0, { mask: [false, true] });
    renderSkeleton(ctx, 320, 320, frame, makeMeta(), "side");
    const tinted = ctx.strokes.filter((s) => s.color === COLORS.maskedBone);
    const plain = ctx.strokes.filter((s) => s.color === COLORS.bone);
    // Arms group owns joints 2 and 3, so two bones take the tint
    expect(tinted).toHaveLength(2);
    expect(plain).toHaveLength(1);
    expect(maskedJointFlags(makeMeta(), [false, true])).toEqual([false, false, true, true]);
  });

  it("renders a degenerate all-origin pose without crashing", () => {
    const ctx = new RecordingCtx();
    const joints = makeFrame(0).joints.map((j) => ({ ...j, pos: [0, 0, 0] as [number, number, number] }));
    renderSkeleton(ctx, 320, 320, makeFrame(0, { joints }), makeMeta(), "side");
    expect(ctx.strokes).toHaveLength(3);
    for (const stroke of ctx.strokes) {
      for (const value of stroke.points) expect(Number.isFinite(value)).toBe(true);
    }
  });

  it("replays 1000 frames with bounded state and per-frame work", () => {
    const state = new SessionState();
    state.applyMeta(makeMeta());
    const before = process.memoryUsage().heapUsed;
    let maxOps = 0;
    for (let t = 0; t < 1000; t++) {
      const ctx = new RecordingCtx();
      state.applyFrame(makeFrame(t, { rewards: { imit: Math.random(), track: null } }));
      renderSkeleton(ctx, 320, 320, state.frame!, state.meta!, "side");
      maxOps = Math.max(maxOps, ctx.ops);
    }
    const growth = process.memoryUsage().heapUsed - before;
    expect(state.rewards.length).toBe(300);
    expect(state.goalMarks.length).toBeLessThanOrEqual(32);
    expect(maxOps).toBeLessThan(100); // per-frame work independent of history
    expect(growth).toBeLessThan(64 * 1024 * 1024);
  });
});

describe("renderRewardPlot", () => {
  it("handles an empty history", () => {
    const ctx = new RecordingCtx();
    renderRewardPlot(ctx, 656, 120, [], []);
    expect(ctx.strokes).toHaveLength(0);
  });

  it("plots both streams and annotates goal marks", () => {
    const ctx = new RecordingCtx();
    const samples = Array.from({ length: 50 }, (_, t) => ({
      t,
      imit: 0.5 + 0.01 * t,
      track: t >= 20 ? 0.9 : null,
    }));
    renderRewardPlot(ctx, 656, 120, samples, [{ t: 20, command: "raise_arms" }]);
    expect(ctx.strokes.length).toBeGreaterThanOrEqual(3); // imit, track, mark line
    expect(ctx.labels).toContain("raise_arms");
  });
});
