import type { Ctx2D } from "./render.js";
import type { GoalMark, RewardSample } from "./state.js";

const STYLE = {
  background: "#111418",
  imit: "#5ecf8a",
  track: "#6aa7ff",
  mark: "#ff9e4a",
  label: "#6c7a89",
};

/** Live reward telemetry: one polyline per reward stream over the bounded
 * history window, with vertical annotations where a goal command was first
 * echoed. The x axis is the frame index, so gaps from resets stay visible. */
export function renderRewardPlot(
  ctx: Ctx2D,
  width: number,
  height: number,
  samples: RewardSample[],
  marks: GoalMark[],
): void {
  ctx.fillStyle = STYLE.background;
  ctx.fillRect(0, 0, width, height);
  if (samples.length === 0) return;

  const t0 = samples[0]!.t;
  const t1 = samples[samples.length - 1]!.t;
  const tSpan = Math.max(t1 - t0, 1);
  let lo = Infinity, hi = -Infinity;
  for (const s of samples) {
    lo = Math.min(lo, s.imit, s.track ?? Infinity);
    hi = Math.max(hi, s.imit, s.track ?? -Infinity);
  }
  if (!Number.isFinite(lo)) return;
  const pad = Math.max((hi - lo) * 0.1, 1e-3);
  lo -= pad; hi += pad;

  const px = (t: number) => ((t - t0) / tSpan) * (width - 12) + 6;
  const py = (v: number) => height - 4 - ((v - lo) / (hi - lo)) * (height - 8);

  const streams: Array<["imit" | "track", string]> = [
    ["imit", STYLE.imit],
    ["track", STYLE.track],
  ];
  for (const [key, color] of streams) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let drawing = false;
    for (const s of samples) {
      const v = key === "imit" ? s.imit : s.track;
      if (v === null) {
        drawing = false;
        continue;
      }
      if (drawing) {
        ctx.lineTo(px(s.t), py(v));
      } else {
        ctx.moveTo(px(s.t), py(v));
        drawing = true;
      }
    }
    ctx.stroke();
  }

  ctx.font = "10px sans-serif";
  for (const mark of marks) {
    if (mark.t < t0 || mark.t > t1) continue;
    const x = px(mark.t);
    ctx.strokeStyle = STYLE.mark;
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(x, 2);
    ctx.lineTo(x, height - 2);
    ctx.stroke();
    ctx.fillStyle = STYLE.mark;
    ctx.fillText(mark.command, Math.min(x + 3, width - 40), 12);
  }

  ctx.fillStyle = STYLE.label;
  ctx.fillText(`reward [${lo.toFixed(2)}, ${hi.toFixed(2)}]`, 6, height - 6);
}
