import type { FrameMessage, Meta } from "./protocol.js";
import { RingBuffer } from "./ring.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface RewardSample {
  t: number;
  imit: number;
  track: number | null;
}

export interface GoalMark {
  t: number; // frame index of the first frame echoing the command
  command: string;
}

export const REWARD_HISTORY = 300;

/** Everything the UI is allowed to display. Mask and goal fields are only
 * ever written from server frames; client intent lives elsewhere, so the UI
 * never renders state the server has not acknowledged. */
export class SessionState {
  status: ConnectionStatus = "disconnected";
  meta: Meta | null = null;
  frame: FrameMessage | null = null;
  mask: boolean[] = [];
  goal: string | null = null;
  lastError: string | null = null;
  readonly rewards = new RingBuffer<RewardSample>(REWARD_HISTORY);
  readonly goalMarks = new RingBuffer<GoalMark>(32);

  applyMeta(meta: Meta): void {
    this.meta = meta;
    this.mask = [...meta.mask];
  }

  applyFrame(frame: FrameMessage): void {
    if (frame.goal_command !== null && frame.goal_command !== this.goal) {
      this.goalMarks.push({ t: frame.t, command: frame.goal_command });
    }
    this.frame = frame;
    this.mask = [...frame.mask];
    this.goal = frame.goal_command;
    this.rewards.push({
      t: frame.t,
      imit: frame.rewards.imit,
      track: frame.rewards.track,
    });
  }

  applyError(detail: string): void {
    this.lastError = detail;
  }

  /** Part names whose group is masked in the last acknowledged frame. */
  maskedParts(): string[] {
    if (!this.meta) return [];
    return this.meta.parts.filter((_, i) => this.mask[i] === true);
  }
}
