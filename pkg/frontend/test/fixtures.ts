import type { FrameMessage, Meta } from "../src/protocol.js";

/** Four-joint chain with two part groups, enough to exercise masking and
 * bone rendering without dragging in a full character. */
export function makeMeta(overrides: Partial<Meta> = {}): Meta {
  return {
    stage: "base",
    joints: ["Root", "Spine", "LeftArm", "RightArm"],
    parents: [-1, 0, 1, 1],
    parts: ["Trunk", "Arms"],
    part_joints: [
      [0, 1],
      [2, 3],
    ],
    mask: [false, false],
    mask_fixed: false,
    commands: ["rest", "raise_arms"],
    tasks: [],
    control_hz: 30,
    ...overrides,
  };
}

export function makeFrame(t: number, overrides: Partial<FrameMessage> = {}): FrameMessage {
  return {
    type: "frame",
    t,
    joints: [
      { name: "Root", pos: [0, 0, 1], rot6d: [1, 0, 0, 0, 1, 0] },
      { name: "Spine", pos: [0, 0, 1.4], rot6d: [1, 0, 0, 0, 1, 0] },
      { name: "LeftArm", pos: [0.3, 0.1, 1.3], rot6d: [1, 0, 0, 0, 1, 0] },
      { name: "RightArm", pos: [-0.3, -0.1, 1.3], rot6d: [1, 0, 0, 0, 1, 0] },
    ],
    mask: [false, false],
    goal_command: null,
    rewards: { imit: 0.5, track: null },
    done: false,
    ...overrides,
  };
}
