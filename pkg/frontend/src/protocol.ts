// Wire protocol for the live motion service. Every inbound message is
// validated before it can touch session state; every outbound message is
// validated before send.
import { z } from "zod";

const vec3 = z.tuple([z.number(), z.number(), z.number()]);

export const jointSchema = z.object({
  name: z.string().min(1),
  pos: vec3,
  rot6d: z.array(z.number()).length(6),
});

export const frameSchema = z.object({
  type: z.literal("frame"),
  t: z.number().int().nonnegative(),
  joints: z.array(jointSchema).min(1),
  mask: z.array(z.boolean()),
  goal_command: z.string().nullable(),
  rewards: z.object({ imit: z.number(), track: z.number().nullable() }),
  done: z.boolean(),
});
export type FrameMessage = z.infer<typeof frameSchema>;

export const errorSchema = z.object({
  type: z.literal("error"),
  detail: z.string(),
});
export type ErrorMessage = z.infer<typeof errorSchema>;

export const serverMessageSchema = z.discriminatedUnion("type", [
  frameSchema,
  errorSchema,
]);
export type ServerMessage = z.infer<typeof serverMessageSchema>;

// GET /api/meta: static session description fetched once at connect. The
// server is the single source of truth for part names, group membership,
// and the goal command vocabulary.
export const metaSchema = z.object({
  stage: z.string(),
  joints: z.array(z.string()).min(1),
  parents: z.array(z.number().int()),
  parts: z.array(z.string()).min(1),
  part_joints: z.array(z.array(z.number().int().nonnegative())),
  mask: z.array(z.boolean()),
  mask_fixed: z.boolean(),
  commands: z.array(z.string()),
  tasks: z.array(z.string()),
  control_hz: z.number().positive(),
});
export type Meta = z.infer<typeof metaSchema>;

export const clientMessageSchema = z.discriminatedUnion("type", [
  z.object({ type: z.literal("set_mask"), parts: z.array(z.string()) }),
  z.object({ type: z.literal("set_goal"), command: z.string().min(1) }),
  z.object({
    type: z.literal("set_task"),
    task: z.string().min(1),
    params: z.record(z.number()),
  }),
  z.object({ type: z.literal("pause") }),
  z.object({ type: z.literal("reset") }),
]);
export type ClientMessage = z.infer<typeof clientMessageSchema>;

/** Parse one socket payload; null (plus a console diagnostic) on anything
 * that is not a schema-valid server message. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    console.warn("live service: dropping non-JSON payload");
    return null;
  }
  const result = serverMessageSchema.safeParse(data);
  if (!result.success) {
    console.warn("live service: dropping malformed message", result.error.issues);
    return null;
  }
  return result.data;
}

/** Serialize an outbound command, refusing schema-invalid messages. */
export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(clientMessageSchema.parse(msg));
}
