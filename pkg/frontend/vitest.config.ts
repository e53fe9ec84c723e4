import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // the round-trip suite boots a real policy server, which imports torch
    testTimeout: 20_000,
    hookTimeout: 120_000,
  },
});
