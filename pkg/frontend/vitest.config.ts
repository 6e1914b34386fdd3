import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the live suite boots a real broker process
    testTimeout: 60000,
    hookTimeout: 60000,
  },
});
