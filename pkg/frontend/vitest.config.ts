import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    globalSetup: ["test-server/globalSetup.ts"],
    fileParallelism: false,
  },
});
