// Plain object (no imports) so the config loads regardless of where the
// vitest installation lives. Most suites run in node; tests/ui.test.ts opts
// into jsdom with a @vitest-environment docblock. The generous hook timeout
// covers tests/roundtrip.test.ts, which trains a tiny scene from scratch.
export default {
  test: {
    environment: "node",
    testTimeout: 120_000,
    hookTimeout: 600_000,
  },
};
