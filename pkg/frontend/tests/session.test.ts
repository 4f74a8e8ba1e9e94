import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, ApiError, type FetchLike } from "../src/api.js";
import { SessionController } from "../src/session.js";
import type { Meta } from "../src/types.js";

const META: Meta = {
  n_frames: 12,
  time_range: [0, 1],
  resolution: [4, 4],
  d: 8,
  feature_dim: 16,
  prompts: ["azure thing", "crimson thing", "emerald thing"],
  default_threshold: 0.4,
  iteration: 80,
  tracker_enabled: true,
};

function abortError(): Error {
  return new DOMException("The operation was aborted.", "AbortError") as unknown as Error;
}

/** Deterministic per-view scores so cached results are distinguishable. */
function scoresFor(time: number, n = 16): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = Math.fround((i / n + time) % 1);
  return out;
}

function queryPayload(body: { prompt: string; time: number; threshold: number }) {
  const scores = scoresFor(body.time);
  const bytes = new Uint8Array(scores.buffer.slice(0));
  return {
    prompt: body.prompt,
    time: body.time,
    threshold: body.threshold,
    shape: [4, 4],
    stats: { min: 0, max: 1, mean: 0.5, coverage: 0.5 },
    heatmap_png: "",
    mask_png: "",
    scores_f32_le: Buffer.from(bytes).toString("base64"),
  };
}

interface PendingCall {
  url: string;
  body: any;
  signal: AbortSignal | undefined;
  respond: () => void;
  fail: (status: number, detail: unknown) => void;
}

/** Scriptable stand-in for the server. auto=true answers immediately;
 * auto=false parks calls in `pending` for the test to settle by hand. */
class FakeServer {
  auto = true;
  honorAbort = true;
  metaDown = false;
  pending: PendingCall[] = [];
  queryCalls = 0;
  renderCalls = 0;
  metaCalls = 0;

  fetch: FetchLike = (url, init) => {
    return new Promise<Response>((resolve, reject) => {
      const body = init?.body ? JSON.parse(init.body as string) : null;
      if (url.endsWith("/meta")) {
        this.metaCalls++;
        if (this.metaDown) {
          reject(new TypeError("fetch failed"));
          return;
        }
        resolve(json(200, META));
        return;
      }
      if (this.honorAbort) {
        init?.signal?.addEventListener("abort", () => reject(abortError()));
      }
      const call: PendingCall = {
        url,
        body,
        signal: init?.signal ?? undefined,
        respond: () => resolve(this.answer(url, body)),
        fail: (status, detail) => resolve(json(status, { detail })),
      };
      if (url.endsWith("/query")) this.queryCalls++;
      if (url.endsWith("/render")) this.renderCalls++;
      if (this.auto) this.route(call);
      else this.pending.push(call);
    });
  };

  private route(call: PendingCall): void {
    if (call.url.endsWith("/query") && !META.prompts.includes(call.body.prompt)) {
      call.fail(404, {
        error: `unknown prompt '${call.body.prompt}'`,
        suggestions: ["crimson thing", "emerald thing"],
      });
      return;
    }
    call.respond();
  }

  private answer(url: string, body: any): Response {
    if (url.endsWith("/query")) return json(200, queryPayload(body));
    if (url.endsWith("/render")) {
      return new Response(new Uint8Array([137, 80, 78, 71]), { status: 200 });
    }
    throw new Error(`unexpected url ${url}`);
  }

  settleAll(): void {
    for (const call of this.pending.splice(0)) this.route(call);
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

async function flush(times = 4): Promise<void> {
  for (let i = 0; i < times; i++) {
    await new Promise((r) => setTimeout(r, 0));
  }
}

describe("SessionController", () => {
  let server: FakeServer;
  let session: SessionController;

  beforeEach(async () => {
    server = new FakeServer();
    session = new SessionController(new ApiClient("http://fake", server.fetch));
    await session.connect();
    await flush();
  });

  it("connects, picks the first prompt, and loads an initial view", () => {
    const s = session.getState();
    expect(s.phase).toBe("ready");
    expect(s.meta?.prompts).toEqual(META.prompts);
    expect(s.prompt).toBe("azure thing");
    expect(s.threshold).toBe(0.4);
    expect(s.result).not.toBeNull();
    expect(s.result!.scores).toHaveLength(16);
    expect(s.mask).toHaveLength(16);
    expect(s.busy).toBe(false);
    expect(server.queryCalls).toBe(1);
    expect(server.renderCalls).toBe(1); // blended overlay needs the color render
  });

  it("rethresholds locally without any request", () => {
    const before = { q: server.queryCalls, r: server.renderCalls };
    const coverageAt = (t: number) => {
      session.setThreshold(t);
      return session.getState().maskCoverage;
    };
    const low = coverageAt(0.05);
    const high = coverageAt(0.95);
    expect(server.queryCalls).toBe(before.q);
    expect(server.renderCalls).toBe(before.r);
    expect(low).toBeGreaterThan(high);
    expect(session.getState().threshold).toBe(0.95);
  });

  it("refetches on time change and serves revisited views from cache", async () => {
    session.setTime(0.5);
    await flush();
    expect(server.queryCalls).toBe(2);
    expect(session.getState().result!.time).toBe(0.5);

    const before = { q: server.queryCalls, r: server.renderCalls };
    session.setTime(0); // back to the initial view
    await flush();
    expect(server.queryCalls).toBe(before.q);
    expect(server.renderCalls).toBe(before.r);
    expect(session.getState().result!.time).toBe(0);
    expect(session.getState().busy).toBe(false);
  });

  it("aborts the in-flight request when a newer one starts", async () => {
    server.auto = false;
    session.setTime(0.3);
    await flush();
    const first = server.pending.filter((c) => c.url.endsWith("/query"));
    expect(first).toHaveLength(1);
    expect(first[0].signal?.aborted).toBe(false);
    expect(session.getState().busy).toBe(true);

    session.setTime(0.6);
    await flush();
    expect(first[0].signal?.aborted).toBe(true);

    server.settleAll();
    await flush();
    const s = session.getState();
    expect(s.time).toBe(0.6);
    expect(s.result!.time).toBe(0.6);
    expect(s.busy).toBe(false);
  });

  it("drops stale responses even if the transport ignores abort", async () => {
    server.auto = false;
    server.honorAbort = false;
    session.setTime(0.3);
    await flush();
    const stale = server.pending.splice(0);
    session.setTime(0.6);
    await flush();
    server.settleAll(); // newer request resolves first
    await flush();
    expect(session.getState().result!.time).toBe(0.6);

    for (const call of stale) call.respond(); // old response arrives late
    await flush();
    expect(session.getState().result!.time).toBe(0.6); // not clobbered
  });

  it("clamps time and threshold to their valid ranges", () => {
    session.setTime(99);
    expect(session.getState().time).toBe(1);
    session.setTime(-5);
    expect(session.getState().time).toBe(0);
    session.setThreshold(2);
    expect(session.getState().threshold).toBe(1);
    session.setThreshold(-0.5);
    expect(session.getState().threshold).toBe(0);
  });

  it("surfaces unknown-prompt suggestions and recovers on a valid prompt", async () => {
    session.setPrompt("xyzzy");
    await flush();
    let s = session.getState();
    expect(s.error).toContain("unknown prompt");
    expect(s.suggestions).toEqual(["crimson thing", "emerald thing"]);

    session.setPrompt("crimson thing");
    await flush();
    s = session.getState();
    expect(s.error).toBeNull();
    expect(s.suggestions).toEqual([]);
    expect(s.result!.prompt).toBe("crimson thing");
  });

  it("reports connection failures and recovers on retry", async () => {
    const down = new FakeServer();
    down.metaDown = true;
    const fresh = new SessionController(new ApiClient("http://fake", down.fetch));
    await fresh.connect();
    expect(fresh.getState().phase).toBe("error");
    expect(fresh.getState().error).toContain("cannot reach server");

    down.metaDown = false;
    await fresh.connect();
    await flush();
    expect(fresh.getState().phase).toBe("ready");
    expect(fresh.getState().result).not.toBeNull();
  });

  it("switching overlay to depth fetches only the missing render", async () => {
    const before = { q: server.queryCalls, r: server.renderCalls };
    session.setOverlay("depth");
    await flush();
    expect(server.queryCalls).toBe(before.q); // scores reused from cache
    expect(server.renderCalls).toBe(before.r + 1);
    const s = session.getState();
    expect(s.baseMode).toBe("depth");
    expect(s.result).not.toBeNull();
  });

  it("mask overlay needs no render at all", async () => {
    session.setOverlay("mask");
    await flush();
    const before = { q: server.queryCalls, r: server.renderCalls };
    session.setTime(0.25);
    await flush();
    expect(server.queryCalls).toBe(before.q + 1);
    expect(server.renderCalls).toBe(before.r); // no base image in mask mode
    expect(session.getState().basePng).toBeNull();
  });
});

describe("ApiError mapping", () => {
  it("parses string details from validation errors", async () => {
    const fetchFn: FetchLike = async () =>
      json(400, { detail: "body.mode: must be one of color, depth, accum" });
    const client = new ApiClient("http://fake", fetchFn);
    const err = await client
      .render({ time: 0, mode: "color" })
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.message).toContain("body.mode");
  });
});
