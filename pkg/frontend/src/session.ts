/** Viewer state machine.
 *
 * Owns everything the UI displays and all traffic to the server:
 *
 * - Raw score maps are requested once per (prompt, time, camera) and kept in
 *   a small LRU cache; moving the threshold slider rethresholds the cached
 *   float32 scores locally and never issues a request.
 * - Any change that does need the server (new prompt, time, camera, or an
 *   overlay that needs a render) aborts whatever is in flight first, so a
 *   slider drag resolves to exactly the newest position. A sequence counter
 *   backs up the abort: responses from superseded requests are dropped even
 *   if their fetch implementation ignores the abort signal.
 */

import { ApiClient, ApiError, b64ToBytes, decodeScores } from "./api.js";
import { coverage, thresholdMask } from "./threshold.js";
import type {
  CameraSpec,
  Meta,
  OverlayMode,
  QueryResult,
  RenderMode,
} from "./types.js";

export type Phase = "idle" | "connecting" | "ready" | "error";

export interface SessionState {
  phase: Phase;
  /** Human-readable message for the banner; null when healthy. */
  error: string | null;
  /** Nearest known prompts, populated from unknown-prompt errors. */
  suggestions: string[];
  meta: Meta | null;
  prompt: string | null;
  time: number;
  threshold: number;
  overlay: OverlayMode;
  /** Heatmap opacity in blended mode. */
  opacity: number;
  /** null means "use the server's training camera". */
  camera: CameraSpec | null;
  /** True while a request for the current view is in flight. */
  busy: boolean;
  /** Last applied query (raw scores; see `mask` for the client threshold). */
  result: QueryResult | null;
  /** Client-side binary mask of `result.scores` at the current threshold. */
  mask: Uint8Array | null;
  maskCoverage: number;
  /** PNG bytes of the render backing the current overlay, if it needs one. */
  basePng: Uint8Array | null;
  baseMode: RenderMode | null;
}

export type Listener = (state: SessionState) => void;

const QUERY_CACHE_SIZE = 32;
const RENDER_CACHE_SIZE = 32;

function now(): number {
  return typeof performance !== "undefined" ? performance.now() : Date.now();
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Which render the overlay is drawn on top of (null: none needed). */
export function overlayBaseMode(overlay: OverlayMode): RenderMode | null {
  switch (overlay) {
    case "color":
    case "blended":
      return "color";
    case "depth":
      return "depth";
    default:
      return null;
  }
}

class Lru<V> {
  private map = new Map<string, V>();

  constructor(private readonly capacity: number) {}

  get(key: string): V | undefined {
    const v = this.map.get(key);
    if (v !== undefined) {
      this.map.delete(key);
      this.map.set(key, v);
    }
    return v;
  }

  set(key: string, value: V): void {
    this.map.delete(key);
    this.map.set(key, value);
    if (this.map.size > this.capacity) {
      this.map.delete(this.map.keys().next().value as string);
    }
  }
}

export class SessionController {
  private state: SessionState = {
    phase: "idle",
    error: null,
    suggestions: [],
    meta: null,
    prompt: null,
    time: 0,
    threshold: 0.4,
    overlay: "blended",
    opacity: 0.6,
    camera: null,
    busy: false,
    result: null,
    mask: null,
    maskCoverage: 0,
    basePng: null,
    baseMode: null,
  };

  private listeners = new Set<Listener>();
  private queryCache = new Lru<QueryResult>(QUERY_CACHE_SIZE);
  private renderCache = new Lru<Uint8Array>(RENDER_CACHE_SIZE);
  private inflight: AbortController | null = null;
  private seq = 0;

  constructor(readonly client: ApiClient) {}

  getState(): Readonly<SessionState> {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    this.notify();
  }

  /** Fetch /meta and set up defaults. Safe to call again to retry. */
  async connect(): Promise<void> {
    this.update({ phase: "connecting", error: null });
    try {
      const meta = await this.client.meta();
      this.update({
        phase: "ready",
        meta,
        threshold: meta.default_threshold,
        time: meta.time_range[0],
        prompt: meta.prompts[0] ?? null,
        error: null,
        suggestions: [],
      });
      await this.refresh();
    } catch (err) {
      this.update({
        phase: "error",
        error: err instanceof Error ? err.message : String(err),
      });
    }
  }

  setPrompt(prompt: string | null): void {
    if (prompt === this.state.prompt) return;
    this.update({ prompt, suggestions: [] });
    void this.refresh();
  }

  setTime(time: number): void {
    const range = this.state.meta?.time_range ?? [0, 1];
    const t = clamp(time, range[0], range[1]);
    if (t === this.state.time) return;
    this.update({ time: t });
    void this.refresh();
  }

  /** Purely local: rethresholds the cached scores, no request. */
  setThreshold(threshold: number): void {
    const t = clamp(threshold, 0, 1);
    if (t === this.state.threshold) return;
    this.update({ threshold: t });
    this.rethreshold();
  }

  setOverlay(overlay: OverlayMode): void {
    if (overlay === this.state.overlay) return;
    this.update({ overlay });
    void this.refresh();
  }

  setOpacity(opacity: number): void {
    this.update({ opacity: clamp(opacity, 0, 1) });
  }

  setCamera(camera: CameraSpec | null): void {
    if (JSON.stringify(camera) === JSON.stringify(this.state.camera)) return;
    this.update({ camera });
    void this.refresh();
  }

  private queryKey(): string {
    const { prompt, time, camera } = this.state;
    return JSON.stringify([prompt, time, camera]);
  }

  private renderKey(mode: RenderMode): string {
    const { time, camera } = this.state;
    return JSON.stringify([mode, time, camera]);
  }

  private rethreshold(): void {
    const { result, threshold } = this.state;
    if (!result) return;
    const mask = thresholdMask(result.scores, threshold);
    this.update({ mask, maskCoverage: coverage(mask) });
  }

  /** Bring `result` and `basePng` in line with the current view, hitting the
   * caches first and the network only for what is missing. Supersedes any
   * request still in flight. */
  async refresh(): Promise<void> {
    if (this.state.phase !== "ready" || !this.state.meta) return;

    const seq = ++this.seq;
    this.inflight?.abort();
    this.inflight = null;

    const { prompt, time, threshold, camera, overlay } = this.state;
    const baseMode = overlayBaseMode(overlay);

    const qKey = this.queryKey();
    const cachedQuery = prompt === null ? null : this.queryCache.get(qKey);
    const cachedBase =
      baseMode === null ? null : this.renderCache.get(this.renderKey(baseMode));

    const needQuery = prompt !== null && cachedQuery === undefined;
    const needBase = baseMode !== null && cachedBase === undefined;

    if (!needQuery && !needBase) {
      this.applyQuery(cachedQuery ?? null);
      this.update({
        basePng: cachedBase ?? null,
        baseMode,
        busy: false,
        error: null,
      });
      return;
    }

    const ctrl = new AbortController();
    this.inflight = ctrl;
    this.update({ busy: true });

    try {
      const started = now();
      const cameraField = camera ?? undefined;
      const [queryResult, basePng] = await Promise.all([
        needQuery
          ? this.client
              .query(
                { prompt: prompt!, time, threshold, camera: cameraField },
                ctrl.signal,
              )
              .then((res) => {
                const scores = decodeScores(res.scores_f32_le);
                const result: QueryResult = {
                  prompt: res.prompt,
                  time: res.time,
                  serverThreshold: res.threshold,
                  shape: res.shape,
                  stats: res.stats,
                  scores,
                  heatmapPng: b64ToBytes(res.heatmap_png),
                  maskPng: b64ToBytes(res.mask_png),
                  latencyMs: now() - started,
                };
                return result;
              })
          : Promise.resolve(cachedQuery ?? null),
        needBase
          ? this.client.render(
              { time, camera: cameraField, mode: baseMode! },
              ctrl.signal,
            )
          : Promise.resolve(cachedBase ?? null),
      ]);

      if (seq !== this.seq) return; // superseded while we were waiting

      if (queryResult) this.queryCache.set(qKey, queryResult);
      if (baseMode !== null && basePng) {
        this.renderCache.set(this.renderKey(baseMode), basePng);
      }
      this.applyQuery(queryResult);
      this.update({
        basePng: basePng ?? null,
        baseMode,
        busy: false,
        error: null,
        suggestions: [],
      });
    } catch (err) {
      if ((err as { name?: string })?.name === "AbortError") return;
      if (seq !== this.seq) return;
      this.update({
        busy: false,
        error: err instanceof Error ? err.message : String(err),
        suggestions: err instanceof ApiError ? err.suggestions : [],
      });
    } finally {
      if (this.inflight === ctrl) this.inflight = null;
    }
  }

  private applyQuery(result: QueryResult | null): void {
    if (!result) {
      this.update({ result: null, mask: null, maskCoverage: 0 });
      return;
    }
    const mask = thresholdMask(result.scores, this.state.threshold);
    this.update({ result, mask, maskCoverage: coverage(mask) });
  }
}
