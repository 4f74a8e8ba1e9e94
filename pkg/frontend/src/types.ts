/** Shapes of the JSON the scene server exchanges with this client. */

export interface Meta {
  n_frames: number;
  time_range: [number, number];
  /** [height, width] of the training images / default render target. */
  resolution: [number, number];
  d: number;
  feature_dim: number;
  /** Sorted list of prompts the bundled lexicon can embed. */
  prompts: string[];
  default_threshold: number;
  iteration: number;
  tracker_enabled: boolean;
}

export interface CameraSpec {
  eye: [number, number, number];
  target: [number, number, number];
  up?: [number, number, number];
  fov?: number;
}

export type RenderMode = "color" | "depth" | "accum";

export interface RenderRequest {
  time: number;
  camera?: CameraSpec;
  mode: RenderMode;
}

export interface QueryRequest {
  prompt?: string;
  embedding?: number[];
  time: number;
  threshold?: number;
  camera?: CameraSpec;
}

export interface QueryStats {
  min: number;
  max: number;
  mean: number;
  /** Fraction of pixels at or above the threshold the server applied. */
  coverage: number;
}

/** Raw wire format of a /query response (binary fields base64-encoded). */
export interface QueryResponse {
  prompt: string | null;
  time: number;
  threshold: number;
  shape: [number, number];
  stats: QueryStats;
  heatmap_png: string;
  mask_png: string;
  scores_f32_le: string;
}

/** A decoded query: scores as float32, PNGs as raw bytes. */
export interface QueryResult {
  prompt: string | null;
  time: number;
  /** Threshold the server applied when it produced mask_png. */
  serverThreshold: number;
  shape: [number, number];
  stats: QueryStats;
  scores: Float32Array;
  heatmapPng: Uint8Array;
  maskPng: Uint8Array;
  latencyMs: number;
}

/** What the canvas shows. color/depth are plain renders; heatmap is the
 * relevancy map; mask is the client-side binary mask; blended overlays the
 * heatmap on the color render. */
export type OverlayMode = "color" | "depth" | "heatmap" | "mask" | "blended";

export const OVERLAY_MODES: OverlayMode[] = [
  "color",
  "depth",
  "heatmap",
  "mask",
  "blended",
];
