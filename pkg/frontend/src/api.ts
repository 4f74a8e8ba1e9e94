/** Thin typed wrapper over fetch for the scene server's HTTP API. */

import type {
  Meta,
  QueryRequest,
  QueryResponse,
  RenderRequest,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly suggestions: string[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Decode standard base64 into bytes (browser and node). */
export function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

/** Decode a base64 little-endian float32 buffer into a Float32Array. */
export function decodeScores(b64: string): Float32Array {
  const bytes = b64ToBytes(b64);
  if (bytes.byteLength % 4 !== 0) {
    throw new Error(`score buffer length ${bytes.byteLength} is not a multiple of 4`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float32Array(bytes.byteLength / 4);
  for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(i * 4, true);
  return out;
}

/** Pull a readable message (and prompt suggestions, if any) out of an error
 * response. Validation errors carry a "field: message" string in `detail`;
 * unknown-prompt errors carry {error, suggestions} there instead. */
async function toApiError(res: Response): Promise<ApiError> {
  let message = `HTTP ${res.status}`;
  let suggestions: string[] = [];
  try {
    const body = await res.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail === "object") {
      if (typeof detail.error === "string") message = detail.error;
      if (Array.isArray(detail.suggestions)) {
        suggestions = detail.suggestions.filter(
          (s: unknown): s is string => typeof s === "string",
        );
      }
    }
  } catch {
    // non-JSON error body; keep the status-line message
  }
  return new ApiError(res.status, message, suggestions);
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchFn?: FetchLike,
  ) {
    // wrap the global so it is not invoked with `this` bound to the client
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      if ((err as { name?: string })?.name === "AbortError") throw err;
      const reason = err instanceof Error ? err.message : String(err);
      throw new ApiError(0, `cannot reach server: ${reason}`);
    }
    if (!res.ok) throw await toApiError(res);
    return res;
  }

  private post(path: string, body: unknown, signal?: AbortSignal): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }

  async healthz(signal?: AbortSignal): Promise<void> {
    await this.request("/healthz", { signal });
  }

  async meta(signal?: AbortSignal): Promise<Meta> {
    const res = await this.request("/meta", { signal });
    return (await res.json()) as Meta;
  }

  /** Returns the rendered frame as raw PNG bytes. */
  async render(body: RenderRequest, signal?: AbortSignal): Promise<Uint8Array> {
    const res = await this.post("/render", body, signal);
    return new Uint8Array(await res.arrayBuffer());
  }

  async query(body: QueryRequest, signal?: AbortSignal): Promise<QueryResponse> {
    const res = await this.post("/query", body, signal);
    return (await res.json()) as QueryResponse;
  }
}
