/** Canvas composition of the current view.
 *
 * Drawing decodes PNG bytes via createImageBitmap and paints with a 2d
 * context. Environments without those (e.g. DOM test harnesses) fall back to
 * a no-op — the viewer state itself never depends on having drawn. */

import type { SessionState } from "./session.js";

const MASK_TINT: [number, number, number] = [64, 220, 255];

function canDraw(): boolean {
  return typeof createImageBitmap === "function";
}

async function pngToBitmap(png: Uint8Array): Promise<ImageBitmap> {
  // copy into a plain ArrayBuffer so Blob accepts it regardless of backing
  const buf = new Uint8Array(png).buffer;
  return createImageBitmap(new Blob([buf], { type: "image/png" }));
}

/** Expand the 0/255 mask into tinted RGBA pixels (transparent outside). */
export function maskToImageData(
  mask: Uint8Array,
  width: number,
  height: number,
  alpha = 255,
): ImageData {
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] !== 0) {
      rgba[i * 4] = MASK_TINT[0];
      rgba[i * 4 + 1] = MASK_TINT[1];
      rgba[i * 4 + 2] = MASK_TINT[2];
      rgba[i * 4 + 3] = alpha;
    }
  }
  return new ImageData(rgba, width, height);
}

/** Paint the overlay for the given state. Resolves when drawn (or skipped). */
export async function drawOverlay(
  canvas: HTMLCanvasElement,
  state: SessionState,
): Promise<void> {
  const { result, mask, basePng, overlay, opacity, meta } = state;
  const shape = result?.shape ?? meta?.resolution ?? null;
  if (!shape || !canDraw()) return;
  const [height, width] = shape;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;

  if (canvas.width !== width || canvas.height !== height) {
    canvas.width = width;
    canvas.height = height;
  }
  ctx.clearRect(0, 0, width, height);

  if (basePng && (overlay === "color" || overlay === "depth" || overlay === "blended")) {
    const bitmap = await pngToBitmap(basePng);
    ctx.drawImage(bitmap, 0, 0, width, height);
  }

  if (overlay === "heatmap" && result) {
    const bitmap = await pngToBitmap(result.heatmapPng);
    ctx.drawImage(bitmap, 0, 0, width, height);
  } else if (overlay === "blended" && result) {
    const bitmap = await pngToBitmap(result.heatmapPng);
    ctx.globalAlpha = opacity;
    ctx.drawImage(bitmap, 0, 0, width, height);
    ctx.globalAlpha = 1;
  } else if (overlay === "mask" && mask) {
    // the client-side mask, not the server PNG: this is the thresholded view
    ctx.putImageData(maskToImageData(mask, width, height), 0, 0);
  }
}
