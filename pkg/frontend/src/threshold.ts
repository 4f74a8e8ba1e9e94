/** Client-side rethresholding of raw relevancy scores.
 *
 * The server computes its mask as `scores >= float32(threshold)` on float32
 * scores. Scores arrive here as exact float32 values (decoded from the
 * little-endian buffer), so rounding the threshold through float32 with
 * Math.fround makes the comparison bit-identical to the server's: a float32
 * widens to float64 exactly, so comparing the widened values is the same as
 * comparing in float32. This is what lets the viewer fetch scores once and
 * move the threshold slider without another request.
 */

/** Binary mask, 255 where score >= threshold else 0 — the same pixel values
 * the server's mask PNG uses, so the two can be compared byte-for-byte. */
export function thresholdMask(scores: Float32Array, threshold: number): Uint8Array {
  const t = Math.fround(threshold);
  const out = new Uint8Array(scores.length);
  for (let i = 0; i < scores.length; i++) {
    out[i] = scores[i] >= t ? 255 : 0;
  }
  return out;
}

/** Fraction of pixels inside the mask. */
export function coverage(mask: Uint8Array): number {
  if (mask.length === 0) return 0;
  let n = 0;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] !== 0) n++;
  }
  return n / mask.length;
}
