/** Synthetic handwritten-digit stand-in: a 5x7 pixel font rendered into
 * 28x28 images with random placement, scale, stroke intensity, and
 * noise. Procedural, so no dataset download is needed and every image
 * is reproducible from the generator seed. */

import { Rng } from "./rng";

const FONT: string[][] = [
  ["01110", "10001", "10011", "10101", "11001", "10001", "01110"], // 0
  ["00100", "01100", "00100", "00100", "00100", "00100", "01110"], // 1
  ["01110", "10001", "00001", "00010", "00100", "01000", "11111"], // 2
  ["11111", "00010", "00100", "00010", "00001", "10001", "01110"], // 3
  ["00010", "00110", "01010", "10010", "11111", "00010", "00010"], // 4
  ["11111", "10000", "11110", "00001", "00001", "10001", "01110"], // 5
  ["00110", "01000", "10000", "11110", "10001", "10001", "01110"], // 6
  ["11111", "00001", "00010", "00100", "01000", "01000", "01000"], // 7
  ["01110", "10001", "10001", "01110", "10001", "10001", "01110"], // 8
  ["01110", "10001", "10001", "01111", "00001", "00010", "01100"], // 9
];

export const IMAGE_SIZE = 28;
export const CLASS_COUNT = 10;

export interface GlyphSet {
  /** (count * 28 * 28) pixel bytes, row-major per image. */
  images: Uint8Array;
  labels: Uint8Array;
  count: number;
}

function renderDigit(out: Float64Array, digit: number, rng: Rng): void {
  out.fill(0);
  const scale = rng.next() < 0.5 ? 3 : 2 + rng.int(2); // 2 or 3
  const glyphW = 5 * scale;
  const glyphH = 7 * scale;
  const x0 = 1 + rng.int(IMAGE_SIZE - glyphW - 2);
  const y0 = 1 + rng.int(IMAGE_SIZE - glyphH - 2);
  const intensity = rng.uniform(0.6, 1.0);
  const rows = FONT[digit];
  for (let gy = 0; gy < 7; gy++) {
    for (let gx = 0; gx < 5; gx++) {
      if (rows[gy][gx] !== "1") {
        continue;
      }
      for (let dy = 0; dy < scale; dy++) {
        for (let dx = 0; dx < scale; dx++) {
          const y = y0 + gy * scale + dy;
          const x = x0 + gx * scale + dx;
          const jitter = rng.uniform(-0.15, 0.0);
          out[y * IMAGE_SIZE + x] = Math.min(1, Math.max(0, intensity + jitter));
        }
      }
    }
  }
  for (let i = 0; i < out.length; i++) {
    if (out[i] === 0) {
      out[i] = rng.uniform(0, 0.08);
    }
  }
}

export function makeGlyphs(seed: number, count: number): GlyphSet {
  const rng = new Rng(seed);
  const images = new Uint8Array(count * IMAGE_SIZE * IMAGE_SIZE);
  const labels = new Uint8Array(count);
  const pixels = new Float64Array(IMAGE_SIZE * IMAGE_SIZE);
  for (let n = 0; n < count; n++) {
    const digit = rng.int(CLASS_COUNT);
    renderDigit(pixels, digit, rng);
    labels[n] = digit;
    const base = n * pixels.length;
    for (let i = 0; i < pixels.length; i++) {
      images[base + i] = Math.round(pixels[i] * 255);
    }
  }
  return { images, labels, count };
}

/** One image as float64 pixels in [0, 1]. */
export function imageAt(set: GlyphSet, index: number): Float64Array {
  const size = IMAGE_SIZE * IMAGE_SIZE;
  const out = new Float64Array(size);
  const base = index * size;
  for (let i = 0; i < size; i++) {
    out[i] = set.images[base + i] / 255;
  }
  return out;
}
