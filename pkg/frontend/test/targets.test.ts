import { describe, expect, it } from 'vitest';
import { buildTargets } from '../src/targets.js';
import { makeScene, mulberry32 } from './helpers.js';

/**
 * Brute-force oracle: for every instance pixel, scan every site that is
 * not part of the same instance (other labels, background, and a one-pixel
 * ring outside the raster standing in for the infinite outside) and take
 * the minimum Euclidean distance. Then normalize per instance by its max.
 */
function bruteDistance(labels: Uint32Array, width: number, height: number): Float64Array {
  const out = new Float64Array(width * height);
  const maxPer = new Map<number, number>();
  const raw = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const id = labels[y * width + x];
      if (id === 0) continue;
      let best = Infinity;
      for (let sy = -1; sy <= height; sy++) {
        for (let sx = -1; sx <= width; sx++) {
          const outside = sx < 0 || sy < 0 || sx >= width || sy >= height;
          const sid = outside ? 0 : labels[sy * width + sx];
          if (sid === id) continue;
          const d = Math.hypot(sx - x, sy - y);
          if (d < best) best = d;
        }
      }
      raw[y * width + x] = best;
      maxPer.set(id, Math.max(maxPer.get(id) ?? 0, best));
    }
  }
  for (let i = 0; i < raw.length; i++) {
    if (labels[i] > 0) out[i] = raw[i] / maxPer.get(labels[i])!;
  }
  return out;
}

function expectClose(got: Float32Array, want: Float64Array, tol = 1e-5): void {
  expect(got.length).toBe(want.length);
  for (let i = 0; i < got.length; i++) {
    if (Math.abs(got[i] - want[i]) > tol) {
      throw new Error(`index ${i}: got ${got[i]}, want ${want[i]}`);
    }
  }
}

function randomLabels(seed: number, width: number, height: number, blobs: number): Uint32Array {
  const rand = mulberry32(seed);
  const labels = new Uint32Array(width * height);
  for (let k = 1; k <= blobs; k++) {
    const cx = rand() * width;
    const cy = rand() * height;
    const r = 1 + rand() * 4;
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        if ((x - cx) ** 2 + (y - cy) ** 2 <= r * r) labels[y * width + x] = k;
      }
    }
  }
  return labels;
}

describe('distance target', () => {
  it('matches the brute-force oracle on random blob rasters', () => {
    for (const seed of [3, 17, 52, 99]) {
      const w = 17;
      const h = 13;
      const labels = randomLabels(seed, w, h, 4);
      const t = buildTargets({ width: w, height: h, labels });
      expectClose(t.distance, bruteDistance(labels, w, h));
    }
  });

  it('treats the raster border as background', () => {
    // instance flush against the top-left corner: the corner pixel sits
    // one step from the virtual outside, so it cannot be the peak
    const w = 8;
    const h = 8;
    const labels = new Uint32Array(w * h);
    for (let y = 0; y < 5; y++) for (let x = 0; x < 5; x++) labels[y * w + x] = 1;
    const t = buildTargets({ width: w, height: h, labels });
    expectClose(t.distance, bruteDistance(labels, w, h));
    expect(t.distance[0]).toBeLessThan(t.distance[2 * w + 2]);
    expect(t.distance[2 * w + 2]).toBe(1);
  });

  it('resets to 1 at the contact line of touching instances', () => {
    // two abutting rectangles: pixels on either side of the shared edge
    // are one step from the other instance, so their distance is minimal
    const w = 10;
    const h = 6;
    const labels = new Uint32Array(w * h);
    for (let y = 1; y < 5; y++) {
      for (let x = 1; x < 5; x++) labels[y * w + x] = 1;
      for (let x = 5; x < 9; x++) labels[y * w + x] = 2;
    }
    const t = buildTargets({ width: w, height: h, labels });
    expectClose(t.distance, bruteDistance(labels, w, h));
    const mid = 3 * w;
    // contact pixels mirror the outer-edge pixels of their own instance
    expect(t.distance[mid + 4]).toBeCloseTo(t.distance[mid + 1], 6);
    expect(t.distance[mid + 5]).toBeCloseTo(t.distance[mid + 8], 6);
    expect(t.distance[mid + 4]).toBeLessThan(t.distance[mid + 2]);
  });

  it('gives a single-pixel instance distance 1', () => {
    const labels = new Uint32Array(25);
    labels[12] = 7;
    const t = buildTargets({ width: 5, height: 5, labels });
    expect(t.distance[12]).toBe(1);
    expect(t.binary[12]).toBe(1);
  });

  it('handles the synthetic training scenes', () => {
    const scene = makeScene(5, 32, 3);
    const t = buildTargets({ width: 32, height: 32, labels: scene.labels });
    expectClose(t.distance, bruteDistance(scene.labels, 32, 32));
  });
});

describe('binary target', () => {
  it('is the foreground indicator', () => {
    const labels = randomLabels(8, 12, 9, 3);
    const t = buildTargets({ width: 12, height: 9, labels });
    for (let i = 0; i < labels.length; i++) {
      expect(t.binary[i]).toBe(labels[i] > 0 ? 1 : 0);
    }
  });

  it('is all zero on an empty raster, as is the distance', () => {
    const t = buildTargets({ width: 6, height: 4, labels: new Uint32Array(24) });
    expect(Array.from(t.binary).every((v) => v === 0)).toBe(true);
    expect(Array.from(t.distance).every((v) => v === 0)).toBe(true);
  });

  it('peaks in [0, 1] with the peak at 1 for every instance', () => {
    const scene = makeScene(21, 48, 5);
    const t = buildTargets({ width: 48, height: 48, labels: scene.labels });
    const peaks = new Map<number, number>();
    for (let i = 0; i < scene.labels.length; i++) {
      const id = scene.labels[i];
      expect(t.distance[i]).toBeGreaterThanOrEqual(0);
      expect(t.distance[i]).toBeLessThanOrEqual(1);
      if (id > 0) peaks.set(id, Math.max(peaks.get(id) ?? 0, t.distance[i]));
    }
    expect(peaks.size).toBeGreaterThan(1);
    for (const [, peak] of peaks) expect(peak).toBeCloseTo(1, 6);
  });
});
