/**
 * Training-target construction from an instance label raster:
 *   head 1 target: binary foreground mask (any instance -> 1)
 *   head 2 target: per-instance Euclidean distance transform, each
 *     instance normalized by its own maximum, 0 on background.
 *
 * Pixels outside the raster count as background, so an instance clipped
 * by the image border still falls off toward that border.
 */

import { LabelImage } from './png.js';

export interface Targets {
  width: number;
  height: number;
  /** 0/1 foreground, length = height * width */
  binary: Float32Array;
  /** normalized distance in [0, 1], length = height * width */
  distance: Float32Array;
}

/**
 * Large finite stand-in for "no background here". Actual Infinity would
 * turn the parabola intersection below into (inf - inf) = NaN.
 */
const FAR = 1e20;

/**
 * Squared Euclidean distance transform of one row/column, lower-envelope
 * parabola method. f holds 0 at background sites and FAR elsewhere;
 * d receives squared distances. v and z are scratch of length n and n+1.
 */
function edt1d(f: Float64Array, n: number, d: Float64Array, v: Int32Array, z: Float64Array): void {
  let k = 0;
  v[0] = 0;
  z[0] = -Infinity;
  z[1] = Infinity;
  for (let q = 1; q < n; q++) {
    let s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k]);
    while (s <= z[k]) {
      k--;
      s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k]);
    }
    k++;
    v[k] = q;
    z[k] = s;
    z[k + 1] = Infinity;
  }
  k = 0;
  for (let q = 0; q < n; q++) {
    while (z[k + 1] < q) k++;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

/** 2D squared EDT over a grid where inside[i] marks non-background sites. */
function edt2d(inside: Uint8Array, width: number, height: number): Float64Array {
  const g = new Float64Array(width * height);
  const maxLen = Math.max(width, height);
  const f = new Float64Array(maxLen);
  const d = new Float64Array(maxLen);
  const v = new Int32Array(maxLen);
  const z = new Float64Array(maxLen + 1);

  // pass 1: along columns
  for (let x = 0; x < width; x++) {
    for (let y = 0; y < height; y++) {
      f[y] = inside[y * width + x] ? FAR : 0;
    }
    edt1d(f, height, d, v, z);
    for (let y = 0; y < height; y++) {
      g[y * width + x] = d[y];
    }
  }
  // pass 2: along rows
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      f[x] = g[y * width + x];
    }
    edt1d(f, width, d, v, z);
    for (let x = 0; x < width; x++) {
      g[y * width + x] = d[x];
    }
  }
  return g;
}

export function buildTargets(mask: LabelImage): Targets {
  const { width, height, labels } = mask;
  const binary = new Float32Array(width * height);
  const distance = new Float32Array(width * height);

  const ids = new Set<number>();
  for (let i = 0; i < labels.length; i++) {
    if (labels[i] > 0) {
      binary[i] = 1;
      ids.add(labels[i]);
    }
  }

  for (const id of ids) {
    // bounding box, padded by one pixel of virtual background
    let x0 = width, x1 = -1, y0 = height, y1 = -1;
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        if (labels[y * width + x] === id) {
          if (x < x0) x0 = x;
          if (x > x1) x1 = x;
          if (y < y0) y0 = y;
          if (y > y1) y1 = y;
        }
      }
    }
    const bw = x1 - x0 + 3;
    const bh = y1 - y0 + 3;
    const inside = new Uint8Array(bw * bh);
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if (labels[y * width + x] === id) {
          inside[(y - y0 + 1) * bw + (x - x0 + 1)] = 1;
        }
      }
    }
    const sq = edt2d(inside, bw, bh);
    let maxD = 0;
    for (let i = 0; i < sq.length; i++) {
      if (inside[i] && sq[i] > maxD) maxD = sq[i];
    }
    const norm = maxD > 0 ? 1 / Math.sqrt(maxD) : 0;
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if (labels[y * width + x] === id) {
          const b = (y - y0 + 1) * bw + (x - x0 + 1);
          distance[y * width + x] = Math.sqrt(sq[b]) * norm;
        }
      }
    }
  }
  return { width, height, binary, distance };
}
