import { PNG } from 'pngjs';

/** Planar float32 RGB image scaled to [0, 1], layout [y][x][c]. */
export interface RgbImage {
  width: number;
  height: number;
  /** length = height * width * 3 */
  data: Float32Array;
}

/** Instance label raster; 0 is background. */
export interface LabelImage {
  width: number;
  height: number;
  /** length = height * width */
  labels: Uint32Array;
}

export function readRgb(buf: Buffer): RgbImage {
  const png = PNG.sync.read(buf);
  const { width, height } = png;
  const data = new Float32Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    data[3 * i] = png.data[4 * i] / 255;
    data[3 * i + 1] = png.data[4 * i + 1] / 255;
    data[3 * i + 2] = png.data[4 * i + 2] / 255;
  }
  return { width, height, data };
}

/**
 * Read an instance mask. Label rasters come as 8- or 16-bit grayscale;
 * skipRescale keeps 16-bit sample values intact (the default path would
 * shift labels down to 8 bits and flatten small ids to zero).
 */
export function readLabels(buf: Buffer): LabelImage {
  const png = PNG.sync.read(buf, { skipRescale: true });
  const { width, height } = png;
  const labels = new Uint32Array(width * height);
  // pngjs always expands to RGBA; for grayscale input R carries the value.
  for (let i = 0; i < width * height; i++) {
    labels[i] = png.data[4 * i];
  }
  return { width, height, labels };
}
