import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { PNG } from 'pngjs';

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function tmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `${prefix}-`));
}

/** Encode an 8-bit RGB PNG from a per-pixel [r, g, b] function (0..255). */
export function encodeRgbPng(
  width: number,
  height: number,
  px: (x: number, y: number) => [number, number, number],
): Buffer {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = px(x, y);
      const i = 4 * (y * width + x);
      png.data[i] = r;
      png.data[i + 1] = g;
      png.data[i + 2] = b;
      png.data[i + 3] = 255;
    }
  }
  return PNG.sync.write(png, { colorType: 2 });
}

/** Encode a 16-bit grayscale PNG from a label raster (values < 65536). */
export function encodeGray16Png(width: number, height: number, labels: ArrayLike<number>): Buffer {
  const png = new PNG({ width, height });
  const vals = new Uint16Array(width * height);
  for (let i = 0; i < vals.length; i++) vals[i] = labels[i];
  png.data = Buffer.from(vals.buffer) as any;
  return PNG.sync.write(png, {
    colorType: 0,
    bitDepth: 16,
    inputColorType: 0,
    inputHasAlpha: false,
  } as any);
}

export interface FixtureScene {
  /** float [0,1] RGB, length size*size*3 */
  image: Float32Array;
  labels: Uint32Array;
  size: number;
}

/**
 * Synthetic H&E-ish tile: light pink background, dark purple elliptical
 * nuclei on a jittered grid. High-contrast on purpose; these exist to be
 * learnable, not realistic.
 */
export function makeScene(seed: number, size = 64, nuclei = 4): FixtureScene {
  const rand = mulberry32(seed);
  const image = new Float32Array(size * size * 3);
  const labels = new Uint32Array(size * size);
  for (let i = 0; i < size * size; i++) {
    const n = (rand() - 0.5) * 0.04;
    image[3 * i] = 0.91 + n;
    image[3 * i + 1] = 0.76 + n;
    image[3 * i + 2] = 0.86 + n;
  }
  const cells = Math.ceil(Math.sqrt(nuclei));
  const cell = size / cells;
  let label = 0;
  for (let k = 0; k < nuclei; k++) {
    label++;
    const cx = (k % cells) * cell + cell / 2 + (rand() - 0.5) * cell * 0.3;
    const cy = Math.floor(k / cells) * cell + cell / 2 + (rand() - 0.5) * cell * 0.3;
    const rx = cell * (0.18 + rand() * 0.12);
    const ry = cell * (0.18 + rand() * 0.12);
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        const dx = (x - cx) / rx;
        const dy = (y - cy) / ry;
        if (dx * dx + dy * dy <= 1) {
          const i = y * size + x;
          labels[i] = label;
          const n = (rand() - 0.5) * 0.06;
          image[3 * i] = 0.38 + n;
          image[3 * i + 1] = 0.2 + n;
          image[3 * i + 2] = 0.5 + n;
        }
      }
    }
  }
  return { image, labels, size };
}

export interface FixtureDataset {
  dir: string;
  manifestPath: string;
  scenes: FixtureScene[];
}

/** Write scenes as PNG pairs plus a manifest, all under a fresh tmp dir. */
export function writeFixtureDataset(seed: number, n: number, size = 64, split = 'train'): FixtureDataset {
  const dir = tmpDir('ddunet-fixture');
  const scenes: FixtureScene[] = [];
  const entries = [];
  for (let k = 0; k < n; k++) {
    const scene = makeScene(seed + 1000 * k, size);
    scenes.push(scene);
    const id = `img_${String(k).padStart(2, '0')}`;
    const rgb = encodeRgbPng(size, size, (x, y) => {
      const i = y * size + x;
      return [
        Math.round(scene.image[3 * i] * 255),
        Math.round(scene.image[3 * i + 1] * 255),
        Math.round(scene.image[3 * i + 2] * 255),
      ];
    });
    fs.writeFileSync(path.join(dir, `${id}.png`), rgb);
    fs.writeFileSync(path.join(dir, `${id}_mask.png`), encodeGray16Png(size, size, scene.labels));
    entries.push({
      id,
      image: `${id}.png`,
      mask: `${id}_mask.png`,
      organ: 'synthetic',
      split,
    });
  }
  const manifestPath = path.join(dir, 'manifest.json');
  fs.writeFileSync(manifestPath, JSON.stringify({ name: 'fixture', entries }, null, 2));
  return { dir, manifestPath, scenes };
}
