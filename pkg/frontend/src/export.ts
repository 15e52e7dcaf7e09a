/**
 * Map export: run a trained checkpoint over a directory of PNG tiles and
 * write one .f32m per tile, named `<image_id>__<variant_id>.f32m` so a
 * map-directory predictor can serve them. Channel 0 is the foreground
 * probability, channel 1 the predicted normalized distance.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import { ShapeMismatch } from './config.js';
import { encodeF32m, FloatMap } from './f32m.js';
import { readRgb } from './png.js';
import { Checkpoint } from './train.js';

export interface ExportedMap {
  source: string;
  output: string;
}

/** `tile__variant.png` keeps its stem; a bare `tile.png` becomes `tile__orig`. */
export function outputStem(pngName: string): string {
  const stem = pngName.replace(/\.png$/i, '');
  return stem.includes('__') ? stem : `${stem}__orig`;
}

export function predictMaps(ckpt: Checkpoint, image: { width: number; height: number; data: Float32Array }): FloatMap {
  const div = 2 ** ckpt.cfg.depth;
  if (image.width % div !== 0 || image.height % div !== 0) {
    throw new ShapeMismatch(
      `image is ${image.width}x${image.height}; both sides must be multiples of ${div} (depth ${ckpt.cfg.depth})`,
    );
  }
  return tf.tidy(() => {
    const x = tf.tensor4d(image.data, [1, image.height, image.width, 3]);
    const [pMask, pDist] = ckpt.model.predict(x) as tf.Tensor[];
    const prob = pMask.dataSync() as Float32Array;
    const dist = pDist.dataSync() as Float32Array;
    const n = image.width * image.height;
    const data = new Float32Array(n * 2);
    for (let i = 0; i < n; i++) {
      data[2 * i] = prob[i];
      data[2 * i + 1] = dist[i];
    }
    return { width: image.width, height: image.height, channels: 2, data };
  });
}

export function exportMaps(ckpt: Checkpoint, imagesDir: string, outDir: string): ExportedMap[] {
  const names = fs
    .readdirSync(imagesDir)
    .filter((n) => n.toLowerCase().endsWith('.png'))
    .sort();
  if (names.length === 0) {
    throw new Error(`${imagesDir}: no .png files to export`);
  }
  fs.mkdirSync(outDir, { recursive: true });
  const done: ExportedMap[] = [];
  for (const name of names) {
    const img = readRgb(fs.readFileSync(path.join(imagesDir, name)));
    const maps = predictMaps(ckpt, img);
    const output = path.join(outDir, `${outputStem(name)}.f32m`);
    fs.writeFileSync(output, encodeF32m(maps));
    done.push({ source: path.join(imagesDir, name), output });
  }
  return done;
}
