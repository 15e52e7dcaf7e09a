/**
 * Training loop: Adam with a halving learning-rate schedule, Dice + BCE
 * on the mask head, MSE on the distance head. Checkpoints are a JSON
 * header plus a flat float32 weight blob; the format is internal to this
 * package.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import { DduNetConfig, DivergedLoss, ShapeMismatch, lrForEpoch, validateConfig } from './config.js';
import { TrainItem, loadEpochImages } from './dataset.js';
import { buildModel } from './model.js';
import { diceLoss, bceLoss, hardDice } from './losses.js';
import { buildTargets } from './targets.js';
import { RgbImage } from './png.js';
import { installFastConvGrad } from './fastconv.js';

export interface EpochLog {
  epoch: number;
  lr: number;
  diceBce: number;
  mse: number;
  total: number;
  /** hard train-set Dice; only measured on the final epoch (NaN before) */
  trainDice: number;
  /** materialized variant directory this epoch trained on, if any */
  source?: string;
}

export interface TrainResult {
  model: tf.LayersModel;
  log: EpochLog[];
}

interface Sample {
  id: string;
  /** [size, size, 3] */
  image: Float32Array;
  /** [size, size, 1] each */
  binary: Float32Array;
  distance: Float32Array;
}

/** Deterministic shuffle PRNG (mulberry32). */
function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function cropOffsets(w: number, h: number, size: number, id: string): { x0: number; y0: number } {
  if (w < size || h < size) {
    throw new ShapeMismatch(`image ${id} is ${w}x${h}, smaller than the ${size}px input`);
  }
  return { x0: Math.floor((w - size) / 2), y0: Math.floor((h - size) / 2) };
}

function cropImage(img: RgbImage, size: number, id: string): Float32Array {
  const { x0, y0 } = cropOffsets(img.width, img.height, size, id);
  const out = new Float32Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    const src = ((y + y0) * img.width + x0) * 3;
    out.set(img.data.subarray(src, src + size * 3), y * size * 3);
  }
  return out;
}

function toSamples(items: TrainItem[], size: number): Sample[] {
  return items.map((item) => {
    const { x0, y0 } = cropOffsets(item.mask.width, item.mask.height, size, item.id);
    const cropped = {
      width: size,
      height: size,
      labels: (() => {
        const l = new Uint32Array(size * size);
        for (let y = 0; y < size; y++) {
          for (let x = 0; x < size; x++) {
            l[y * size + x] = item.mask.labels[(y + y0) * item.mask.width + (x + x0)];
          }
        }
        return l;
      })(),
    };
    const t = buildTargets(cropped);
    return {
      id: item.id,
      image: cropImage(item.image, size, item.id),
      binary: t.binary,
      distance: t.distance,
    };
  });
}

function batchTensors(samples: Sample[], size: number) {
  const n = samples.length;
  const xs = new Float32Array(n * size * size * 3);
  const yb = new Float32Array(n * size * size);
  const yd = new Float32Array(n * size * size);
  samples.forEach((s, i) => {
    xs.set(s.image, i * size * size * 3);
    yb.set(s.binary, i * size * size);
    yd.set(s.distance, i * size * size);
  });
  return {
    x: tf.tensor4d(xs, [n, size, size, 3]),
    mask: tf.tensor4d(yb, [n, size, size, 1]),
    dist: tf.tensor4d(yd, [n, size, size, 1]),
  };
}

export interface TrainOptions {
  cfg: DduNetConfig;
  items: TrainItem[];
  /** materialized per-epoch variant directories; epoch e reads entry e % length */
  preparedEpochs?: string[];
  /** receives one line per epoch */
  onEpoch?: (log: EpochLog) => void;
}

export async function train(opts: TrainOptions): Promise<TrainResult> {
  const { cfg, items } = opts;
  validateConfig(cfg);
  if (items.length === 0) {
    throw new ShapeMismatch('no training items');
  }
  installFastConvGrad();

  const size = cfg.inputSize;
  let samples = toSamples(items, size);
  const model = buildModel(cfg);
  const optimizer = tf.train.adam(lrForEpoch(cfg, 1));

  const log: EpochLog[] = [];
  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    const lr = lrForEpoch(cfg, epoch);
    (optimizer as any).learningRate = lr;

    let source: string | undefined;
    if (opts.preparedEpochs && opts.preparedEpochs.length > 0) {
      source = opts.preparedEpochs[(epoch - 1) % opts.preparedEpochs.length];
      const imgs = loadEpochImages(source, items.map((i) => i.id));
      const swapped = items.map((i) => ({ ...i, image: imgs.get(i.id)! }));
      samples = toSamples(swapped, size);
    }

    const order = [...samples.keys()];
    const rand = rng((cfg.seed * 1_000_003 + epoch) >>> 0);
    for (let i = order.length - 1; i > 0; i--) {
      const j = Math.floor(rand() * (i + 1));
      [order[i], order[j]] = [order[j], order[i]];
    }

    let sumDiceBce = 0;
    let sumMse = 0;
    let batches = 0;
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const batch = order.slice(start, start + cfg.batchSize).map((i) => samples[i]);
      const { x, mask, dist } = batchTensors(batch, size);
      let maskLossVal = NaN;
      let distLossVal = NaN;
      const cost = optimizer.minimize(
        () => {
          const [pMask, pDist] = model.apply(x, { training: true }) as tf.Tensor[];
          const lMask = diceLoss(pMask, mask).add(bceLoss(pMask, mask)) as tf.Scalar;
          const lDist = pDist.sub(dist).square().mean() as tf.Scalar;
          maskLossVal = lMask.arraySync() as number;
          distLossVal = lDist.arraySync() as number;
          return lMask.add(lDist) as tf.Scalar;
        },
        true,
      );
      const total = cost!.arraySync() as number;
      tf.dispose([x, mask, dist, cost!]);
      if (!Number.isFinite(total)) {
        throw new DivergedLoss(`epoch ${epoch}: loss is ${total}`);
      }
      sumDiceBce += maskLossVal;
      sumMse += distLossVal;
      batches++;
    }

    const entry: EpochLog = {
      epoch,
      lr,
      diceBce: sumDiceBce / batches,
      mse: sumMse / batches,
      total: (sumDiceBce + sumMse) / batches,
      trainDice: NaN,
      ...(source ? { source } : {}),
    };
    if (epoch === cfg.epochs) {
      entry.trainDice = measureTrainDice(model, samples, size);
    }
    log.push(entry);
    opts.onEpoch?.(entry);
  }
  optimizer.dispose();
  return { model, log };
}

function measureTrainDice(model: tf.LayersModel, samples: Sample[], size: number): number {
  return tf.tidy(() => {
    const { x, mask } = batchTensors(samples, size);
    const [pMask] = model.predict(x) as tf.Tensor[];
    return hardDice(pMask, mask);
  });
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_FORMAT = 'ddunet-checkpoint';

interface WeightSpec {
  name: string;
  shape: number[];
}

export function saveCheckpoint(model: tf.LayersModel, cfg: DduNetConfig, dir: string): void {
  fs.mkdirSync(dir, { recursive: true });
  const weights = model.getWeights();
  // originalName is stable across process restarts and rebuilds; name
  // picks up a uniqueness suffix whenever the graph is built twice.
  const specs: WeightSpec[] = model.weights.map((w, i) => ({
    name: w.originalName,
    shape: weights[i].shape.slice(),
  }));
  let total = 0;
  for (const w of weights) total += w.size;
  const blob = Buffer.alloc(4 * total);
  let off = 0;
  for (const w of weights) {
    const vals = w.dataSync() as Float32Array;
    for (let i = 0; i < vals.length; i++) {
      blob.writeFloatLE(vals[i], off);
      off += 4;
    }
  }
  fs.writeFileSync(
    path.join(dir, 'checkpoint.json'),
    JSON.stringify({ format: CHECKPOINT_FORMAT, version: 1, config: cfg, weights: specs }, null, 2) + '\n',
  );
  fs.writeFileSync(path.join(dir, 'weights.bin'), blob);
}

export interface Checkpoint {
  cfg: DduNetConfig;
  model: tf.LayersModel;
}

export function loadCheckpoint(dir: string): Checkpoint {
  const doc = JSON.parse(fs.readFileSync(path.join(dir, 'checkpoint.json'), 'utf8'));
  if (doc.format !== CHECKPOINT_FORMAT) {
    throw new Error(`${dir}: not a ${CHECKPOINT_FORMAT} directory`);
  }
  const cfg = doc.config as DduNetConfig;
  validateConfig(cfg);
  const model = buildModel(cfg);
  const specs = doc.weights as WeightSpec[];
  const current = model.weights;
  if (specs.length !== current.length) {
    throw new Error(`${dir}: checkpoint has ${specs.length} weights, model has ${current.length}`);
  }
  const blob = fs.readFileSync(path.join(dir, 'weights.bin'));
  const tensors: tf.Tensor[] = [];
  let off = 0;
  for (let i = 0; i < specs.length; i++) {
    if (specs[i].name !== current[i].originalName) {
      throw new Error(`${dir}: weight ${i} is ${specs[i].name}, expected ${current[i].originalName}`);
    }
    const size = specs[i].shape.reduce((a, b) => a * b, 1);
    const vals = new Float32Array(size);
    for (let j = 0; j < size; j++) {
      vals[j] = blob.readFloatLE(off);
      off += 4;
    }
    tensors.push(tf.tensor(vals, specs[i].shape));
  }
  if (off !== blob.length) {
    throw new Error(`${dir}: weights.bin has ${blob.length} bytes, consumed ${off}`);
  }
  model.setWeights(tensors);
  tf.dispose(tensors);
  return { cfg, model };
}

export function saveTrainingLog(log: EpochLog[], dir: string): void {
  fs.writeFileSync(path.join(dir, 'training_log.json'), JSON.stringify(log, null, 2) + '\n');
}
