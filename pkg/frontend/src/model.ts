/**
 * Dual-decoder U-Net: one shared convolutional encoder whose stage
 * outputs feed two structurally identical decoders with separate
 * weights. Decoder 1 ends in a sigmoid head (foreground probability),
 * decoder 2 in a linear head (distance regression).
 */

import * as tf from '@tensorflow/tfjs';
import { DduNetConfig, validateConfig } from './config.js';

export const HEAD_MASK = 'mask_head';
export const HEAD_DISTANCE = 'distance_head';

class SeedCounter {
  constructor(private next: number) {}
  take(): number {
    return this.next++;
  }
}

function convBlock(
  x: tf.SymbolicTensor,
  filters: number,
  dropout: number,
  name: string,
  seeds: SeedCounter,
): tf.SymbolicTensor {
  let y = tf.layers
    .conv2d({
      filters,
      kernelSize: 3,
      padding: 'same',
      activation: 'relu',
      name: `${name}_conv_a`,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.take() }),
    })
    .apply(x) as tf.SymbolicTensor;
  y = tf.layers
    .conv2d({
      filters,
      kernelSize: 3,
      padding: 'same',
      activation: 'relu',
      name: `${name}_conv_b`,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.take() }),
    })
    .apply(y) as tf.SymbolicTensor;
  if (dropout > 0) {
    y = tf.layers
      .dropout({ rate: dropout, name: `${name}_drop`, seed: seeds.take() })
      .apply(y) as tf.SymbolicTensor;
  }
  return y;
}

function decoder(
  bottleneck: tf.SymbolicTensor,
  skips: tf.SymbolicTensor[],
  cfg: DduNetConfig,
  prefix: string,
  seeds: SeedCounter,
): tf.SymbolicTensor {
  let x = bottleneck;
  for (let stage = cfg.depth - 1; stage >= 0; stage--) {
    const filters = cfg.width * 2 ** stage;
    x = tf.layers
      .conv2dTranspose({
        filters,
        kernelSize: 2,
        strides: 2,
        name: `${prefix}_up${stage}`,
        kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.take() }),
      })
      .apply(x) as tf.SymbolicTensor;
    x = tf.layers
      .concatenate({ name: `${prefix}_skip${stage}` })
      .apply([x, skips[stage]]) as tf.SymbolicTensor;
    x = convBlock(x, filters, cfg.dropout, `${prefix}_dec${stage}`, seeds);
  }
  return x;
}

function buildGraph(cfg: DduNetConfig, dualDecoder: boolean): tf.LayersModel {
  validateConfig(cfg);
  const seeds = new SeedCounter(cfg.seed * 10_000 + 1);
  // spatial dims stay symbolic so export can run on any size divisible
  // by 2^depth, not only the training crop
  const input = tf.input({ shape: [null, null, 3], name: 'rgb' });

  const skips: tf.SymbolicTensor[] = [];
  let x = input;
  for (let stage = 0; stage < cfg.depth; stage++) {
    const filters = cfg.width * 2 ** stage;
    x = convBlock(x, filters, cfg.dropout, `enc${stage}`, seeds);
    skips.push(x);
    x = tf.layers.maxPooling2d({ poolSize: 2, name: `pool${stage}` }).apply(x) as tf.SymbolicTensor;
  }
  const bottleneck = convBlock(x, cfg.width * 2 ** cfg.depth, cfg.dropout, 'bottleneck', seeds);

  const maskTrunk = decoder(bottleneck, skips, cfg, 'm', seeds);
  const maskHead = tf.layers
    .conv2d({
      filters: 1,
      kernelSize: 1,
      activation: 'sigmoid',
      name: HEAD_MASK,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.take() }),
    })
    .apply(maskTrunk) as tf.SymbolicTensor;

  if (!dualDecoder) {
    return tf.model({ inputs: input, outputs: [maskHead] });
  }

  const distTrunk = decoder(bottleneck, skips, cfg, 'd', seeds);
  const distHead = tf.layers
    .conv2d({
      filters: 1,
      kernelSize: 1,
      name: HEAD_DISTANCE,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.take() }),
    })
    .apply(distTrunk) as tf.SymbolicTensor;

  return tf.model({ inputs: input, outputs: [maskHead, distHead] });
}

export function buildModel(cfg: DduNetConfig): tf.LayersModel {
  return buildGraph(cfg, true);
}

/** Same encoder and decoder shape with only the mask branch; exists so the
 * cost of the second decoder is measurable. */
export function buildSingleDecoderModel(cfg: DduNetConfig): tf.LayersModel {
  return buildGraph(cfg, false);
}
