/**
 * Losses: the mask head trains on Dice + binary cross-entropy, the
 * distance head on mean squared error.
 */

import * as tf from '@tensorflow/tfjs';

const SMOOTH = 1e-6;
const BCE_EPS = 1e-7;

/** Soft Dice loss, computed per sample and averaged over the batch. */
export function diceLoss(probs: tf.Tensor, targets: tf.Tensor): tf.Scalar {
  return tf.tidy(() => {
    const n = probs.shape[0]!;
    const p = probs.reshape([n, -1]);
    const t = targets.reshape([n, -1]);
    const inter = p.mul(t).sum(1);
    const denom = p.sum(1).add(t.sum(1));
    const dice = inter.mul(2).add(SMOOTH).div(denom.add(SMOOTH));
    return tf.scalar(1).sub(dice.mean()) as tf.Scalar;
  });
}

/** Mean binary cross-entropy on probabilities, clipped away from {0, 1}. */
export function bceLoss(probs: tf.Tensor, targets: tf.Tensor): tf.Scalar {
  return tf.tidy(() => {
    const p = probs.clipByValue(BCE_EPS, 1 - BCE_EPS);
    const t = targets;
    const perPixel = t.mul(p.log()).add(tf.scalar(1).sub(t).mul(tf.scalar(1).sub(p).log()));
    return perPixel.mean().neg() as tf.Scalar;
  });
}

export function diceBceLoss(probs: tf.Tensor, targets: tf.Tensor): tf.Scalar {
  return tf.tidy(() => diceLoss(probs, targets).add(bceLoss(probs, targets)) as tf.Scalar);
}

/** Dice + BCE as a function of pre-sigmoid logits. */
export function diceBceFromLogits(logits: tf.Tensor, targets: tf.Tensor): tf.Scalar {
  return tf.tidy(() => diceBceLoss(tf.sigmoid(logits), targets));
}

export function mseLoss(pred: tf.Tensor, targets: tf.Tensor): tf.Scalar {
  return tf.tidy(() => pred.sub(targets).square().mean() as tf.Scalar);
}

/**
 * Hard Dice score of thresholded probabilities against a binary mask,
 * over the whole batch. This is the training metric, not a loss.
 */
export function hardDice(probs: tf.Tensor, targets: tf.Tensor, threshold = 0.5): number {
  return tf.tidy(() => {
    const p = probs.greater(threshold).cast('float32');
    const inter = p.mul(targets).sum().arraySync() as number;
    const total = (p.sum().arraySync() as number) + (targets.sum().arraySync() as number);
    return total === 0 ? 1 : (2 * inter) / total;
  });
}

/**
 * Reference Dice + BCE in plain float64 arithmetic, for gradient and
 * value cross-checks. Mirrors diceBceFromLogits on a single sample.
 */
export function diceBceFromLogitsRef(logits: ArrayLike<number>, targets: ArrayLike<number>): number {
  const n = logits.length;
  let inter = 0;
  let pSum = 0;
  let tSum = 0;
  let bce = 0;
  for (let i = 0; i < n; i++) {
    const p = 1 / (1 + Math.exp(-logits[i]));
    const pc = Math.min(Math.max(p, BCE_EPS), 1 - BCE_EPS);
    const t = targets[i];
    inter += p * t;
    pSum += p;
    tSum += t;
    bce -= t * Math.log(pc) + (1 - t) * Math.log(1 - pc);
  }
  const dice = (2 * inter + SMOOTH) / (pSum + tSum + SMOOTH);
  return 1 - dice + bce / n;
}
