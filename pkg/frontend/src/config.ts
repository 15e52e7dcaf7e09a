export class InvalidConfig extends Error {}

/** Training loss became non-finite; the run cannot continue. */
export class DivergedLoss extends Error {}

/** An image's shape is incompatible with the network. */
export class ShapeMismatch extends Error {}

export interface DduNetConfig {
  /** square input size in pixels; must be divisible by 2^depth */
  inputSize: number;
  /** number of pooling stages in the shared encoder */
  depth: number;
  /** channel width of the first encoder stage; doubles per stage */
  width: number;
  dropout: number;
  epochs: number;
  /** initial Adam learning rate; halved every lrHalveEvery epochs */
  learningRate: number;
  lrHalveEvery: number;
  batchSize: number;
  seed: number;
}

/** Small enough to train on a laptop CPU in minutes. */
export const TOY_DEFAULTS: DduNetConfig = {
  inputSize: 64,
  depth: 3,
  width: 16,
  dropout: 0.1,
  epochs: 50,
  learningRate: 0.001,
  lrHalveEvery: 30,
  batchSize: 4,
  seed: 0,
};

export function validateConfig(cfg: DduNetConfig): void {
  const step = 2 ** cfg.depth;
  if (!Number.isInteger(cfg.inputSize) || cfg.inputSize <= 0 || cfg.inputSize % step !== 0) {
    throw new InvalidConfig(
      `input size ${cfg.inputSize} must be a positive multiple of 2^depth = ${step}`,
    );
  }
  if (!Number.isInteger(cfg.depth) || cfg.depth < 1) {
    throw new InvalidConfig(`depth must be a positive integer, got ${cfg.depth}`);
  }
  if (!Number.isInteger(cfg.width) || cfg.width < 1) {
    throw new InvalidConfig(`width must be a positive integer, got ${cfg.width}`);
  }
  if (!(cfg.dropout >= 0 && cfg.dropout < 1)) {
    throw new InvalidConfig(`dropout must be in [0, 1), got ${cfg.dropout}`);
  }
  if (!Number.isInteger(cfg.epochs) || cfg.epochs < 1) {
    throw new InvalidConfig(`epochs must be a positive integer, got ${cfg.epochs}`);
  }
  if (!(cfg.learningRate > 0)) {
    throw new InvalidConfig(`learning rate must be positive, got ${cfg.learningRate}`);
  }
  if (!Number.isInteger(cfg.lrHalveEvery) || cfg.lrHalveEvery < 1) {
    throw new InvalidConfig(`lrHalveEvery must be a positive integer, got ${cfg.lrHalveEvery}`);
  }
  if (!Number.isInteger(cfg.batchSize) || cfg.batchSize < 1) {
    throw new InvalidConfig(`batch size must be a positive integer, got ${cfg.batchSize}`);
  }
}

/** Learning rate in effect for a 1-based epoch number. */
export function lrForEpoch(cfg: DduNetConfig, epoch: number): number {
  const halvings = Math.floor((epoch - 1) / cfg.lrHalveEvery);
  return cfg.learningRate * 0.5 ** halvings;
}
