export { DduNetConfig, DivergedLoss, InvalidConfig, ShapeMismatch, TOY_DEFAULTS, lrForEpoch, validateConfig } from './config.js';
export { FloatMap, decodeF32m, encodeF32m } from './f32m.js';
export { LabelImage, RgbImage, readLabels, readRgb } from './png.js';
export {
  AugmentationPlan,
  Manifest,
  ManifestEntry,
  ManifestError,
  PlanError,
  SUPPORTED_RNG,
  TrainItem,
  listEpochDirs,
  loadManifest,
  loadPlan,
  loadTrainItems,
} from './dataset.js';
export { Targets, buildTargets } from './targets.js';
export { HEAD_DISTANCE, HEAD_MASK, buildModel, buildSingleDecoderModel } from './model.js';
export { bceLoss, diceBceFromLogits, diceBceLoss, diceLoss, hardDice, mseLoss } from './losses.js';
export { installFastConvGrad } from './fastconv.js';
export {
  Checkpoint,
  EpochLog,
  TrainOptions,
  TrainResult,
  loadCheckpoint,
  saveCheckpoint,
  saveTrainingLog,
  train,
} from './train.js';
export { exportMaps, outputStem, predictMaps } from './export.js';
