/**
 * Readers for the dataset manifest and augmentation-plan JSON documents
 * produced by the stainseg tooling, plus loading of materialized training
 * epochs. Interchange is file-based only: manifest JSON, plan JSON, PNG
 * images and masks.
 */

import * as fs from 'fs';
import * as path from 'path';
import { readRgb, readLabels, RgbImage, LabelImage } from './png.js';

export interface ManifestEntry {
  id: string;
  image: string;
  mask?: string;
  organ?: string;
  split: 'train' | 'test';
}

export interface Manifest {
  name: string;
  entries: ManifestEntry[];
  /** directory the relative image/mask paths are resolved against */
  baseDir: string;
}

export class ManifestError extends Error {}

export function loadManifest(manifestPath: string): Manifest {
  const text = fs.readFileSync(manifestPath, 'utf8');
  let doc: any;
  try {
    doc = JSON.parse(text);
  } catch (e) {
    throw new ManifestError(`${manifestPath}: not valid JSON`);
  }
  if (typeof doc !== 'object' || doc === null || !Array.isArray(doc.entries)) {
    throw new ManifestError(`${manifestPath}: expected {name, entries: [...]}`);
  }
  const seen = new Set<string>();
  for (const e of doc.entries) {
    if (typeof e.id !== 'string' || typeof e.image !== 'string' || typeof e.split !== 'string') {
      throw new ManifestError(`${manifestPath}: entry missing id/image/split`);
    }
    if (e.split !== 'train' && e.split !== 'test') {
      throw new ManifestError(`${manifestPath}: entry ${e.id}: bad split ${e.split}`);
    }
    if (seen.has(e.id)) {
      throw new ManifestError(`${manifestPath}: duplicate id ${e.id}`);
    }
    seen.add(e.id);
  }
  return {
    name: String(doc.name ?? ''),
    entries: doc.entries,
    baseDir: path.dirname(path.resolve(manifestPath)),
  };
}

export function resolveEntryPath(m: Manifest, rel: string): string {
  return path.isAbsolute(rel) ? rel : path.join(m.baseDir, rel);
}

export interface TrainItem {
  id: string;
  image: RgbImage;
  mask: LabelImage;
}

/** Load the train split; every train entry must carry a mask. */
export function loadTrainItems(m: Manifest): TrainItem[] {
  const items: TrainItem[] = [];
  for (const e of m.entries) {
    if (e.split !== 'train') continue;
    if (!e.mask) {
      throw new ManifestError(`train entry ${e.id} has no mask`);
    }
    const image = readRgb(fs.readFileSync(resolveEntryPath(m, e.image)));
    const mask = readLabels(fs.readFileSync(resolveEntryPath(m, e.mask)));
    if (image.width !== mask.width || image.height !== mask.height) {
      throw new ManifestError(
        `entry ${e.id}: image ${image.width}x${image.height} vs mask ${mask.width}x${mask.height}`,
      );
    }
    items.push({ id: e.id, image, mask });
  }
  return items;
}

// ---------------------------------------------------------------------------
// Augmentation plan

/** The seeded-draw generator the plan's draws were produced with. */
export const SUPPORTED_RNG = 'philox4x64/seedseq(seed,epoch,item)';

export interface AugmentationPlan {
  pPassthrough: number;
  referencePaths: string[];
  seed: number;
  rngAlgorithm: string;
}

export class PlanError extends Error {}

export function loadPlan(planPath: string): AugmentationPlan {
  const doc = JSON.parse(fs.readFileSync(planPath, 'utf8'));
  const plan: AugmentationPlan = {
    pPassthrough: Number(doc.p_passthrough),
    referencePaths: doc.references ?? [],
    seed: Number(doc.seed),
    rngAlgorithm: String(doc.rng_algorithm ?? ''),
  };
  if (!(plan.pPassthrough >= 0 && plan.pPassthrough <= 1)) {
    throw new PlanError(`${planPath}: p_passthrough out of [0, 1]`);
  }
  if (plan.rngAlgorithm !== SUPPORTED_RNG) {
    // Refuse rather than silently resample with a different generator;
    // the draws would no longer be the planned ones.
    throw new PlanError(
      `${planPath}: plan draws use ${JSON.stringify(plan.rngAlgorithm)}, ` +
        `this trainer only consumes variants materialized from ${JSON.stringify(SUPPORTED_RNG)}`,
    );
  }
  return plan;
}

/**
 * A directory of materialized training variants: either one subdirectory
 * per epoch (epoch000, epoch001, ...) or a flat set of <id>.png files
 * reused every epoch. Color augmentation does not move pixels, so the
 * manifest masks stay valid for every variant.
 */
export function listEpochDirs(preparedDir: string): string[] {
  const entries = fs
    .readdirSync(preparedDir, { withFileTypes: true })
    .filter((d) => d.isDirectory() && /^epoch\d+$/.test(d.name))
    .map((d) => d.name)
    .sort();
  if (entries.length === 0) return [preparedDir];
  return entries.map((name) => path.join(preparedDir, name));
}

export function loadEpochImages(epochDir: string, ids: string[]): Map<string, RgbImage> {
  const out = new Map<string, RgbImage>();
  for (const id of ids) {
    const p = path.join(epochDir, `${id}.png`);
    if (!fs.existsSync(p)) {
      throw new ManifestError(`materialized epoch ${epochDir} is missing ${id}.png`);
    }
    out.set(id, readRgb(fs.readFileSync(p)));
  }
  return out;
}
