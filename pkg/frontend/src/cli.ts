#!/usr/bin/env node
import * as path from 'path';
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { DduNetConfig, DivergedLoss, InvalidConfig, ShapeMismatch, TOY_DEFAULTS } from './config.js';
import { ManifestError, PlanError, listEpochDirs, loadManifest, loadPlan, loadTrainItems } from './dataset.js';
import { exportMaps } from './export.js';
import { loadCheckpoint, saveCheckpoint, saveTrainingLog, train } from './train.js';

interface TrainArgs {
  manifest: string;
  out: string;
  plan?: string;
  preparedDir?: string;
  epochs: number;
  seed: number;
  size: number;
  depth: number;
  width: number;
  lr: number;
  batchSize: number;
  dropout: number;
}

async function runTrain(argv: TrainArgs): Promise<void> {
  const cfg: DduNetConfig = {
    ...TOY_DEFAULTS,
    inputSize: argv.size,
    depth: argv.depth,
    width: argv.width,
    dropout: argv.dropout,
    epochs: argv.epochs,
    learningRate: argv.lr,
    batchSize: argv.batchSize,
    seed: argv.seed,
  };
  if (argv.plan && !argv.preparedDir) {
    throw new PlanError(
      'an augmentation plan needs materialized variants: pass --prepared-dir with per-epoch images',
    );
  }
  if (argv.plan) {
    loadPlan(argv.plan);
  }
  const manifest = loadManifest(argv.manifest);
  const items = loadTrainItems(manifest);
  const preparedEpochs = argv.preparedDir ? listEpochDirs(argv.preparedDir) : undefined;

  const { model, log } = await train({
    cfg,
    items,
    preparedEpochs,
    onEpoch: (e) => {
      const dice = Number.isNaN(e.trainDice) ? '' : `  train_dice=${e.trainDice.toFixed(4)}`;
      process.stderr.write(
        `epoch ${String(e.epoch).padStart(3)}  lr=${e.lr}  dice_bce=${e.diceBce.toFixed(4)}  mse=${e.mse.toFixed(4)}${dice}\n`,
      );
    },
  });
  saveCheckpoint(model, cfg, argv.out);
  saveTrainingLog(log, argv.out);
  const last = log[log.length - 1];
  process.stderr.write(`saved checkpoint to ${path.resolve(argv.out)} (train dice ${last.trainDice.toFixed(4)})\n`);
}

function runExport(argv: { checkpoint: string; images: string; out: string }): void {
  const ckpt = loadCheckpoint(argv.checkpoint);
  const done = exportMaps(ckpt, argv.images, argv.out);
  process.stderr.write(`wrote ${done.length} maps to ${path.resolve(argv.out)}\n`);
}

export async function main(args: string[]): Promise<number> {
  try {
    await yargs(args)
      .scriptName('ddunet')
      .command(
        'train',
        'train on the train split of a dataset manifest',
        (y) =>
          y
            .option('manifest', { type: 'string', demandOption: true, describe: 'dataset manifest JSON' })
            .option('out', { type: 'string', demandOption: true, describe: 'checkpoint output directory' })
            .option('plan', { type: 'string', describe: 'augmentation plan JSON (requires --prepared-dir)' })
            .option('prepared-dir', {
              type: 'string',
              describe: 'directory of materialized variant images (flat, or epochNNN subdirectories)',
            })
            .option('epochs', { type: 'number', default: TOY_DEFAULTS.epochs })
            .option('seed', { type: 'number', default: TOY_DEFAULTS.seed })
            .option('size', { type: 'number', default: TOY_DEFAULTS.inputSize, describe: 'square crop size' })
            .option('depth', { type: 'number', default: TOY_DEFAULTS.depth })
            .option('width', { type: 'number', default: TOY_DEFAULTS.width })
            .option('lr', { type: 'number', default: TOY_DEFAULTS.learningRate })
            .option('batch-size', { type: 'number', default: TOY_DEFAULTS.batchSize })
            .option('dropout', { type: 'number', default: TOY_DEFAULTS.dropout }),
        async (argv) => {
          await runTrain(argv as unknown as TrainArgs);
        },
      )
      .command(
        'export-maps',
        'write <id>__<variant>.f32m probability/distance maps for every PNG in a directory',
        (y) =>
          y
            .option('checkpoint', { type: 'string', demandOption: true, describe: 'checkpoint directory' })
            .option('images', { type: 'string', demandOption: true, describe: 'directory of input PNGs' })
            .option('out', { type: 'string', demandOption: true, describe: 'output directory for .f32m maps' }),
        (argv) => {
          runExport(argv as unknown as { checkpoint: string; images: string; out: string });
        },
      )
      .demandCommand(1, 'specify a command: train or export-maps')
      .strict()
      .fail((msg, err) => {
        if (err) throw err;
        throw new UsageError(msg);
      })
      .parseAsync();
    return 0;
  } catch (err) {
    if (
      err instanceof UsageError ||
      err instanceof InvalidConfig ||
      err instanceof ManifestError ||
      err instanceof PlanError ||
      err instanceof ShapeMismatch
    ) {
      process.stderr.write(`error: ${err.message}\n`);
      return 2;
    }
    if (err instanceof DivergedLoss) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
}

class UsageError extends Error {}

const entry = process.argv[1] ? path.basename(process.argv[1]) : '';
if (entry === 'cli.js' || entry === 'ddunet') {
  main(hideBin(process.argv)).then(
    (code) => {
      process.exitCode = code;
    },
    (err) => {
      process.stderr.write(`error: ${err?.stack ?? err}\n`);
      process.exitCode = 1;
    },
  );
}
