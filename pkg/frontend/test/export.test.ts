import { execFileSync } from 'child_process';
import * as fs from 'fs';
import * as path from 'path';
import { describe, expect, it } from 'vitest';
import { TOY_DEFAULTS } from '../src/config.js';
import { decodeF32m, encodeF32m } from '../src/f32m.js';
import { exportMaps, outputStem, predictMaps } from '../src/export.js';
import { loadCheckpoint, saveCheckpoint, train } from '../src/train.js';
import { encodeRgbPng, makeScene, tmpDir } from './helpers.js';

const TINY = { ...TOY_DEFAULTS, inputSize: 16, depth: 2, width: 4, dropout: 0, epochs: 1 };

async function tinyCheckpoint(): Promise<string> {
  const s = makeScene(77, 16, 2);
  const { model } = await train({
    cfg: TINY,
    items: [
      {
        id: 'a',
        image: { width: 16, height: 16, data: s.image },
        mask: { width: 16, height: 16, labels: s.labels },
      },
    ],
  });
  const dir = tmpDir('ckpt');
  saveCheckpoint(model, TINY, dir);
  model.dispose();
  return dir;
}

describe('output naming', () => {
  it('keeps an existing __variant stem and appends __orig to bare names', () => {
    expect(outputStem('img_00__ref1.png')).toBe('img_00__ref1');
    expect(outputStem('img_00__orig.PNG')).toBe('img_00__orig');
    expect(outputStem('img_00.png')).toBe('img_00__orig');
  });
});

describe('map export', () => {
  it('writes a 2-channel map per PNG with probability in [0, 1]', async () => {
    const ckptDir = await tinyCheckpoint();
    const ckpt = loadCheckpoint(ckptDir);
    const images = tmpDir('imgs');
    const out = tmpDir('maps');
    for (const name of ['t0__orig.png', 't0__ref0.png', 'bare.png']) {
      fs.writeFileSync(path.join(images, name), encodeRgbPng(16, 16, (x, y) => [x * 10, y * 10, 128]));
    }
    const done = exportMaps(ckpt, images, out);
    expect(done.map((d) => path.basename(d.output)).sort()).toEqual([
      'bare__orig.f32m',
      't0__orig.f32m',
      't0__ref0.f32m',
    ]);
    const map = decodeF32m(fs.readFileSync(path.join(out, 't0__orig.f32m')));
    expect(map.width).toBe(16);
    expect(map.height).toBe(16);
    expect(map.channels).toBe(2);
    for (let i = 0; i < map.data.length; i += 2) {
      expect(map.data[i]).toBeGreaterThanOrEqual(0);
      expect(map.data[i]).toBeLessThanOrEqual(1);
      expect(Number.isFinite(map.data[i + 1])).toBe(true);
    }
    ckpt.model.dispose();
  });

  it('re-exports bit-identically', async () => {
    const ckptDir = await tinyCheckpoint();
    const images = tmpDir('imgs');
    fs.writeFileSync(path.join(images, 'x.png'), encodeRgbPng(32, 16, (x, y) => [x, y, 200]));
    const outA = tmpDir('mapsA');
    const outB = tmpDir('mapsB');
    // separate loads: bit-stability must not depend on process state
    const a = loadCheckpoint(ckptDir);
    exportMaps(a, images, outA);
    a.model.dispose();
    const b = loadCheckpoint(ckptDir);
    exportMaps(b, images, outB);
    b.model.dispose();
    const bytesA = fs.readFileSync(path.join(outA, 'x__orig.f32m'));
    const bytesB = fs.readFileSync(path.join(outB, 'x__orig.f32m'));
    expect(bytesA.equals(bytesB)).toBe(true);
  });

  it('rejects sizes the pooling stack cannot divide', async () => {
    const ckptDir = await tinyCheckpoint();
    const ckpt = loadCheckpoint(ckptDir);
    expect(() =>
      predictMaps(ckpt, { width: 30, height: 30, data: new Float32Array(30 * 30 * 3) }),
    ).toThrow(/multiples of 4/);
    ckpt.model.dispose();
  });

  it('writes maps the Python-side reader parses with identical values', async () => {
    const ckptDir = await tinyCheckpoint();
    const ckpt = loadCheckpoint(ckptDir);
    const images = tmpDir('imgs');
    fs.writeFileSync(path.join(images, 'p0.png'), encodeRgbPng(16, 16, (x, y) => [250 - x, 100, y * 3]));
    const out = tmpDir('maps');
    exportMaps(ckpt, images, out);
    ckpt.model.dispose();

    const mapPath = path.join(out, 'p0__orig.f32m');
    const summary = execFileSync(
      'python3',
      [
        '-c',
        [
          'import json, sys',
          'from stainseg import dataio',
          'a = dataio.read_f32m(sys.argv[1])',
          'print(json.dumps({"shape": list(a.shape), "first": float(a[0, 0, 0]), "last": float(a[-1, -1, 1])}))',
        ].join('\n'),
        mapPath,
      ],
      { encoding: 'utf8' },
    );
    const got = JSON.parse(summary.trim());
    const local = decodeF32m(fs.readFileSync(mapPath));
    expect(got.shape).toEqual([16, 16, 2]);
    expect(got.first).toBeCloseTo(local.data[0], 7);
    expect(got.last).toBeCloseTo(local.data[local.data.length - 1], 7);
  });

  it('round-trips a map written by the Python side', () => {
    // the reverse direction: their writer, this decoder
    const dir = tmpDir('py');
    const mapPath = path.join(dir, 'from_py.f32m');
    execFileSync('python3', [
      '-c',
      [
        'import sys',
        'import numpy as np',
        'from stainseg import dataio',
        'arr = np.arange(24, dtype=np.float32).reshape(3, 4, 2) / 7.0',
        'dataio.write_f32m(arr, sys.argv[1])',
      ].join('\n'),
      mapPath,
    ]);
    const map = decodeF32m(fs.readFileSync(mapPath));
    expect(map.width).toBe(4);
    expect(map.height).toBe(3);
    expect(map.channels).toBe(2);
    expect(map.data[5]).toBeCloseTo(5 / 7, 6);
    // and the bytes we would write for it are the bytes they wrote
    expect(encodeF32m(map).equals(fs.readFileSync(mapPath))).toBe(true);
  });
});
