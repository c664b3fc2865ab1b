import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { runCli } from './cli.js';
import {
  FeatureRows,
  HistoryRecord,
  NoiseRow,
  WeightRow,
  parseHistoryJsonl,
  parseNoiseCsv,
  parseWeightsCsv,
  writeFeaturesCsv,
} from './csv.js';

export { CliError, cliCommand, runCli } from './cli.js';
export * from './csv.js';

export interface ForestNode {
  id: number;
  prototype: number;
  members: number[];
  leader: number | null;
  children: number[];
  depth: number;
}

export interface ForestDoc {
  class: number;
  params: { d_rd: number; d_rn: number; metric: string };
  ids: string[];
  nodes: ForestNode[];
  roots: number[];
}

export interface BuildParams {
  dRd: number;
  dRn: number;
  baseMultiples?: boolean;
  metric?: 'euclidean' | 'cosine' | 'manhattan';
  leaderRadius?: 'density' | 'node';
}

export interface BuiltForest {
  class: number;
  path: string;
  doc: ForestDoc;
  bytes: Buffer;
}

function tempDir(tag: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `cogforest-${tag}-`));
}

/** Features can be a prepared CSV/CGF file or in-memory rows. */
export function featuresPath(features: string | FeatureRows, dir: string): string {
  if (typeof features === 'string') return features;
  const p = path.join(dir, 'features.csv');
  writeFeaturesCsv(features, p);
  return p;
}

/** Build per-class forests through the CLI; returns the parsed documents. */
export function buildForests(
  features: string | FeatureRows,
  params: BuildParams,
  outDir?: string,
): { forests: BuiltForest[]; stdout: string } {
  const dir = outDir ?? tempDir('build');
  const input = featuresPath(features, dir);
  const args = [
    'build',
    input,
    '--d-rd',
    String(params.dRd),
    '--d-rn',
    String(params.dRn),
    '--out-dir',
    dir,
  ];
  if (params.baseMultiples) args.push('--base-multiples');
  if (params.metric) args.push('--metric', params.metric);
  if (params.leaderRadius) args.push('--leader-radius', params.leaderRadius);
  const stdout = runCli(args);
  const forests: BuiltForest[] = [];
  for (const name of fs.readdirSync(dir).sort()) {
    const m = name.match(/^forest_class(\d+)\.json$/);
    if (!m) continue;
    const p = path.join(dir, name);
    const bytes = fs.readFileSync(p);
    forests.push({
      class: Number(m[1]),
      path: p,
      doc: JSON.parse(bytes.toString('utf8')) as ForestDoc,
      bytes,
    });
  }
  return { forests, stdout };
}

export interface WeightsOptions {
  qAttr: number;
  qCls?: number;
  excluded?: string[];
  raw?: boolean;
}

/**
 * Sampling weights through the CLI. Returns rows in the CLI's order
 * (sample order within each class, classes ascending), ready to feed a
 * weighted random sampler.
 */
export function samplerWeights(
  forestPaths: string[],
  options: WeightsOptions,
): { rows: WeightRow[]; weights: number[]; csv: string } {
  const args = ['weights', ...forestPaths, '--q-attr', String(options.qAttr)];
  if (options.qCls !== undefined) args.push('--q-cls', String(options.qCls));
  if (options.raw) args.push('--raw');
  let cleanup: string | null = null;
  if (options.excluded && options.excluded.length > 0) {
    const dir = tempDir('excl');
    const p = path.join(dir, 'excluded.txt');
    fs.writeFileSync(p, options.excluded.join('\n') + '\n');
    args.push('--exclude', p);
    cleanup = dir;
  }
  try {
    const csv = runCli(args);
    const rows = parseWeightsCsv(csv);
    return { rows, weights: rows.map((r) => r.weight), csv };
  } finally {
    if (cleanup) fs.rmSync(cleanup, { recursive: true, force: true });
  }
}

export interface NoiseOptions {
  nMin?: number;
  nD?: number;
  nL?: number;
  pD?: number;
}

/** Noise report through the CLI: flagged ids with reason and density percentile. */
export function noiseReport(
  forestPaths: string[],
  features: string | FeatureRows,
  options: NoiseOptions = {},
): { rows: NoiseRow[]; csv: string } {
  const dir = tempDir('noise');
  try {
    const input = featuresPath(features, dir);
    const args = ['noise', ...forestPaths, '--features', input];
    if (options.nMin !== undefined) args.push('--n-min', String(options.nMin));
    if (options.nD !== undefined) args.push('--n-d', String(options.nD));
    if (options.nL !== undefined) args.push('--n-l', String(options.nL));
    if (options.pD !== undefined) args.push('--p-d', String(options.pD));
    const csv = runCli(args);
    return { rows: parseNoiseCsv(csv), csv };
  } finally {
    if (typeof features !== 'string') fs.rmSync(dir, { recursive: true, force: true });
  }
}

// ---------------------------------------------------------------------------
// Toy demo: synthetic data generated here, trained end to end via the CLI.

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianPair(rand: () => number): [number, number] {
  const u = Math.max(rand(), 1e-12);
  const v = rand();
  const r = Math.sqrt(-2 * Math.log(u));
  return [r * Math.cos(2 * Math.PI * v), r * Math.sin(2 * Math.PI * v)];
}

/** Two classes, two attributes; the minority attribute sits on the wrong side. */
export function syntheticGaussians(seed: number, nPerClass = 120): FeatureRows {
  const means: Record<string, [number, number]> = {
    '0,0': [-3, 0],
    '0,1': [1.5, 3],
    '1,0': [3, 0],
    '1,1': [-1.5, -3],
  };
  const rand = mulberry32(seed);
  const ids: string[] = [];
  const labels: number[] = [];
  const features: number[][] = [];
  const nMajor = Math.round(nPerClass * 0.9);
  for (const c of [0, 1]) {
    for (let i = 0; i < nPerClass; i++) {
      const attr = i < nMajor ? 0 : 1;
      const [gx, gy] = gaussianPair(rand);
      const [mx, my] = means[`${c},${attr}`];
      ids.push(`c${c}_${String(i).padStart(4, '0')}`);
      labels.push(c);
      features.push([mx + 0.6 * gx, my + 0.6 * gy]);
    }
  }
  return { ids, labels, features };
}

export interface DemoOptions {
  seed?: number;
  epochs?: number;
  warmup?: number;
  batch?: number;
  quiet?: boolean;
  keepDir?: string;
}

export interface DemoResult {
  history: HistoryRecord[];
  historyBytes: Buffer;
  dir: string;
  trainCsv: string;
  finalFeaturesCsv: string;
  modelJson: string;
  printed: string[];
}

/** Run the toy training loop end to end through the CLI and print the history. */
export function demoTrain(options: DemoOptions = {}): DemoResult {
  const seed = options.seed ?? 7;
  const dir = options.keepDir ?? tempDir('demo');
  const trainCsv = path.join(dir, 'train.csv');
  writeFeaturesCsv(syntheticGaussians(seed), trainCsv);
  const modelJson = path.join(dir, 'model.json');
  const historyJsonl = path.join(dir, 'history.jsonl');
  const finalFeaturesCsv = path.join(dir, 'final_features.csv');
  runCli([
    'train',
    trainCsv,
    '--warmup',
    String(options.warmup ?? 2),
    '--epochs',
    String(options.epochs ?? 10),
    '--batch',
    String(options.batch ?? 32),
    '--seed',
    String(seed),
    '--model-out',
    modelJson,
    '--history-out',
    historyJsonl,
    '--features-out',
    finalFeaturesCsv,
  ]);
  const historyBytes = fs.readFileSync(historyJsonl);
  const history = parseHistoryJsonl(historyBytes.toString('utf8'));
  const printed: string[] = [];
  for (const rec of history) {
    const total = rec.env_losses.reduce((acc, e) => acc + e.total, 0);
    const ifl = rec.env_losses.reduce((acc, e) => acc + e.ifl, 0);
    printed.push(
      `epoch ${rec.epoch} [${rec.phase}] total=${total.toFixed(6)} ifl=${ifl.toFixed(6)}` +
        (rec.tree_counts ? ` trees=${JSON.stringify(rec.tree_counts)}` : ''),
    );
  }
  if (!options.quiet) {
    for (const line of printed) console.log(line);
  }
  return { history, historyBytes, dir, trainCsv, finalFeaturesCsv, modelJson, printed };
}
