import * as fs from 'node:fs';

export interface FeatureRows {
  ids: string[];
  labels?: number[];
  features: number[][];
}

/** Write features in the CLI's CSV format: id,label,f0..f{D-1}. */
export function writeFeaturesCsv(rows: FeatureRows, path: string): void {
  const n = rows.ids.length;
  if (rows.features.length !== n) {
    throw new Error(`${n} ids for ${rows.features.length} feature rows`);
  }
  const dim = rows.features[0]?.length ?? 0;
  if (dim < 1) throw new Error('features must have at least one column');
  const header = ['id', 'label', ...Array.from({ length: dim }, (_, j) => `f${j}`)];
  const lines = [header.join(',')];
  for (let i = 0; i < n; i++) {
    if (rows.features[i].length !== dim) {
      throw new Error(`row ${i} has ${rows.features[i].length} values, expected ${dim}`);
    }
    const label = rows.labels ? String(rows.labels[i]) : '';
    lines.push([rows.ids[i], label, ...rows.features[i].map(String)].join(','));
  }
  fs.writeFileSync(path, lines.join('\n') + '\n');
}

export interface WeightRow {
  id: string;
  weight: number;
}

export function parseWeightsCsv(text: string): WeightRow[] {
  const lines = text.split('\n').filter((l) => l.length > 0);
  if (lines[0] !== 'id,weight') {
    throw new Error(`unexpected weights header: ${lines[0]}`);
  }
  return lines.slice(1).map((line) => {
    const comma = line.lastIndexOf(',');
    return { id: line.slice(0, comma), weight: Number(line.slice(comma + 1)) };
  });
}

export interface NoiseRow {
  id: string;
  reason: string;
  densityPercentile: number;
}

export function parseNoiseCsv(text: string): NoiseRow[] {
  const lines = text.split('\n').filter((l) => l.length > 0);
  if (lines[0] !== 'id,reason,density_percentile') {
    throw new Error(`unexpected noise header: ${lines[0]}`);
  }
  return lines.slice(1).map((line) => {
    const [id, reason, pct] = line.split(',');
    return { id, reason, densityPercentile: Number(pct) };
  });
}

export function parseHistoryJsonl(text: string): HistoryRecord[] {
  return text
    .split('\n')
    .filter((l) => l.length > 0)
    .map((l) => JSON.parse(l) as HistoryRecord);
}

export interface EnvLoss {
  env: string;
  total: number;
  cls: number;
  ifl: number;
}

export interface HistoryRecord {
  epoch: number;
  phase: 'warmup' | 'main';
  env_losses: EnvLoss[];
  tree_counts: Record<string, number> | null;
  noise_flagged: number;
  noise_ids: string[];
  balanced_accuracy: number | null;
  notes: string[];
}
