/**
 * The in-browser pipeline: conform -> [crop] -> inference -> [merge] ->
 * argmax -> [embed] -> largest-component filter -> NIfTI bytes, with the
 * same phase-timing telemetry schema the native CLI appends.
 */

import { f32 } from "./f32.js";
import { argmaxLabels, EngineError, FeatureMap, MemoryBudget, runModel } from "./engine.js";
import { keepLargest } from "./components.js";
import { Model } from "./model.js";
import { serializeVolume } from "./nifti.js";
import { assembleScores, divide, runTiles } from "./tiling.js";
import { Box, conform, cropVolume, embedLabels, maskBbox, Volume } from "./volume.js";

export const PHASES = ["preprocessing", "cropping", "inference", "merging",
  "postprocessing"] as const;
export type Phase = typeof PHASES[number];

export interface TelemetryRecord {
  timestamp: string;
  model_name: string;
  input_shape: [number, number, number];
  cropped: boolean;
  tiled: boolean;
  cube: number | null;
  halo: number | null;
  phase_seconds: Record<Phase, number>;
  peak_bytes: number;
  status: "OK" | "Fail";
  error_kind: string;
}

export interface SegmentOptions {
  crop: boolean;
  cropMargin: number;
  tile: boolean;
  cube: number;
  halo: number;
  budgetBytes?: number;
  failsafe: boolean;
  connectivity: 6 | 26;
}

export const DEFAULT_OPTIONS: SegmentOptions = {
  crop: false, cropMargin: 8, tile: false, cube: 64, halo: 0,
  failsafe: false, connectivity: 26,
};

export interface PipelineResult {
  labels: Volume | null;
  niiBytes: Uint8Array | null;
  record: TelemetryRecord;
}

function nowSeconds(): number {
  return performance.now() / 1000.0;
}

/** Conformed uint8-range intensities scaled to [0, 1], channel-major. */
function normalizedFeature(vol: Volume): FeatureMap {
  const scale = f32(1.0 / 255.0);
  const data = new Float32Array(vol.data.length);
  for (let i = 0; i < data.length; i++) data[i] = f32(vol.data[i] * scale);
  return { channels: 1, nx: vol.nx, ny: vol.ny, nz: vol.nz, data };
}

/**
 * Run one segmentation over an already-parsed volume. Set
 * `alreadyConformed` when the input came through the load-time conform to
 * skip the duplicate resample (the result is identical either way).
 */
export function runPipeline(
  input: Volume, model: Model, options: SegmentOptions,
  inputShape: [number, number, number], alreadyConformed = false,
): PipelineResult {
  const phases: Record<Phase, number> = {
    preprocessing: 0, cropping: 0, inference: 0, merging: 0, postprocessing: 0,
  };
  const timestamp = new Date().toISOString();
  const budget = new MemoryBudget(options.budgetBytes ?? Number.MAX_SAFE_INTEGER);
  let status: "OK" | "Fail" = "OK";
  let errorKind = "";
  let tiled = options.tile;
  let labels: Volume | null = null;
  let niiBytes: Uint8Array | null = null;

  try {
    let t0 = nowSeconds();
    const conformed = alreadyConformed ? input : conform(input);
    phases.preprocessing += nowSeconds() - t0;

    let work = conformed;
    let box: Box | null = null;
    if (options.crop) {
      t0 = nowSeconds();
      box = maskBbox(conformed, v => v > 0, options.cropMargin);
      work = cropVolume(conformed, box);
      phases.cropping += nowSeconds() - t0;
    }

    const fm = normalizedFeature(work);
    let scores: FeatureMap | null = null;
    let needMerge = false;
    t0 = nowSeconds();
    if (options.tile) {
      needMerge = true;
    } else {
      try {
        scores = runModel(model, fm, budget);
      } catch (e) {
        if (e instanceof EngineError && e.kind === "BudgetExceeded" && options.failsafe) {
          tiled = true;
          needMerge = true;
        } else {
          throw e;
        }
      }
    }
    if (needMerge) {
      tiled = true;
      const grid = divide([work.nx, work.ny, work.nz], options.cube, options.halo);
      const results = runTiles(model, fm, grid, budget);
      phases.inference += nowSeconds() - t0;
      t0 = nowSeconds();
      scores = assembleScores(grid, results);
      phases.merging += nowSeconds() - t0;
    } else {
      phases.inference += nowSeconds() - t0;
    }

    t0 = nowSeconds();
    let labelData = argmaxLabels(scores!);
    if (box !== null) {
      labelData = embedLabels(labelData, box, [conformed.nx, conformed.ny, conformed.nz]);
    }
    let any = false;
    for (let i = 0; i < labelData.length && !any; i++) any = labelData[i] !== 0;
    if (any) {
      labelData = keepLargest(labelData, conformed.nx, conformed.ny, conformed.nz,
        options.connectivity);
    }
    labels = {
      nx: conformed.nx, ny: conformed.ny, nz: conformed.nz,
      spacing: conformed.spacing, affine: conformed.affine, data: labelData,
    };
    niiBytes = serializeVolume(labels, 2);
    phases.postprocessing += nowSeconds() - t0;
  } catch (e) {
    status = "Fail";
    errorKind = (e as { kind?: string }).kind ?? (e as Error).name ?? "Error";
    labels = null;
    niiBytes = null;
  }

  const record: TelemetryRecord = {
    timestamp,
    model_name: model.name,
    input_shape: inputShape,
    cropped: options.crop && status === "OK",
    tiled,
    cube: tiled ? options.cube : null,
    halo: tiled ? options.halo : null,
    phase_seconds: phases,
    peak_bytes: budget.highWater,
    status,
    error_kind: errorKind,
  };
  return { labels, niiBytes, record };
}

export function telemetryLine(record: TelemetryRecord): string {
  return JSON.stringify(record);
}
