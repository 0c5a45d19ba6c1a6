/**
 * UI-facing session state. Files are parsed and conformed locally; the
 * segment action is enabled only once a volume and a model are loaded;
 * loading a new file clears the previous result. Options echo into every
 * telemetry record, and a budget failure leaves a one-click tiled retry
 * available.
 */

import { Model } from "./model.js";
import { maybeDecompress, parseHeader, readVolume } from "./nifti.js";
import { DEFAULT_OPTIONS, PipelineResult, runPipeline, SegmentOptions, TelemetryRecord, telemetryLine } from "./pipeline.js";
import { conform, Volume } from "./volume.js";

export interface VolumeSummary {
  extents: [number, number, number];
  spacing: [number, number, number];
  datatypeCode: number;
  conformedExtents: [number, number, number];
}

export class Session {
  loadedVolume: Volume | null = null;     // conformed, ready for inference
  rawShape: [number, number, number] | null = null;
  selectedModel: Model | null = null;
  options: SegmentOptions = { ...DEFAULT_OPTIONS };
  lastResult: PipelineResult | null = null;
  lastTelemetry: TelemetryRecord | null = null;
  telemetryLog: TelemetryRecord[] = [];
  retryAvailable = false;

  get canSegment(): boolean {
    return this.loadedVolume !== null && this.selectedModel !== null;
  }

  /** Parse + conform a local file buffer; replaces any prior volume. */
  async loadLocalFile(buffer: ArrayBuffer): Promise<VolumeSummary> {
    const bytes = await maybeDecompress(new Uint8Array(buffer));
    const header = parseHeader(bytes);
    const raw = readVolume(bytes);
    const conformed = conform(raw);
    this.loadedVolume = conformed;
    this.rawShape = [raw.nx, raw.ny, raw.nz];
    this.lastResult = null;
    this.lastTelemetry = null;
    this.retryAvailable = false;
    return {
      extents: [raw.nx, raw.ny, raw.nz],
      spacing: raw.spacing,
      datatypeCode: header.datatypeCode,
      conformedExtents: [conformed.nx, conformed.ny, conformed.nz],
    };
  }

  selectModel(model: Model): void {
    this.selectedModel = model;
  }

  runSegmentation(): TelemetryRecord {
    if (!this.canSegment) throw new Error("load a volume and a model first");
    const result = runPipeline(this.loadedVolume!, this.selectedModel!, this.options,
      this.rawShape!, true);
    this.lastResult = result.record.status === "OK" ? result : null;
    this.lastTelemetry = result.record;
    this.telemetryLog.push(result.record);
    this.retryAvailable = result.record.status === "Fail"
      && result.record.error_kind === "BudgetExceeded" && !this.options.tile;
    return result.record;
  }

  /** One-click failsafe: repeat the last run in tiled mode. */
  retryTiled(): TelemetryRecord {
    if (!this.retryAvailable) throw new Error("no failed full-volume run to retry");
    const options = { ...this.options, tile: true };
    const result = runPipeline(this.loadedVolume!, this.selectedModel!, options,
      this.rawShape!, true);
    this.lastResult = result.record.status === "OK" ? result : null;
    this.lastTelemetry = result.record;
    this.telemetryLog.push(result.record);
    this.retryAvailable = false;
    return result.record;
  }

  /** Label volume as downloadable .nii bytes. */
  downloadResult(): Uint8Array {
    if (!this.lastResult?.niiBytes) throw new Error("no result to download");
    return this.lastResult.niiBytes;
  }

  /** Telemetry log in the same JSON-lines format the CLI consumes. */
  downloadTelemetry(): string {
    return this.telemetryLog.map(telemetryLine).join("\n") + "\n";
  }
}
