/**
 * Page wiring: file picker, model list, run/retry buttons, three slice
 * canvases with a crosshair and opacity slider, download links. Voxel data
 * never leaves the machine: the only fetches are the static model/sample
 * assets, and all computation happens in the worker.
 */

import { AssetClient } from "./assets.js";
import { SegmentOptions } from "./pipeline.js";
import { Axis } from "./render.js";

const MODELS = ["gwm_tiny"];

type WorkerReply = { id: number; data?: unknown; error?: string };

class WorkerClient {
  private worker: Worker;
  private nextId = 1;
  private pending = new Map<number, [(v: unknown) => void, (e: Error) => void]>();

  constructor() {
    this.worker = new Worker(new URL("./worker.js", import.meta.url), { type: "module" });
    this.worker.onmessage = (ev: MessageEvent<WorkerReply>) => {
      const entry = this.pending.get(ev.data.id);
      if (!entry) return;
      this.pending.delete(ev.data.id);
      if (ev.data.error !== undefined) entry[1](new Error(ev.data.error));
      else entry[0](ev.data.data);
    };
  }

  call<T>(method: string, ...args: unknown[]): Promise<T> {
    const id = this.nextId++;
    return new Promise<T>((resolve, reject) => {
      this.pending.set(id, [resolve as (v: unknown) => void, reject]);
      this.worker.postMessage({ id, method, args });
    });
  }
}

const $ = (id: string) => document.getElementById(id)!;

function download(name: string, payload: BlobPart, type: string): void {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(new Blob([payload], { type }));
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

async function start(): Promise<void> {
  const assets = new AssetClient(fetch.bind(globalThis));
  const worker = new WorkerClient();
  const status = $("status");
  const say = (text: string) => { status.textContent = text; };

  const modelSelect = $("model") as HTMLSelectElement;
  for (const name of MODELS) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    modelSelect.appendChild(opt);
  }

  let volumeLoaded = false;
  let modelLoaded = false;
  let resultReady = false;
  let crosshair: [number, number, number] = [128, 128, 128];
  const refreshButtons = () => {
    ($("run") as HTMLButtonElement).disabled = !(volumeLoaded && modelLoaded);
    ($("retry") as HTMLButtonElement).hidden = true;
    ($("download") as HTMLButtonElement).disabled = !resultReady;
    ($("download-telemetry") as HTMLButtonElement).disabled = !resultReady;
  };

  async function drawSlices(): Promise<void> {
    if (!volumeLoaded) return;
    const opacity = Number(($("opacity") as HTMLInputElement).value) / 100;
    const axes: [Axis, number][] = [
      ["axial", crosshair[2]], ["coronal", crosshair[1]], ["sagittal", crosshair[0]],
    ];
    for (const [axis, index] of axes) {
      const slice = await worker.call<{ width: number; height: number; rgba: ArrayBuffer }>(
        "slice", axis, index, opacity);
      const canvas = $(axis) as HTMLCanvasElement;
      canvas.width = slice.width;
      canvas.height = slice.height;
      const ctx = canvas.getContext("2d")!;
      ctx.putImageData(new ImageData(new Uint8ClampedArray(slice.rgba), slice.width,
        slice.height), 0, 0);
    }
  }

  async function loadSelectedModel(): Promise<void> {
    modelLoaded = false;
    refreshButtons();
    say(`fetching model ${modelSelect.value}...`);
    const base = `models/${modelSelect.value}`;
    const manifest = await (await fetch(`${base}/manifest.json`)).text();
    const weights = await (await fetch(`${base}/${JSON.parse(manifest).weights_file}`)).arrayBuffer();
    const info = await worker.call<{ name: string; labels: string[] }>(
      "loadModel", manifest, weights);
    modelLoaded = true;
    say(`model ${info.name} ready (${info.labels.length} labels)`);
    refreshButtons();
  }

  modelSelect.onchange = () => void loadSelectedModel();

  ($("file") as HTMLInputElement).onchange = async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    say(`parsing ${file.name}...`);
    try {
      const summary = await worker.call<{
        extents: number[]; spacing: number[]; datatypeCode: number;
      }>("loadVolume", await file.arrayBuffer());
      volumeLoaded = true;
      resultReady = false;
      say(`loaded ${summary.extents.join("x")} @ ` +
        `${summary.spacing.map(s => s.toFixed(2)).join("/")} mm ` +
        `(datatype ${summary.datatypeCode}) -> conformed 256^3 @ 1 mm`);
      await drawSlices();
    } catch (e) {
      say(String(e));
    }
    refreshButtons();
  };

  $("load-sample").onclick = async () => {
    say("fetching sample volume...");
    const buffer = await assets.fetchSample("sample/sample_t1.nii.gz");
    const summary = await worker.call<{ extents: number[] }>("loadVolume", buffer);
    volumeLoaded = true;
    resultReady = false;
    say(`sample loaded (${summary.extents.join("x")})`);
    refreshButtons();
    await drawSlices();
  };

  const currentOptions = (): Partial<SegmentOptions> => ({
    crop: ($("crop") as HTMLInputElement).checked,
    tile: ($("tile") as HTMLInputElement).checked,
    cube: Number(($("cube") as HTMLInputElement).value) || 64,
    halo: Number(($("halo") as HTMLInputElement).value) || 0,
    budgetBytes: Number(($("budget") as HTMLInputElement).value) || undefined,
    failsafe: false,
  });

  $("run").onclick = async () => {
    say("segmenting (worker)...");
    const t0 = performance.now();
    const { record, retryAvailable } = await worker.call<{
      record: { status: string; error_kind: string; phase_seconds: Record<string, number> };
      retryAvailable: boolean;
    }>("segment", currentOptions());
    if (record.status === "OK") {
      resultReady = true;
      const phases = Object.entries(record.phase_seconds)
        .map(([k, v]) => `${k} ${v.toFixed(2)}s`).join(", ");
      say(`done in ${((performance.now() - t0) / 1000).toFixed(1)}s (${phases})`);
      await drawSlices();
    } else {
      say(`failed: ${record.error_kind}` + (retryAvailable ? " - retry tiled?" : ""));
      ($("retry") as HTMLButtonElement).hidden = !retryAvailable;
    }
    refreshButtons();
    ($("retry") as HTMLButtonElement).hidden = !retryAvailable;
  };

  $("retry").onclick = async () => {
    say("retrying in tiled mode...");
    const { record } = await worker.call<{ record: { status: string; error_kind: string } }>(
      "retryTiled");
    resultReady = record.status === "OK";
    say(record.status === "OK" ? "tiled retry succeeded" : `failed: ${record.error_kind}`);
    refreshButtons();
    await drawSlices();
  };

  $("download").onclick = async () => {
    download("labels.nii", await worker.call<ArrayBuffer>("downloadResult"),
      "application/octet-stream");
  };

  $("download-telemetry").onclick = async () => {
    download("telemetry.jsonl", await worker.call<string>("downloadTelemetry"),
      "application/x-ndjson");
  };

  $("opacity").oninput = () => void drawSlices();
  for (const axis of ["axial", "coronal", "sagittal"] as const) {
    ($(axis) as HTMLCanvasElement).onclick = (ev) => {
      const canvas = ev.target as HTMLCanvasElement;
      const rect = canvas.getBoundingClientRect();
      const u = Math.round((ev.clientX - rect.left) / rect.width * (canvas.width - 1));
      const v = Math.round((ev.clientY - rect.top) / rect.height * (canvas.height - 1));
      if (axis === "axial") { crosshair[0] = u; crosshair[1] = v; }
      else if (axis === "coronal") { crosshair[0] = u; crosshair[2] = v; }
      else { crosshair[1] = u; crosshair[2] = v; }
      void drawSlices();
    };
  }

  await loadSelectedModel();
  refreshButtons();
  say("ready: load a NIfTI file or the sample volume");
}

void start();
