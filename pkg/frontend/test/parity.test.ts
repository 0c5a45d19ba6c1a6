/**
 * Browser-parity acceptance: load the bundled sample through the session,
 * segment with the fixture options, and require the downloadable label file
 * to match the native CLI's output byte for byte. The asset client records
 * every network request; none may follow the asset load or carry a body.
 */

import { beforeAll, describe, expect, it } from "vitest";

import { AssetClient } from "../src/assets.js";
import { maybeDecompress, readVolumeAsync } from "../src/nifti.js";
import { DEFAULT_OPTIONS, runPipeline, SegmentOptions } from "../src/pipeline.js";
import { Session } from "../src/session.js";
import { diskFetch, fixture, PUBLIC } from "./helpers.js";

let golden: Uint8Array;
let options: SegmentOptions;
let assets: AssetClient;
let session: Session;
let sampleBuffer: ArrayBuffer;
let assetRequestsAfterLoad: number;

beforeAll(async () => {
  // the golden file is the native CLI's gzip output; the payload inside the
  // container is exactly the uncompressed .nii the browser serves for download
  golden = await maybeDecompress(await fixture("golden_labels.nii.gz"));
  const raw = JSON.parse(new TextDecoder().decode(await fixture("options.json")));
  options = {
    ...DEFAULT_OPTIONS,
    crop: raw.crop,
    cropMargin: raw.crop_margin,
    tile: raw.tile,
    cube: raw.cube,
    halo: raw.halo,
    connectivity: raw.connectivity,
  };

  assets = new AssetClient(diskFetch(PUBLIC));
  const model = await assets.fetchModel(`models/${raw.model}`);
  sampleBuffer = (await assets.fetchSample("sample/sample_t1.nii.gz")).slice(0);
  assetRequestsAfterLoad = assets.log.length;

  session = new Session();
  session.selectModel(model);
  session.options = options;
  await session.loadLocalFile(sampleBuffer);
});

describe("browser parity with the native CLI", () => {
  it("produces byte-identical label output", () => {
    const record = session.runSegmentation();
    expect(record.status).toBe("OK");
    expect(record.cropped).toBe(true);
    expect(Object.keys(record.phase_seconds).sort()).toEqual(
      ["cropping", "inference", "merging", "postprocessing", "preprocessing"]);
    const bytes = session.downloadResult();
    expect(bytes.length).toBe(golden.length);
    expect(Buffer.from(bytes).equals(Buffer.from(golden))).toBe(true);
  });

  it("is deterministic across consecutive runs", () => {
    const again = session.runSegmentation();
    expect(again.status).toBe("OK");
    expect(Buffer.from(session.downloadResult()).equals(Buffer.from(golden))).toBe(true);
  });

  it("matches when run end-to-end from raw bytes (conform inside)", async () => {
    const raw = await readVolumeAsync(sampleBuffer);
    const result = runPipeline(raw, session.selectedModel!, options,
      [raw.nx, raw.ny, raw.nz], false);
    expect(result.record.status).toBe("OK");
    expect(Buffer.from(result.niiBytes!).equals(Buffer.from(golden))).toBe(true);
  });

  it("made no network requests after the asset load, and none with a body", () => {
    expect(assets.log.length).toBe(assetRequestsAfterLoad);
    expect(assets.log.length).toBe(3); // manifest + weights + sample
    for (const entry of assets.log) {
      expect(entry.method).toBe("GET");
      expect(entry.hasBody).toBe(false);
    }
    const urls = assets.log.map(e => e.url);
    expect(urls).toContain("sample/sample_t1.nii.gz");
  });

  it("telemetry log lines parse as the CLI format", () => {
    const lines = session.downloadTelemetry().trim().split("\n");
    expect(lines.length).toBe(session.telemetryLog.length);
    for (const line of lines) {
      const rec = JSON.parse(line);
      expect(rec.status).toBe("OK");
      expect(rec.model_name).toBe("gwm_tiny");
      expect(Object.keys(rec.phase_seconds)).toHaveLength(5);
    }
  });
});

// sanity on the fixture itself: the golden file really is a NIfTI label map
it("golden fixture decodes to a 256^3 label volume", async () => {
  const vol = await readVolumeAsync(
    golden.buffer.slice(golden.byteOffset, golden.byteOffset + golden.byteLength) as ArrayBuffer);
  expect([vol.nx, vol.ny, vol.nz]).toEqual([256, 256, 256]);
  let fg = 0;
  for (let i = 0; i < vol.data.length; i++) if (vol.data[i] !== 0) fg++;
  expect(fg).toBeGreaterThan(1000);
}, 300_000);
