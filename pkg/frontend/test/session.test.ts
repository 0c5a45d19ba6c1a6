import { beforeAll, describe, expect, it } from "vitest";

import { AssetClient } from "../src/assets.js";
import { Model } from "../src/model.js";
import { Session } from "../src/session.js";
import { diskFetch, PUBLIC, syntheticVolumeBytes } from "./helpers.js";

let model: Model;

beforeAll(async () => {
  model = await new AssetClient(diskFetch(PUBLIC)).fetchModel("models/gwm_tiny");
});

describe("session state machine", () => {
  it("enables segmentation only once volume and model are loaded", async () => {
    const s = new Session();
    expect(s.canSegment).toBe(false);
    expect(() => s.runSegmentation()).toThrow();
    s.selectModel(model);
    expect(s.canSegment).toBe(false);
    await s.loadLocalFile(syntheticVolumeBytes().buffer as ArrayBuffer);
    expect(s.canSegment).toBe(true);
  });

  it("reports the conform summary on load", async () => {
    const s = new Session();
    const summary = await s.loadLocalFile(syntheticVolumeBytes().buffer as ArrayBuffer);
    expect(summary.extents).toEqual([48, 48, 48]);
    expect(summary.spacing).toEqual([1, 1, 1]);
    expect(summary.datatypeCode).toBe(2);
    expect(summary.conformedExtents).toEqual([256, 256, 256]);
  });

  it("surfaces parse errors with the native error kinds", async () => {
    const s = new Session();
    const junk = new Uint8Array(600).fill(0x13);
    await expect(s.loadLocalFile(junk.buffer as ArrayBuffer)).rejects.toThrow(/BadMagic/);
    expect(s.loadedVolume).toBeNull();
    const short = new Uint8Array(10);
    await expect(s.loadLocalFile(short.buffer as ArrayBuffer)).rejects.toThrow(/TooShort/);
  });

  it("segments, then clears the result when a new file loads", async () => {
    const s = new Session();
    s.selectModel(model);
    s.options = { ...s.options, crop: true };
    await s.loadLocalFile(syntheticVolumeBytes().buffer as ArrayBuffer);
    const record = s.runSegmentation();
    expect(record.status).toBe("OK");
    expect(record.cropped).toBe(true);
    expect(record.input_shape).toEqual([48, 48, 48]);
    expect(s.lastResult).not.toBeNull();
    expect(s.downloadResult().length).toBeGreaterThan(352);

    await s.loadLocalFile(syntheticVolumeBytes(24).buffer as ArrayBuffer);
    expect(s.lastResult).toBeNull();
    expect(() => s.downloadResult()).toThrow();
  });

  it("offers a tiled retry after a budget failure and echoes options", async () => {
    const s = new Session();
    s.selectModel(model);
    s.options = { ...s.options, crop: true, cube: 32, budgetBytes: 2_000_000 };
    await s.loadLocalFile(syntheticVolumeBytes().buffer as ArrayBuffer);

    const failed = s.runSegmentation();
    expect(failed.status).toBe("Fail");
    expect(failed.error_kind).toBe("BudgetExceeded");
    expect(s.retryAvailable).toBe(true);
    expect(s.lastResult).toBeNull();

    const retried = s.retryTiled();
    expect(retried.status).toBe("OK");
    expect(retried.tiled).toBe(true);
    expect(retried.cube).toBe(32);
    expect(retried.halo).toBe(0);
    expect(retried.peak_bytes).toBeLessThanOrEqual(2_000_000);
    expect(retried.phase_seconds.merging).toBeGreaterThan(0);
    expect(s.retryAvailable).toBe(false);
    expect(s.downloadResult().length).toBeGreaterThan(352);

    expect(s.telemetryLog.map(r => r.status)).toEqual(["Fail", "OK"]);
  });
});
