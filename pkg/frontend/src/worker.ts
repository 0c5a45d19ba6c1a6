/// <reference lib="webworker" />
/**
 * Background execution context: all numerical work happens here so the page
 * stays responsive; the main thread only marshals buffers and progress.
 */

import { loadModel, Model } from "./model.js";
import { Session } from "./session.js";
import { SegmentOptions } from "./pipeline.js";
import { Axis, compositeSlice, extractSlice } from "./render.js";
import { Volume } from "./volume.js";

const session = new Session();

interface Request {
  id: number;
  method: string;
  args: unknown[];
}

const methods: Record<string, (...args: never[]) => Promise<unknown>> = {
  async loadModel(manifestText: string, weights: ArrayBuffer) {
    const model: Model = await loadModel(manifestText, weights);
    session.selectModel(model);
    return { name: model.name, labels: model.labels };
  },

  async loadVolume(buffer: ArrayBuffer) {
    return session.loadLocalFile(buffer);
  },

  async segment(options: Partial<SegmentOptions>) {
    session.options = { ...session.options, ...options };
    const record = session.runSegmentation();
    return { record, retryAvailable: session.retryAvailable };
  },

  async retryTiled() {
    const record = session.retryTiled();
    return { record, retryAvailable: session.retryAvailable };
  },

  async downloadResult() {
    return session.downloadResult().buffer;
  },

  async downloadTelemetry() {
    return session.downloadTelemetry();
  },

  async slice(axis: Axis, index: number, opacity: number) {
    const vol = session.loadedVolume;
    if (!vol) throw new Error("no volume loaded");
    const base = extractSlice(vol, axis, index);
    let overlay = null;
    if (session.lastResult?.labels) {
      overlay = extractSlice(session.lastResult.labels as Volume, axis, index);
    }
    const rgba = compositeSlice(base, overlay, opacity);
    return { width: base.width, height: base.height, rgba: rgba.buffer };
  },
};

self.onmessage = (event: MessageEvent<Request>) => {
  const { id, method, args } = event.data;
  const fn = methods[method];
  if (!fn) {
    (self as unknown as Worker).postMessage({ id, error: `no such method: ${method}` });
    return;
  }
  fn.apply(null, args as never[]).then(
    (data) => (self as unknown as Worker).postMessage({ id, data }),
    (err) => (self as unknown as Worker).postMessage({ id, error: String(err) }),
  );
};
