/**
 * Static-asset access with a request ledger, so the zero-voxel-egress
 * guarantee is checkable: every network request the app makes goes through
 * this client, and requests carry no body.
 */

import { loadModel, Model } from "./model.js";

export interface RequestLogEntry {
  url: string;
  method: string;
  hasBody: boolean;
  at: number;
}

export type FetchLike = (url: string) =>
  Promise<{ ok: boolean; status: number; arrayBuffer(): Promise<ArrayBuffer>; text(): Promise<string> }>;

export class AssetClient {
  readonly log: RequestLogEntry[] = [];

  constructor(private fetchImpl: FetchLike) {}

  private async get(url: string) {
    this.log.push({ url, method: "GET", hasBody: false, at: performance.now() });
    const resp = await this.fetchImpl(url);
    if (!resp.ok) throw new Error(`GET ${url} -> ${resp.status}`);
    return resp;
  }

  async fetchModel(baseUrl: string): Promise<Model> {
    const manifest = await (await this.get(`${baseUrl}/manifest.json`)).text();
    const weightsFile = JSON.parse(manifest).weights_file ?? "weights.bin";
    const weights = await (await this.get(`${baseUrl}/${weightsFile}`)).arrayBuffer();
    return loadModel(manifest, weights);
  }

  async fetchSample(url: string): Promise<ArrayBuffer> {
    return (await this.get(url)).arrayBuffer();
  }
}
