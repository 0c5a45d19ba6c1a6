import { readFile } from "node:fs/promises";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { FetchLike } from "../src/assets.js";

export const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");
export const PUBLIC = join(dirname(fileURLToPath(import.meta.url)), "..", "public");

export async function fixture(name: string): Promise<Uint8Array> {
  return new Uint8Array(await readFile(join(FIXTURES, name)));
}

/** fetch stub serving public/ from disk, so tests can record asset requests. */
export function diskFetch(root: string): FetchLike {
  return async (url: string) => {
    const path = join(root, url.replace(/^\//, ""));
    try {
      const bytes = await readFile(path);
      const buf = bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.byteLength);
      return {
        ok: true,
        status: 200,
        arrayBuffer: async () => buf as ArrayBuffer,
        text: async () => new TextDecoder().decode(bytes),
      };
    } catch {
      return {
        ok: false,
        status: 404,
        arrayBuffer: async () => new ArrayBuffer(0),
        text: async () => "",
      };
    }
  };
}

/** Tiny synthetic NIfTI volume: bright ellipsoid on a zero background.
 * The ellipsoid spans ~0.2% of the conformed 256^3 grid so the robust
 * rescale (99.9th percentile) keeps it bright. */
export function syntheticVolumeBytes(extent = 48): Uint8Array {
  const data = new Float32Array(extent ** 3);
  const half = (extent - 1) / 2;
  const radii = [extent * 0.42, extent * 0.40, extent * 0.38];
  for (let z = 0; z < extent; z++) {
    for (let y = 0; y < extent; y++) {
      for (let x = 0; x < extent; x++) {
        const r = ((x - half) / radii[0]) ** 2 + ((y - half) / radii[1]) ** 2
          + ((z - half) / radii[2]) ** 2;
        if (r <= 1.0) data[x + extent * (y + extent * z)] = r < 0.35 ? 210 : 120;
      }
    }
  }
  const view = new DataView(new ArrayBuffer(352 + data.length));
  view.setInt32(0, 348, true);
  const dims = [3, extent, extent, extent, 1, 1, 1, 1];
  for (let i = 0; i < 8; i++) view.setInt16(40 + 2 * i, dims[i], true);
  view.setInt16(70, 2, true);  // uint8
  view.setInt16(72, 8, true);
  const pixdim = [1, 1, 1, 1, 0, 0, 0, 0];
  for (let i = 0; i < 8; i++) view.setFloat32(76 + 4 * i, pixdim[i], true);
  view.setFloat32(108, 352, true);
  view.setFloat32(112, 1, true);
  view.setInt16(254, 1, true); // sform: identity
  view.setFloat32(280, 1, true);
  view.setFloat32(300, 1, true);
  view.setFloat32(320, 1, true);
  const magic = "n+1\0";
  for (let i = 0; i < 4; i++) view.setUint8(344 + i, magic.charCodeAt(i));
  const out = new Uint8Array(view.buffer);
  for (let i = 0; i < data.length; i++) out[352 + i] = data[i];
  return out;
}
