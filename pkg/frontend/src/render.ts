/**
 * Orthogonal slice extraction and label-overlay compositing into raw RGBA
 * pixel buffers (drawn with putImageData; no scene-graph dependency).
 */

import { Volume, voxelIndex } from "./volume.js";

export type Axis = "axial" | "coronal" | "sagittal";

export interface Slice {
  width: number;
  height: number;
  values: Float32Array;
}

export function clampCrosshair(vol: Volume, p: [number, number, number]): [number, number, number] {
  const dims = [vol.nx, vol.ny, vol.nz];
  return p.map((v, a) => Math.min(Math.max(Math.round(v), 0), dims[a] - 1)) as
    [number, number, number];
}

/** axial: z fixed (x/y plane); coronal: y fixed (x/z); sagittal: x fixed (y/z). */
export function extractSlice(vol: Volume, axis: Axis, index: number): Slice {
  if (axis === "axial") {
    const { nx: w, ny: h } = vol;
    const values = new Float32Array(w * h);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) values[x + w * y] = vol.data[voxelIndex(vol, x, y, index)];
    }
    return { width: w, height: h, values };
  }
  if (axis === "coronal") {
    const w = vol.nx, h = vol.nz;
    const values = new Float32Array(w * h);
    for (let z = 0; z < h; z++) {
      for (let x = 0; x < w; x++) values[x + w * z] = vol.data[voxelIndex(vol, x, index, z)];
    }
    return { width: w, height: h, values };
  }
  const w = vol.ny, h = vol.nz;
  const values = new Float32Array(w * h);
  for (let z = 0; z < h; z++) {
    for (let y = 0; y < w; y++) values[y + w * z] = vol.data[voxelIndex(vol, index, y, z)];
  }
  return { width: w, height: h, values };
}

const LABEL_COLORS: [number, number, number][] = [
  [0, 0, 0], [230, 80, 80], [80, 160, 230], [90, 200, 120],
  [220, 180, 70], [180, 100, 200], [100, 210, 210],
];

/**
 * Grayscale base (0..255) blended with the label overlay at `opacity`;
 * opacity 0 shows the raw slice only.
 */
export function compositeSlice(base: Slice, labels: Slice | null, opacity: number): Uint8ClampedArray {
  const out = new Uint8ClampedArray(base.width * base.height * 4);
  for (let i = 0; i < base.values.length; i++) {
    const g = Math.min(Math.max(base.values[i], 0), 255);
    let r = g, gg = g, b = g;
    const label = labels ? labels.values[i] : 0;
    if (labels && label !== 0 && opacity > 0) {
      const color = LABEL_COLORS[Math.trunc(label) % LABEL_COLORS.length];
      r = g * (1 - opacity) + color[0] * opacity;
      gg = g * (1 - opacity) + color[1] * opacity;
      b = g * (1 - opacity) + color[2] * opacity;
    }
    out[4 * i] = r;
    out[4 * i + 1] = gg;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}
