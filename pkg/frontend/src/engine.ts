/**
 * Forward inference with float32 semantics (Math.fround after every store),
 * replicating the native engine's accumulation order exactly: per output
 * row, taps accumulate in (ci, kz, ky, kx) order starting from the bias.
 * Layer-by-layer execution releases the previous activation before the next
 * conv allocates, under the same peak-byte budget accounting.
 */

import { f32 } from "./f32.js";
import { Layer, Model } from "./model.js";

export class EngineError extends Error {
  constructor(public kind: string, message: string) {
    super(`${kind}: ${message}`);
    this.name = "EngineError";
  }
}

/** Channel-major activation: data[((c*nz + z)*ny + y)*nx + x]. */
export interface FeatureMap {
  channels: number;
  nx: number;
  ny: number;
  nz: number;
  data: Float32Array;
}

export class MemoryBudget {
  liveBytes = 0;
  highWater = 0;
  liveBuffers = 0;
  maxLiveBuffers = 0;

  constructor(public peakBytes: number) {}

  allocate(nbytes: number, activation = true, what = "buffer"): void {
    if (this.liveBytes + nbytes > this.peakBytes) {
      throw new EngineError("BudgetExceeded",
        `allocating ${nbytes} B for ${what} would raise live bytes to ` +
        `${this.liveBytes + nbytes} over the ${this.peakBytes} B budget`);
    }
    this.liveBytes += nbytes;
    this.highWater = Math.max(this.highWater, this.liveBytes);
    if (activation) {
      this.liveBuffers += 1;
      this.maxLiveBuffers = Math.max(this.maxLiveBuffers, this.liveBuffers);
    }
  }

  release(nbytes: number, activation = true): void {
    this.liveBytes -= nbytes;
    if (activation) this.liveBuffers -= 1;
  }
}

export function unlimitedBudget(): MemoryBudget {
  return new MemoryBudget(Number.MAX_SAFE_INTEGER);
}

function convOutShape(fm: FeatureMap, layer: Layer): [number, number, number] {
  if (fm.channels !== layer.inChannels) {
    throw new EngineError("ShapeMismatch",
      `input has ${fm.channels} channels, layer expects ${layer.inChannels}`);
  }
  const out: number[] = [];
  const dims = [fm.nx, fm.ny, fm.nz];
  for (let a = 0; a < 3; a++) {
    const n = dims[a] + 2 * layer.padding[a] - layer.dilation[a] * (layer.kernel[a] - 1);
    if (n < 1) throw new EngineError("ShapeMismatch", `conv output extent ${n} on axis ${a}`);
    out.push(n);
  }
  return out as [number, number, number];
}

/** Dilated conv with zero padding; row-accumulator, fixed tap order. */
export function conv3d(fm: FeatureMap, layer: Layer, weights: Float32Array): FeatureMap {
  const [onx, ony, onz] = convOutShape(fm, layer);
  const { nx, ny, nz, data } = fm;
  const cin = layer.inChannels;
  const cout = layer.outChannels;
  const [kx_n, ky_n, kz_n] = layer.kernel;
  const [dx, dy, dz] = layer.dilation;
  const [px, py, pz] = layer.padding;
  const wBase = layer.weightOffset >> 2;
  const bBase = layer.biasOffset >> 2;
  const out = new Float32Array(cout * onz * ony * onx);
  const row = new Float32Array(onx);

  for (let co = 0; co < cout; co++) {
    const bias = weights[bBase + co];
    for (let z = 0; z < onz; z++) {
      for (let y = 0; y < ony; y++) {
        row.fill(bias);
        for (let ci = 0; ci < cin; ci++) {
          for (let kz = 0; kz < kz_n; kz++) {
            const iz = z + dz * (kz_n - 1 - kz) - pz;
            if (iz < 0 || iz >= nz) continue;
            for (let ky = 0; ky < ky_n; ky++) {
              const iy = y + dy * (ky_n - 1 - ky) - py;
              if (iy < 0 || iy >= ny) continue;
              const inBase = ((ci * nz + iz) * ny + iy) * nx;
              const wRow = wBase + (((co * cin + ci) * kz_n + kz) * ky_n + ky) * kx_n;
              for (let kx = 0; kx < kx_n; kx++) {
                const sx = dx * (kx_n - 1 - kx) - px;
                const x0 = Math.max(0, -sx);
                const x1 = Math.min(onx, nx - sx);
                const wv = weights[wRow + kx];
                for (let xx = x0; xx < x1; xx++) {
                  row[xx] = f32(row[xx] + f32(wv * data[inBase + xx + sx]));
                }
              }
            }
          }
        }
        out.set(row, ((co * onz + z) * ony + y) * onx);
      }
    }
  }
  return { channels: cout, nx: onx, ny: ony, nz: onz, data: out };
}

/** Eval-mode batchnorm in place: ((x - mean) * inv) * scale + shift. */
export function batchnormInPlace(fm: FeatureMap, layer: Layer, weights: Float32Array): void {
  if (fm.channels !== layer.outChannels) {
    throw new EngineError("ShapeMismatch",
      `input has ${fm.channels} channels, layer expects ${layer.outChannels}`);
  }
  const c = layer.outChannels;
  const base = layer.bnParamOffset >> 2;
  const eps = f32(layer.epsilon);
  const plane = fm.nx * fm.ny * fm.nz;
  for (let ch = 0; ch < c; ch++) {
    const scale = weights[base + ch];
    const shift = weights[base + c + ch];
    const mean = weights[base + 2 * c + ch];
    const variance = weights[base + 3 * c + ch];
    if (variance < 0) throw new EngineError("NegativeVariance", "running variance below zero");
    const inv = f32(1.0 / f32(Math.sqrt(f32(variance + eps))));
    const off = ch * plane;
    const d = fm.data;
    for (let i = 0; i < plane; i++) {
      let t = f32(d[off + i] - mean);
      t = f32(t * inv);
      t = f32(t * scale);
      d[off + i] = f32(t + shift);
    }
  }
}

export function reluInPlace(fm: FeatureMap): void {
  const d = fm.data;
  for (let i = 0; i < d.length; i++) if (d[i] < 0) d[i] = 0;
}

/** Apply the layer stack with buffer-disposal accounting (two live max). */
export function runModel(m: Model, fm: FeatureMap, budget: MemoryBudget): FeatureMap {
  if (fm.channels !== 1) {
    throw new EngineError("ShapeMismatch", `model input must have 1 channel, got ${fm.channels}`);
  }
  const weightsBytes = m.weights.length * 4;
  budget.allocate(weightsBytes, false, "weights");
  let current = fm;
  budget.allocate(current.data.length * 4, true, "input activation");
  try {
    for (const layer of m.layers) {
      if (layer.kind === "conv3d") {
        const [onx, ony, onz] = convOutShape(current, layer);
        const outBytes = layer.outChannels * onx * ony * onz * 4;
        budget.allocate(outBytes, true, "conv activation");
        const next = conv3d(current, layer, m.weights);
        budget.release(current.data.length * 4);
        current = next;
      } else if (layer.kind === "batchnorm3d") {
        batchnormInPlace(current, layer, m.weights);
      } else if (layer.kind === "relu") {
        reluInPlace(current);
      }
      // dropout3d: identity at inference
    }
  } finally {
    budget.release(current.data.length * 4);
    budget.release(weightsBytes, false);
  }
  return current;
}

/** Per-voxel winning class, ties to the lowest channel index. */
export function argmaxLabels(fm: FeatureMap): Int32Array {
  const plane = fm.nx * fm.ny * fm.nz;
  const out = new Int32Array(plane);
  for (let i = 0; i < plane; i++) {
    let best = fm.data[i];
    let bestC = 0;
    for (let c = 1; c < fm.channels; c++) {
      const v = fm.data[c * plane + i];
      if (v > best) {
        best = v;
        bestC = c;
      }
    }
    out[i] = bestC;
  }
  return out;
}
