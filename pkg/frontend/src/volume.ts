/**
 * Dense volumes (x-fastest flat layout) and the conform preprocessing.
 *
 * All resample arithmetic runs in float64 with a pinned operation order so it
 * reproduces the native pipeline exactly: same affine inverse formula, same
 * lerp nesting, same nearest-rank percentiles, same rounding.
 */

export interface Volume {
  nx: number;
  ny: number;
  nz: number;
  spacing: [number, number, number];
  affine: Float64Array; // 4x4 row-major, voxel index -> world mm
  data: Float32Array | Int32Array | Uint8Array;
}

export interface Box {
  min: [number, number, number];
  max: [number, number, number]; // inclusive
}

export class VolumeError extends Error {
  constructor(public kind: string, message: string) {
    super(`${kind}: ${message}`);
    this.name = "VolumeError";
  }
}

export const CONFORM_EXTENT = 256;
const PERCENTILE_SAMPLE_THRESHOLD = 2 ** 24;

export function identityAffine(spacing: [number, number, number],
                               origin: [number, number, number]): Float64Array {
  const aff = new Float64Array(16);
  aff[0] = spacing[0];
  aff[5] = spacing[1];
  aff[10] = spacing[2];
  aff[3] = origin[0];
  aff[7] = origin[1];
  aff[11] = origin[2];
  aff[15] = 1;
  return aff;
}

export function voxelIndex(vol: { nx: number; ny: number }, x: number, y: number, z: number): number {
  return x + vol.nx * (y + vol.ny * z);
}

/** Closed-form 3x3 inverse (adjugate over determinant), pinned op order. */
function inv3(m: Float64Array): Float64Array {
  const a = m[0], b = m[1], c = m[2];
  const d = m[4], e = m[5], f = m[6];
  const g = m[8], h = m[9], i = m[10];
  const co00 = e * i - f * h;
  const co01 = f * g - d * i;
  const co02 = d * h - e * g;
  const det = a * co00 + b * co01 + c * co02;
  if (det === 0.0 || !Number.isFinite(det)) {
    throw new VolumeError("DegenerateAffine", "voxel-to-world affine is singular");
  }
  const inv = new Float64Array(9);
  inv[0] = co00 / det;
  inv[1] = (c * h - b * i) / det;
  inv[2] = (b * f - c * e) / det;
  inv[3] = co01 / det;
  inv[4] = (a * i - c * g) / det;
  inv[5] = (c * d - a * f) / det;
  inv[6] = co02 / det;
  inv[7] = (b * g - a * h) / det;
  inv[8] = (a * e - b * d) / det;
  return inv;
}

function worldCenter(vol: Volume): [number, number, number] {
  const cx = (vol.nx - 1) / 2.0;
  const cy = (vol.ny - 1) / 2.0;
  const cz = (vol.nz - 1) / 2.0;
  const m = vol.affine;
  return [
    m[0] * cx + m[1] * cy + m[2] * cz + m[3],
    m[4] * cx + m[5] * cy + m[6] * cz + m[7],
    m[8] * cx + m[9] * cy + m[10] * cz + m[11],
  ];
}

function percentileNearestRank(values: Float64Array, q: number): number {
  let flat = values;
  if (flat.length > PERCENTILE_SAMPLE_THRESHOLD) {
    const sampled = new Float64Array(Math.ceil(flat.length / 8));
    for (let i = 0, j = 0; i < flat.length; i += 8, j++) sampled[j] = flat[i];
    flat = sampled;
  }
  const sorted = flat.slice().sort();
  const idx = Math.floor((q / 100.0) * (sorted.length - 1) + 0.5);
  return sorted[idx];
}

function rescaleToBytes(values: Float64Array): Float32Array {
  const lo = percentileNearestRank(values, 0.0);
  const hi = percentileNearestRank(values, 99.9);
  const out = new Float32Array(values.length);
  if (hi === lo) return out;
  const span = hi - lo;
  for (let i = 0; i < values.length; i++) {
    let r = (values[i] - lo) / span;
    r = r < 0.0 ? 0.0 : r > 1.0 ? 1.0 : r;
    out[i] = Math.floor(r * 255.0 + 0.5);
  }
  return out;
}

/**
 * Resample onto the canonical 256^3 grid at 1 mm, centered on the input's
 * world center, then rescale intensities to integers in [0, 255].
 */
export function conform(vol: Volume): Volume {
  const extent = CONFORM_EXTENT;
  const spacing = 1.0;
  const [wcx, wcy, wcz] = worldCenter(vol);
  const half = (extent - 1) / 2.0;
  const t: [number, number, number] = [wcx - spacing * half, wcy - spacing * half,
                                       wcz - spacing * half];
  const rinv = inv3(vol.affine);
  const tb0 = t[0] - vol.affine[3];
  const tb1 = t[1] - vol.affine[7];
  const tb2 = t[2] - vol.affine[11];
  const off0 = rinv[0] * tb0 + rinv[1] * tb1 + rinv[2] * tb2;
  const off1 = rinv[3] * tb0 + rinv[4] * tb1 + rinv[5] * tb2;
  const off2 = rinv[6] * tb0 + rinv[7] * tb1 + rinv[8] * tb2;

  const { nx, ny, nz, data } = vol;
  const out = new Float64Array(extent * extent * extent);
  for (let ox = 0; ox < extent; ox++) {
    const vx = ox * spacing;
    for (let oy = 0; oy < extent; oy++) {
      const vy = oy * spacing;
      for (let oz = 0; oz < extent; oz++) {
        const vz = oz * spacing;
        const cx = rinv[0] * vx + rinv[1] * vy + rinv[2] * vz + off0;
        const cy = rinv[3] * vx + rinv[4] * vy + rinv[5] * vz + off1;
        const cz = rinv[6] * vx + rinv[7] * vy + rinv[8] * vz + off2;
        const o = ox + extent * (oy + extent * oz);
        if (cx < 0.0 || cx > nx - 1 || cy < 0.0 || cy > ny - 1
            || cz < 0.0 || cz > nz - 1) {
          out[o] = 0.0;
          continue;
        }
        const x0 = Math.floor(cx);
        const y0 = Math.floor(cy);
        const z0 = Math.floor(cz);
        const fx = cx - x0;
        const fy = cy - y0;
        const fz = cz - z0;
        const x1 = Math.min(x0 + 1, nx - 1);
        const y1 = Math.min(y0 + 1, ny - 1);
        const z1 = Math.min(z0 + 1, nz - 1);
        const c000 = data[x0 + nx * (y0 + ny * z0)];
        const c100 = data[x1 + nx * (y0 + ny * z0)];
        const c010 = data[x0 + nx * (y1 + ny * z0)];
        const c110 = data[x1 + nx * (y1 + ny * z0)];
        const c001 = data[x0 + nx * (y0 + ny * z1)];
        const c101 = data[x1 + nx * (y0 + ny * z1)];
        const c011 = data[x0 + nx * (y1 + ny * z1)];
        const c111 = data[x1 + nx * (y1 + ny * z1)];
        const gx = 1.0 - fx;
        const cx00 = c000 * gx + c100 * fx;
        const cx10 = c010 * gx + c110 * fx;
        const cx01 = c001 * gx + c101 * fx;
        const cx11 = c011 * gx + c111 * fx;
        const gy = 1.0 - fy;
        const cxy0 = cx00 * gy + cx10 * fy;
        const cxy1 = cx01 * gy + cx11 * fy;
        out[o] = cxy0 * (1.0 - fz) + cxy1 * fz;
      }
    }
  }
  return {
    nx: extent, ny: extent, nz: extent,
    spacing: [spacing, spacing, spacing],
    affine: identityAffine([spacing, spacing, spacing], t),
    data: rescaleToBytes(out),
  };
}

/** Tight box around nonzero voxels, grown by margin, clamped to the volume. */
export function maskBbox(vol: Volume, predicate: (v: number) => boolean,
                         margin: number): Box {
  let found = false;
  const lo = [vol.nx, vol.ny, vol.nz];
  const hi = [-1, -1, -1];
  const { nx, ny, nz, data } = vol;
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      const base = nx * (y + ny * z);
      for (let x = 0; x < nx; x++) {
        if (predicate(data[base + x])) {
          found = true;
          if (x < lo[0]) lo[0] = x;
          if (y < lo[1]) lo[1] = y;
          if (z < lo[2]) lo[2] = z;
          if (x > hi[0]) hi[0] = x;
          if (y > hi[1]) hi[1] = y;
          if (z > hi[2]) hi[2] = z;
        }
      }
    }
  }
  if (!found) throw new VolumeError("EmptyMask", "mask has no nonzero voxel");
  const extents = [vol.nx, vol.ny, vol.nz];
  return {
    min: [0, 1, 2].map(a => Math.max(lo[a] - margin, 0)) as [number, number, number],
    max: [0, 1, 2].map(a => Math.min(hi[a] + margin, extents[a] - 1)) as [number, number, number],
  };
}

export function cropVolume(vol: Volume, box: Box): Volume {
  const [x0, y0, z0] = box.min;
  const [x1, y1, z1] = box.max;
  const cnx = x1 - x0 + 1, cny = y1 - y0 + 1, cnz = z1 - z0 + 1;
  const data = new (vol.data.constructor as { new(n: number): typeof vol.data })(cnx * cny * cnz);
  for (let z = 0; z < cnz; z++) {
    for (let y = 0; y < cny; y++) {
      const src = x0 + vol.nx * ((y0 + y) + vol.ny * (z0 + z));
      const dst = cnx * (y + cny * z);
      for (let x = 0; x < cnx; x++) data[dst + x] = vol.data[src + x];
    }
  }
  const affine = vol.affine.slice();
  affine[3] = vol.affine[3] + (vol.affine[0] * x0 + vol.affine[1] * y0 + vol.affine[2] * z0);
  affine[7] = vol.affine[7] + (vol.affine[4] * x0 + vol.affine[5] * y0 + vol.affine[6] * z0);
  affine[11] = vol.affine[11] + (vol.affine[8] * x0 + vol.affine[9] * y0 + vol.affine[10] * z0);
  return { nx: cnx, ny: cny, nz: cnz, spacing: vol.spacing, affine, data };
}

/** Place a cropped label block back at its box inside zeros of the target shape. */
export function embedLabels(labels: Int32Array, box: Box,
                            target: [number, number, number]): Int32Array {
  const [tnx, tny, tnz] = target;
  const out = new Int32Array(tnx * tny * tnz);
  const [x0, y0, z0] = box.min;
  const cnx = box.max[0] - x0 + 1;
  const cny = box.max[1] - y0 + 1;
  const cnz = box.max[2] - z0 + 1;
  for (let z = 0; z < cnz; z++) {
    for (let y = 0; y < cny; y++) {
      const src = cnx * (y + cny * z);
      const dst = x0 + tnx * ((y0 + y) + tny * (z0 + z));
      for (let x = 0; x < cnx; x++) out[dst + x] = labels[src + x];
    }
  }
  return out;
}
