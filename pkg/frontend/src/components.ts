/**
 * 3D connected components: two-pass raster scan with union-find, matching
 * the native implementation's first-encounter id order and tie rules.
 */

export class ComponentsError extends Error {
  constructor(public kind: string, message: string) {
    super(`${kind}: ${message}`);
    this.name = "ComponentsError";
  }
}

function precedingOffsets(connectivity: 6 | 26): Int32Array {
  const offs: number[] = [];
  if (connectivity === 6) {
    offs.push(-1, 0, 0, 0, -1, 0, 0, 0, -1); // (dz,dy,dx) triples
  } else {
    for (let dz = -1; dz <= 1; dz++) {
      for (let dy = -1; dy <= 1; dy++) {
        for (let dx = -1; dx <= 1; dx++) {
          if (dz < 0 || (dz === 0 && (dy < 0 || (dy === 0 && dx < 0)))) {
            offs.push(dz, dy, dx);
          }
        }
      }
    }
  }
  return new Int32Array(offs);
}

function find(parent: Int32Array, i: number): number {
  let root = i;
  while (parent[root] !== root) root = parent[root];
  while (parent[i] !== root) {
    const next = parent[i];
    parent[i] = root;
    i = next;
  }
  return root;
}

export interface Labeling {
  componentId: Int32Array; // x-fastest, 0 = background
  sizes: Float64Array;     // sizes[i] = voxel count of component i+1
  count: number;
}

export function labelComponents(
  data: ArrayLike<number>, nx: number, ny: number, nz: number,
  connectivity: 6 | 26,
): Labeling {
  const lab = new Int32Array(nx * ny * nz);
  let nFg = 0;
  for (let i = 0; i < data.length; i++) if (data[i] !== 0) nFg++;
  if (nFg === 0) return { componentId: lab, sizes: new Float64Array(0), count: 0 };

  const parent = new Int32Array(nFg + 1);
  const offs = precedingOffsets(connectivity);
  const nOff = offs.length / 3;
  let nextLabel = 1;
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      const base = nx * (y + ny * z);
      for (let x = 0; x < nx; x++) {
        if (data[base + x] === 0) continue;
        let best = 0;
        for (let k = 0; k < nOff; k++) {
          const zz = z + offs[3 * k];
          const yy = y + offs[3 * k + 1];
          const xx = x + offs[3 * k + 2];
          if (zz < 0 || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
          const l = lab[xx + nx * (yy + ny * zz)];
          if (l !== 0) {
            const r = find(parent, l);
            if (best === 0 || r < best) best = r;
          }
        }
        if (best === 0) {
          parent[nextLabel] = nextLabel;
          lab[base + x] = nextLabel;
          nextLabel += 1;
        } else {
          lab[base + x] = best;
          for (let k = 0; k < nOff; k++) {
            const zz = z + offs[3 * k];
            const yy = y + offs[3 * k + 1];
            const xx = x + offs[3 * k + 2];
            if (zz < 0 || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
            const l = lab[xx + nx * (yy + ny * zz)];
            if (l !== 0) parent[find(parent, l)] = best;
          }
        }
      }
    }
  }

  const remap = new Int32Array(nextLabel);
  const sizes = new Float64Array(nextLabel);
  let count = 0;
  for (let i = 0; i < lab.length; i++) {
    const l = lab[i];
    if (l === 0) continue;
    const r = find(parent, l);
    if (remap[r] === 0) {
      count += 1;
      remap[r] = count;
    }
    lab[i] = remap[r];
    sizes[remap[r]] += 1;
  }
  return { componentId: lab, sizes: sizes.slice(1, count + 1), count };
}

/** Zero all voxels outside the largest foreground component (ties: lowest id). */
export function keepLargest(labels: Int32Array, nx: number, ny: number, nz: number,
                            connectivity: 6 | 26): Int32Array {
  const comps = labelComponents(labels, nx, ny, nz, connectivity);
  if (comps.count === 0) {
    throw new ComponentsError("EmptyMask", "label volume has no foreground voxel");
  }
  let winner = 1;
  for (let i = 1; i < comps.count; i++) {
    if (comps.sizes[i] > comps.sizes[winner - 1]) winner = i + 1;
  }
  const out = new Int32Array(labels.length);
  for (let i = 0; i < labels.length; i++) {
    out[i] = comps.componentId[i] === winner ? labels[i] : 0;
  }
  return out;
}
