/**
 * Subvolume grids and tiled (failsafe) inference: disjoint cores covering
 * the volume, each padded by a clamped halo; only core scores are kept.
 */

import { FeatureMap, MemoryBudget, runModel } from "./engine.js";
import { Model } from "./model.js";

export interface Tile {
  coreOrigin: [number, number, number];
  coreExtents: [number, number, number];
  paddedOrigin: [number, number, number];
  paddedExtents: [number, number, number];
}

export interface SubvolumeGrid {
  sourceExtents: [number, number, number];
  cube: number;
  halo: number;
  tiles: Tile[];
}

export function divide(extents: [number, number, number], cube: number,
                       halo: number): SubvolumeGrid {
  if (cube < 1) throw new Error(`BadCubeSize: cube must be >= 1, got ${cube}`);
  const counts = extents.map(n => Math.ceil(n / cube));
  const tiles: Tile[] = [];
  for (let ix = 0; ix < counts[0]; ix++) {
    for (let iy = 0; iy < counts[1]; iy++) {
      for (let iz = 0; iz < counts[2]; iz++) {
        const origin = [ix * cube, iy * cube, iz * cube];
        const core = origin.map((o, a) => Math.min(cube, extents[a] - o));
        const padLo = origin.map(o => Math.max(0, o - halo));
        const padHi = origin.map((o, a) => Math.min(extents[a], o + core[a] + halo));
        tiles.push({
          coreOrigin: origin as [number, number, number],
          coreExtents: core as [number, number, number],
          paddedOrigin: padLo as [number, number, number],
          paddedExtents: padHi.map((h, a) => h - padLo[a]) as [number, number, number],
        });
      }
    }
  }
  return { sourceExtents: extents, cube, halo, tiles };
}

function extractPatch(fm: FeatureMap, origin: number[], extents: number[]): FeatureMap {
  const [pnx, pny, pnz] = extents;
  const out = new Float32Array(fm.channels * pnx * pny * pnz);
  for (let c = 0; c < fm.channels; c++) {
    for (let z = 0; z < pnz; z++) {
      for (let y = 0; y < pny; y++) {
        const src = ((c * fm.nz + origin[2] + z) * fm.ny + origin[1] + y) * fm.nx + origin[0];
        const dst = ((c * pnz + z) * pny + y) * pnx;
        for (let x = 0; x < pnx; x++) out[dst + x] = fm.data[src + x];
      }
    }
  }
  return { channels: fm.channels, nx: pnx, ny: pny, nz: pnz, data: out };
}

export interface TileScores {
  tile: Tile;
  core: FeatureMap;
}

/** Run the model on each padded tile, keeping only the core region. */
export function runTiles(m: Model, fm: FeatureMap, grid: SubvolumeGrid,
                         budget: MemoryBudget): TileScores[] {
  const results: TileScores[] = [];
  for (const tile of grid.tiles) {
    const patch = extractPatch(fm, tile.paddedOrigin, tile.paddedExtents);
    const scores = runModel(m, patch, budget);
    const rel = tile.coreOrigin.map((c, a) => c - tile.paddedOrigin[a]);
    const [cnx, cny, cnz] = tile.coreExtents;
    const core = new Float32Array(scores.channels * cnx * cny * cnz);
    for (let c = 0; c < scores.channels; c++) {
      for (let z = 0; z < cnz; z++) {
        for (let y = 0; y < cny; y++) {
          const src = ((c * scores.nz + rel[2] + z) * scores.ny + rel[1] + y) * scores.nx + rel[0];
          const dst = ((c * cnz + z) * cny + y) * cnx;
          for (let x = 0; x < cnx; x++) core[dst + x] = scores.data[src + x];
        }
      }
    }
    results.push({ tile, core: { channels: scores.channels, nx: cnx, ny: cny, nz: cnz, data: core } });
  }
  return results;
}

/** Place each tile's core scores at its origin in a full-extent map. */
export function assembleScores(grid: SubvolumeGrid, results: TileScores[]): FeatureMap {
  const [nx, ny, nz] = grid.sourceExtents;
  const channels = results[0].core.channels;
  const out = new Float32Array(channels * nx * ny * nz);
  for (const { tile, core } of results) {
    const [cnx, cny, cnz] = tile.coreExtents;
    for (let c = 0; c < channels; c++) {
      for (let z = 0; z < cnz; z++) {
        for (let y = 0; y < cny; y++) {
          const src = ((c * cnz + z) * cny + y) * cnx;
          const dst = ((c * nz + tile.coreOrigin[2] + z) * ny + tile.coreOrigin[1] + y) * nx
            + tile.coreOrigin[0];
          for (let x = 0; x < cnx; x++) out[dst + x] = core.data[src + x];
        }
      }
    }
  }
  return { channels, nx, ny, nz, data: out };
}

/** Tile-wise inference stitched from core regions (halo voxels discarded). */
export function inferTiled(m: Model, fm: FeatureMap, grid: SubvolumeGrid,
                           budget: MemoryBudget): FeatureMap {
  return assembleScores(grid, runTiles(m, fm, grid, budget));
}
