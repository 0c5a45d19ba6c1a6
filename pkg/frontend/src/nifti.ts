/**
 * Single-file NIfTI-1 parsing and serialization.
 *
 * Mirrors the native reader: endianness inferred from sizeof_hdr, gzip
 * containers detected by magic bytes, affine precedence sform > qform >
 * pixdim. Error kinds carry the same names the native pipeline reports.
 */

import { f32 } from "./f32.js";
import { identityAffine, Volume } from "./volume.js";

export const HEADER_SIZE = 348;
export const VOX_OFFSET = 352;

export class NiftiError extends Error {
  constructor(public kind: string, message: string) {
    super(`${kind}: ${message}`);
    this.name = "NiftiError";
  }
}

const DTYPE_SIZES: Record<number, number> = { 2: 1, 4: 2, 8: 4, 16: 4, 64: 8 };

export interface NiftiHeader {
  dim: number[];
  datatypeCode: number;
  pixdim: number[];
  voxOffset: number;
  sclSlope: number;
  sclInter: number;
  qformCode: number;
  sformCode: number;
  srow: number[][];
  quatern: [number, number, number];
  qoffset: [number, number, number];
  magic: string;
  littleEndian: boolean;
}

export function isGzip(bytes: Uint8Array): boolean {
  return bytes.length >= 2 && bytes[0] === 0x1f && bytes[1] === 0x8b;
}

/** Transparently inflate a gzip container (identity for plain buffers). */
export async function maybeDecompress(bytes: Uint8Array): Promise<Uint8Array> {
  if (!isGzip(bytes)) return bytes;
  const stream = new Blob([bytes as BlobPart]).stream()
    .pipeThrough(new DecompressionStream("gzip"));
  const out = new Uint8Array(await new Response(stream).arrayBuffer());
  return out;
}

function readMagic(view: DataView): string {
  let magic = "";
  for (let i = 0; i < 4; i++) magic += String.fromCharCode(view.getUint8(344 + i));
  return magic;
}

export function parseHeader(bytes: Uint8Array): NiftiHeader {
  if (bytes.length < HEADER_SIZE) {
    throw new NiftiError("TooShort", `need ${HEADER_SIZE} header bytes, got ${bytes.length}`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let littleEndian = true;
  if (view.getInt32(0, true) !== HEADER_SIZE) {
    if (view.getInt32(0, false) === HEADER_SIZE) {
      littleEndian = false;
    } else {
      throw new NiftiError("BadMagic", "sizeof_hdr is not 348 under either byte order");
    }
  }
  const magic = readMagic(view);
  if (magic !== "n+1\0" && magic !== "ni1\0") {
    throw new NiftiError("BadMagic", `unrecognized magic ${JSON.stringify(magic)}`);
  }
  const datatypeCode = view.getInt16(70, littleEndian);
  if (!(datatypeCode in DTYPE_SIZES)) {
    throw new NiftiError("UnsupportedDatatype", `datatype code ${datatypeCode} not supported`);
  }
  const dim: number[] = [];
  for (let i = 0; i < 8; i++) dim.push(view.getInt16(40 + 2 * i, littleEndian));
  if (dim[0] !== 3 && dim[0] !== 4) {
    throw new NiftiError("BadDims", `dim[0]=${dim[0]}; only 3D volumes supported`);
  }
  if (dim[1] < 1 || dim[2] < 1 || dim[3] < 1) {
    throw new NiftiError("BadDims", `spatial extents ${dim.slice(1, 4)} must all be >= 1`);
  }
  if (dim[0] === 4 && dim[4] > 1) {
    throw new NiftiError("BadDims", `dim[4]=${dim[4]}; multi-frame volumes not supported`);
  }
  const pixdim: number[] = [];
  for (let i = 0; i < 8; i++) pixdim.push(view.getFloat32(76 + 4 * i, littleEndian));
  const voxOffset = view.getFloat32(108, littleEndian);
  if (magic === "n+1\0" && voxOffset < VOX_OFFSET) {
    throw new NiftiError("InvalidHeader", `vox_offset ${voxOffset} < ${VOX_OFFSET}`);
  }
  const srow: number[][] = [];
  for (let r = 0; r < 3; r++) {
    const row: number[] = [];
    for (let c = 0; c < 4; c++) row.push(view.getFloat32(280 + 16 * r + 4 * c, littleEndian));
    srow.push(row);
  }
  return {
    dim,
    datatypeCode,
    pixdim,
    voxOffset: Math.trunc(voxOffset),
    sclSlope: view.getFloat32(112, littleEndian),
    sclInter: view.getFloat32(116, littleEndian),
    qformCode: view.getInt16(252, littleEndian),
    sformCode: view.getInt16(254, littleEndian),
    srow,
    quatern: [view.getFloat32(256, littleEndian), view.getFloat32(260, littleEndian),
              view.getFloat32(264, littleEndian)],
    qoffset: [view.getFloat32(268, littleEndian), view.getFloat32(272, littleEndian),
              view.getFloat32(276, littleEndian)],
    magic,
    littleEndian,
  };
}

function headerAffine(h: NiftiHeader): Float64Array {
  if (h.sformCode > 0) {
    const aff = new Float64Array(16);
    for (let r = 0; r < 3; r++) for (let c = 0; c < 4; c++) aff[4 * r + c] = h.srow[r][c];
    aff[15] = 1;
    return aff;
  }
  if (h.qformCode > 0) {
    const [b, c, d] = h.quatern;
    const a2 = 1.0 - (b * b + c * c + d * d);
    const a = a2 > 0.0 ? Math.sqrt(a2) : 0.0;
    const r = [
      [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
      [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
      [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    const qfac = h.pixdim[0] === -1.0 ? -1.0 : 1.0;
    const scale = [h.pixdim[1], h.pixdim[2], h.pixdim[3] * qfac];
    const aff = new Float64Array(16);
    for (let i = 0; i < 3; i++) {
      for (let j = 0; j < 3; j++) aff[4 * i + j] = r[i][j] * scale[j];
      aff[4 * i + 3] = h.qoffset[i];
    }
    aff[15] = 1;
    return aff;
  }
  return identityAffine(
    [h.pixdim[1] > 0 ? h.pixdim[1] : 1, h.pixdim[2] > 0 ? h.pixdim[2] : 1,
     h.pixdim[3] > 0 ? h.pixdim[3] : 1], [0, 0, 0]);
}

/** Decode a (decompressed) single-file volume to float32 working precision. */
export function readVolume(bytes: Uint8Array): Volume {
  const h = parseHeader(bytes);
  if (h.magic === "ni1\0") {
    throw new NiftiError("UnsupportedFormat", "paired .hdr/.img files are not supported");
  }
  const [nx, ny, nz] = [h.dim[1], h.dim[2], h.dim[3]];
  const count = nx * ny * nz;
  const itemSize = DTYPE_SIZES[h.datatypeCode];
  if (bytes.length < h.voxOffset + count * itemSize) {
    throw new NiftiError("TruncatedData",
      `file holds ${bytes.length} bytes, voxels need ${h.voxOffset + count * itemSize}`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const data = new Float32Array(count);
  const o = h.voxOffset;
  const le = h.littleEndian;
  switch (h.datatypeCode) {
    case 2:
      for (let i = 0; i < count; i++) data[i] = view.getUint8(o + i);
      break;
    case 4:
      for (let i = 0; i < count; i++) data[i] = view.getInt16(o + 2 * i, le);
      break;
    case 8:
      for (let i = 0; i < count; i++) data[i] = f32(view.getInt32(o + 4 * i, le));
      break;
    case 16:
      for (let i = 0; i < count; i++) data[i] = view.getFloat32(o + 4 * i, le);
      break;
    case 64:
      for (let i = 0; i < count; i++) data[i] = f32(view.getFloat64(o + 8 * i, le));
      break;
  }
  const slope = h.sclSlope;
  const inter = h.sclInter;
  if (slope !== 0.0 && !(slope === 1.0 && inter === 0.0)) {
    const s = f32(slope);
    const t = f32(inter);
    for (let i = 0; i < count; i++) data[i] = f32(f32(data[i] * s) + t);
  }
  const spacing: [number, number, number] = [
    h.pixdim[1] > 0 ? h.pixdim[1] : 1,
    h.pixdim[2] > 0 ? h.pixdim[2] : 1,
    h.pixdim[3] > 0 ? h.pixdim[3] : 1,
  ];
  return { nx, ny, nz, spacing, affine: headerAffine(h), data };
}

export async function readVolumeAsync(buffer: ArrayBuffer): Promise<Volume> {
  return readVolume(await maybeDecompress(new Uint8Array(buffer)));
}

/**
 * Little-endian single-file bytes, byte-identical to the native writer:
 * zeroed 348-byte header with the fields below set, a 4-byte extension
 * flag, then the voxel block.
 */
export function serializeVolume(vol: Volume, datatypeCode: number): Uint8Array {
  if (!(datatypeCode in DTYPE_SIZES)) {
    throw new NiftiError("UnsupportedDatatype", `datatype code ${datatypeCode} not supported`);
  }
  const count = vol.nx * vol.ny * vol.nz;
  const out = new Uint8Array(VOX_OFFSET + count * DTYPE_SIZES[datatypeCode]);
  const view = new DataView(out.buffer);
  view.setInt32(0, HEADER_SIZE, true);
  const dims = [3, vol.nx, vol.ny, vol.nz, 1, 1, 1, 1];
  for (let i = 0; i < 8; i++) view.setInt16(40 + 2 * i, dims[i], true);
  view.setInt16(70, datatypeCode, true);
  view.setInt16(72, DTYPE_SIZES[datatypeCode] * 8, true);
  const pixdim = [1, vol.spacing[0], vol.spacing[1], vol.spacing[2], 0, 0, 0, 0];
  for (let i = 0; i < 8; i++) view.setFloat32(76 + 4 * i, pixdim[i], true);
  view.setFloat32(108, VOX_OFFSET, true);
  view.setFloat32(112, 1.0, true);
  view.setFloat32(116, 0.0, true);
  view.setUint8(123, 2); // spatial units: mm
  view.setInt16(252, 0, true);
  view.setInt16(254, 1, true);
  for (let r = 0; r < 3; r++) {
    for (let c = 0; c < 4; c++) {
      view.setFloat32(280 + 16 * r + 4 * c, vol.affine[4 * r + c], true);
    }
  }
  const magic = "n+1\0";
  for (let i = 0; i < 4; i++) view.setUint8(344 + i, magic.charCodeAt(i));

  const o = VOX_OFFSET;
  switch (datatypeCode) {
    case 2:
      for (let i = 0; i < count; i++) {
        const v = Math.round(vol.data[i]);
        if (v < 0 || v > 255) {
          throw new NiftiError("ValueOutOfRange", `value ${vol.data[i]} does not fit uint8`);
        }
        view.setUint8(o + i, v);
      }
      break;
    case 4:
      for (let i = 0; i < count; i++) view.setInt16(o + 2 * i, Math.round(vol.data[i]), true);
      break;
    case 8:
      for (let i = 0; i < count; i++) view.setInt32(o + 4 * i, Math.round(vol.data[i]), true);
      break;
    case 16:
      for (let i = 0; i < count; i++) view.setFloat32(o + 4 * i, vol.data[i], true);
      break;
    case 64:
      for (let i = 0; i < count; i++) view.setFloat64(o + 8 * i, vol.data[i], true);
      break;
  }
  return out;
}
