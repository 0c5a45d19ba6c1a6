/**
 * Model manifest + weight blob loading (same directory format the native
 * CLI consumes: manifest.json describing the layer stack, weights.bin as
 * flat little-endian float32).
 */

export class ModelError extends Error {
  constructor(public kind: string, message: string) {
    super(`${kind}: ${message}`);
    this.name = "ModelError";
  }
}

export type LayerKind = "conv3d" | "batchnorm3d" | "relu" | "dropout3d";

export interface Layer {
  kind: LayerKind;
  inChannels: number;
  outChannels: number;
  kernel: [number, number, number];
  dilation: [number, number, number];
  padding: [number, number, number];
  epsilon: number;
  weightOffset: number;
  biasOffset: number;
  bnParamOffset: number;
}

export interface Model {
  name: string;
  labels: string[];
  layers: Layer[];
  weights: Float32Array;
}

function triple(value: unknown, fallback: number): [number, number, number] {
  if (typeof value === "number") return [value, value, value];
  if (Array.isArray(value) && value.length === 3) {
    return [value[0], value[1], value[2]];
  }
  return [fallback, fallback, fallback];
}

function weightCount(layer: Layer): number {
  const [kx, ky, kz] = layer.kernel;
  return layer.inChannels * layer.outChannels * kx * ky * kz;
}

async function sha256hex(bytes: Uint8Array): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", bytes.slice().buffer);
  return Array.from(new Uint8Array(digest)).map(b => b.toString(16).padStart(2, "0")).join("");
}

export async function loadModel(manifestText: string, weightsBuffer: ArrayBuffer): Promise<Model> {
  let doc: Record<string, unknown>;
  try {
    doc = JSON.parse(manifestText);
  } catch (e) {
    throw new ModelError("SchemaError", `manifest is not valid JSON: ${e}`);
  }
  for (const field of ["name", "labels", "layers"]) {
    if (!(field in doc)) throw new ModelError("SchemaError", `manifest missing '${field}'`);
  }
  const labels = doc.labels as string[];
  const weightBytes = new Uint8Array(weightsBuffer);
  if (typeof doc.weights_checksum === "string") {
    const digest = await sha256hex(weightBytes);
    if (digest !== doc.weights_checksum) {
      throw new ModelError("SchemaError",
        `weights checksum mismatch: blob ${digest}, manifest ${doc.weights_checksum}`);
    }
  }

  const layers: Layer[] = [];
  let prev = 1;
  let cursor = 0;
  for (const [i, raw] of (doc.layers as Record<string, unknown>[]).entries()) {
    const kind = raw.kind as LayerKind;
    if (!["conv3d", "batchnorm3d", "relu", "dropout3d"].includes(kind)) {
      throw new ModelError("SchemaError", `layer ${i}: unknown kind ${raw.kind}`);
    }
    const offsets = (raw.offsets ?? {}) as Record<string, number>;
    if (kind === "conv3d") {
      const inCh = raw.in as number;
      const outCh = raw.out as number;
      if (inCh !== prev) {
        throw new ModelError("ChannelMismatch",
          `layer ${i}: in=${inCh} but previous layer emits ${prev}`);
      }
      const layer: Layer = {
        kind, inChannels: inCh, outChannels: outCh,
        kernel: triple(raw.kernel, 3),
        dilation: triple(raw.dilation, 1),
        padding: triple(raw.padding, 0),
        epsilon: 1e-5,
        weightOffset: offsets.weight ?? cursor,
        biasOffset: -1, bnParamOffset: -1,
      };
      cursor = layer.weightOffset + weightCount(layer) * 4;
      layer.biasOffset = offsets.bias ?? cursor;
      cursor = layer.biasOffset + outCh * 4;
      layers.push(layer);
      prev = outCh;
    } else {
      const ch = (raw.out ?? raw.in ?? prev) as number;
      if (ch !== prev) {
        throw new ModelError("ChannelMismatch",
          `layer ${i}: channels=${ch} but previous layer emits ${prev}`);
      }
      const layer: Layer = {
        kind, inChannels: ch, outChannels: ch,
        kernel: [1, 1, 1], dilation: [1, 1, 1], padding: [0, 0, 0],
        epsilon: (raw.epsilon as number) ?? 1e-5,
        weightOffset: -1, biasOffset: -1, bnParamOffset: -1,
      };
      if (kind === "batchnorm3d") {
        layer.bnParamOffset = offsets.params ?? cursor;
        cursor = layer.bnParamOffset + 4 * ch * 4;
      }
      layers.push(layer);
    }
  }

  const convs = layers.filter(l => l.kind === "conv3d");
  if (!convs.length || convs[0].inChannels !== 1) {
    throw new ModelError("ChannelMismatch", "first conv must take 1 channel");
  }
  if (convs[convs.length - 1].outChannels !== labels.length) {
    throw new ModelError("ChannelMismatch",
      `last conv emits ${convs[convs.length - 1].outChannels} channels for ${labels.length} labels`);
  }
  let floats = 0;
  for (const l of layers) {
    if (l.kind === "conv3d") floats += weightCount(l) + l.outChannels;
    else if (l.kind === "batchnorm3d") floats += 4 * l.outChannels;
  }
  if (weightBytes.length !== floats * 4) {
    throw new ModelError("BlobSizeMismatch",
      `blob is ${weightBytes.length} bytes, layers need ${floats * 4}`);
  }
  const weights = new Float32Array(weightBytes.slice().buffer);
  return { name: doc.name as string, labels, layers, weights };
}

export function receptiveField(m: Model): number {
  let rf = 1;
  for (const l of m.layers) {
    if (l.kind === "conv3d") rf += l.dilation[0] * (l.kernel[0] - 1);
  }
  return rf;
}

export function exactHalo(m: Model): number {
  return (receptiveField(m) - 1) >> 1;
}

export function countParameters(m: Model): number {
  let total = 0;
  for (const l of m.layers) {
    if (l.kind === "conv3d") total += weightCount(l) + l.outChannels;
    else if (l.kind === "batchnorm3d") total += 2 * l.outChannels;
  }
  return total;
}
