/** Writer and reader for the version-1 model exchange format.
 *
 * The format is a JSON header (format_version, name, input_shape,
 * layers, coverage_layers, tensors, payload) plus a flat little-endian
 * float32 payload, either embedded as base64 or in a sibling binary
 * file. Dense weights are (out, in) row-major; conv weights are
 * (outC, inC, kh, kw); tensor names are layer{i}.w and layer{i}.b.
 */

import * as fs from "fs";
import * as path from "path";

import {
  Activation,
  ConvLayer,
  DenseLayer,
  Layer,
  Network,
  coverageLayers,
} from "./network";

const FORMAT_VERSION = 1;

interface TensorEntry {
  offset: number;
  length: number;
}

function floatsToF32Bytes(values: Float64Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf;
}

function f32BytesToFloats(buf: Buffer, offset: number, count: number): Float64Array {
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = buf.readFloatLE(offset + i * 4);
  }
  return out;
}

function layerEntry(layer: Layer, index: number): Record<string, unknown> {
  if (layer.kind === "dense") {
    return {
      kind: "dense",
      in_dim: layer.inDim,
      out_dim: layer.outDim,
      activation: layer.activation,
      weights: `layer${index}.w`,
      bias: `layer${index}.b`,
    };
  }
  if (layer.kind === "conv2d") {
    return {
      kind: "conv2d",
      in_channels: layer.inChannels,
      out_channels: layer.outChannels,
      kernel_h: layer.kernelH,
      kernel_w: layer.kernelW,
      stride: layer.stride,
      padding: layer.padding,
      activation: layer.activation,
      weights: `layer${index}.w`,
      bias: `layer${index}.b`,
    };
  }
  if (layer.kind === "flatten") {
    return { kind: "flatten" };
  }
  return { kind: layer.kind, window: layer.window, stride: layer.stride };
}

/** Round every weight to float32 in place so that reference outputs can
 * be computed from exactly the values the file will carry. */
export function quantizeWeights(net: Network): void {
  for (const layer of net.layers) {
    if (layer.kind === "dense" || layer.kind === "conv2d") {
      for (let i = 0; i < layer.w.length; i++) {
        layer.w[i] = Math.fround(layer.w[i]);
      }
      for (let i = 0; i < layer.b.length; i++) {
        layer.b[i] = Math.fround(layer.b[i]);
      }
    }
  }
}

export function writeModel(net: Network, filePath: string,
                           payloadFile?: string): void {
  const chunks: Buffer[] = [];
  const tensors: Record<string, TensorEntry> = {};
  const layersJson: Record<string, unknown>[] = [];
  let offset = 0;
  net.layers.forEach((layer, i) => {
    layersJson.push(layerEntry(layer, i));
    if (layer.kind !== "dense" && layer.kind !== "conv2d") {
      return;
    }
    for (const [suffix, values] of [["w", layer.w], ["b", layer.b]] as const) {
      const raw = floatsToF32Bytes(values);
      tensors[`layer${i}.${suffix}`] = { offset, length: raw.length };
      chunks.push(raw);
      offset += raw.length;
    }
  });
  const payload = Buffer.concat(chunks);

  let payloadJson: Record<string, unknown>;
  if (payloadFile !== undefined) {
    fs.writeFileSync(path.join(path.dirname(filePath), payloadFile), payload);
    payloadJson = { encoding: "file", path: payloadFile, length: payload.length };
  } else {
    payloadJson = { encoding: "base64", data: payload.toString("base64") };
  }

  const header = {
    format_version: FORMAT_VERSION,
    name: net.name,
    input_shape: net.inputShape,
    layers: layersJson,
    coverage_layers: coverageLayers(net),
    tensors,
    payload: payloadJson,
  };
  fs.writeFileSync(filePath, JSON.stringify(header, null, 2) + "\n");
}

function parseLayer(entry: Record<string, any>): Layer {
  const kind = entry.kind as string;
  if (kind === "dense") {
    return {
      kind: "dense",
      inDim: entry.in_dim,
      outDim: entry.out_dim,
      activation: (entry.activation ?? "identity") as Activation,
      w: new Float64Array(entry.out_dim * entry.in_dim),
      b: new Float64Array(entry.out_dim),
    };
  }
  if (kind === "conv2d") {
    const size = entry.out_channels * entry.in_channels * entry.kernel_h * entry.kernel_w;
    return {
      kind: "conv2d",
      inChannels: entry.in_channels,
      outChannels: entry.out_channels,
      kernelH: entry.kernel_h,
      kernelW: entry.kernel_w,
      stride: entry.stride ?? 1,
      padding: entry.padding ?? 0,
      activation: (entry.activation ?? "identity") as Activation,
      w: new Float64Array(size),
      b: new Float64Array(entry.out_channels),
    };
  }
  if (kind === "flatten") {
    return { kind: "flatten" };
  }
  if (kind === "maxpool2d" || kind === "avgpool2d") {
    return { kind, window: entry.window, stride: entry.stride ?? entry.window };
  }
  throw new Error(`unsupported layer kind '${kind}'`);
}

export function readModel(filePath: string): Network {
  const header = JSON.parse(fs.readFileSync(filePath, "utf-8"));
  if (header.format_version !== FORMAT_VERSION) {
    throw new Error(`unsupported format_version ${header.format_version}`);
  }
  let payload: Buffer;
  if (header.payload.encoding === "base64") {
    payload = Buffer.from(header.payload.data, "base64");
  } else if (header.payload.encoding === "file") {
    payload = fs.readFileSync(path.join(path.dirname(filePath), header.payload.path));
    if (header.payload.length !== undefined &&
        header.payload.length !== payload.length) {
      throw new Error(`payload file is ${payload.length} bytes, ` +
                      `header declares ${header.payload.length}`);
    }
  } else {
    throw new Error(`unknown payload encoding '${header.payload.encoding}'`);
  }

  const layers: Layer[] = [];
  header.layers.forEach((entry: Record<string, any>, i: number) => {
    const layer = parseLayer(entry);
    if (layer.kind === "dense" || layer.kind === "conv2d") {
      const w = header.tensors[entry.weights] as TensorEntry;
      const b = header.tensors[entry.bias] as TensorEntry;
      (layer as DenseLayer | ConvLayer).w =
        f32BytesToFloats(payload, w.offset, w.length / 4);
      (layer as DenseLayer | ConvLayer).b =
        f32BytesToFloats(payload, b.offset, b.length / 4);
    }
    layers.push(layer);
  });
  return { name: header.name, inputShape: header.input_shape, layers };
}
