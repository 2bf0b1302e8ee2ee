/** Minimal float64 inference for the layer kinds in exchange format v1.
 *
 * Layout conventions match the consumer engine exactly: channel-first
 * (C, H, W) feature maps flattened row-major, dense weights (out, in)
 * row-major, convolution weights (outC, inC, kh, kw). Flatten is a
 * no-op on the buffer because everything is already stored flat.
 */

export type Activation = "relu" | "identity";

export interface DenseLayer {
  kind: "dense";
  inDim: number;
  outDim: number;
  activation: Activation;
  w: Float64Array; // (outDim, inDim) row-major
  b: Float64Array;
}

export interface ConvLayer {
  kind: "conv2d";
  inChannels: number;
  outChannels: number;
  kernelH: number;
  kernelW: number;
  stride: number;
  padding: number;
  activation: Activation;
  w: Float64Array; // (outC, inC, kh, kw) row-major
  b: Float64Array;
}

export interface PoolLayer {
  kind: "maxpool2d" | "avgpool2d";
  window: number;
  stride: number;
}

export interface FlattenLayer {
  kind: "flatten";
}

export type Layer = DenseLayer | ConvLayer | PoolLayer | FlattenLayer;

export interface Network {
  name: string;
  inputShape: number[]; // (C, H, W) or (dim)
  layers: Layer[];
}

export function outputShape(layer: Layer, shape: number[]): number[] {
  if (layer.kind === "dense") {
    if (shape.length !== 1 || shape[0] !== layer.inDim) {
      throw new Error(`dense expects (${layer.inDim}), got (${shape})`);
    }
    return [layer.outDim];
  }
  if (layer.kind === "flatten") {
    return [shape.reduce((a, b) => a * b, 1)];
  }
  if (shape.length !== 3) {
    throw new Error(`${layer.kind} expects (C, H, W), got (${shape})`);
  }
  const [c, h, w] = shape;
  if (layer.kind === "conv2d") {
    if (c !== layer.inChannels) {
      throw new Error(`conv2d expects ${layer.inChannels} channels, got ${c}`);
    }
    const oh = Math.floor((h + 2 * layer.padding - layer.kernelH) / layer.stride) + 1;
    const ow = Math.floor((w + 2 * layer.padding - layer.kernelW) / layer.stride) + 1;
    return [layer.outChannels, oh, ow];
  }
  const oh = Math.floor((h - layer.window) / layer.stride) + 1;
  const ow = Math.floor((w - layer.window) / layer.stride) + 1;
  return [c, oh, ow];
}

export function networkShapes(net: Network): number[][] {
  const shapes: number[][] = [];
  let cur = net.inputShape;
  for (const layer of net.layers) {
    cur = outputShape(layer, cur);
    shapes.push(cur);
  }
  return shapes;
}

function applyActivation(values: Float64Array, activation: Activation): void {
  if (activation === "relu") {
    for (let i = 0; i < values.length; i++) {
      if (values[i] < 0) {
        values[i] = 0;
      }
    }
  }
}

export function denseForward(layer: DenseLayer, x: Float64Array): Float64Array {
  const out = new Float64Array(layer.outDim);
  for (let o = 0; o < layer.outDim; o++) {
    let acc = layer.b[o];
    const row = o * layer.inDim;
    for (let i = 0; i < layer.inDim; i++) {
      acc += layer.w[row + i] * x[i];
    }
    out[o] = acc;
  }
  applyActivation(out, layer.activation);
  return out;
}

export function convForward(layer: ConvLayer, x: Float64Array,
                            shape: number[]): Float64Array {
  const [, h, w] = shape;
  const [oc, oh, ow] = outputShape(layer, shape);
  const { inChannels: ic, kernelH: kh, kernelW: kw, stride, padding } = layer;
  const out = new Float64Array(oc * oh * ow);
  for (let o = 0; o < oc; o++) {
    const wBase = o * ic * kh * kw;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let acc = layer.b[o];
        const y0 = oy * stride - padding;
        const x0 = ox * stride - padding;
        for (let c = 0; c < ic; c++) {
          const xBase = c * h * w;
          const wcBase = wBase + c * kh * kw;
          for (let ky = 0; ky < kh; ky++) {
            const y = y0 + ky;
            if (y < 0 || y >= h) {
              continue;
            }
            for (let kx = 0; kx < kw; kx++) {
              const xcol = x0 + kx;
              if (xcol < 0 || xcol >= w) {
                continue;
              }
              acc += layer.w[wcBase + ky * kw + kx] * x[xBase + y * w + xcol];
            }
          }
        }
        out[o * oh * ow + oy * ow + ox] = acc;
      }
    }
  }
  applyActivation(out, layer.activation);
  return out;
}

export function poolForward(layer: PoolLayer, x: Float64Array,
                            shape: number[]): { out: Float64Array; argmax: Int32Array } {
  const [c, h, w] = shape;
  const [, oh, ow] = outputShape(layer, shape);
  const out = new Float64Array(c * oh * ow);
  const argmax = new Int32Array(layer.kind === "maxpool2d" ? c * oh * ow : 0);
  const { window, stride } = layer;
  for (let ch = 0; ch < c; ch++) {
    const base = ch * h * w;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        const y0 = oy * stride;
        const x0 = ox * stride;
        if (layer.kind === "avgpool2d") {
          let acc = 0;
          for (let dy = 0; dy < window; dy++) {
            for (let dx = 0; dx < window; dx++) {
              acc += x[base + (y0 + dy) * w + (x0 + dx)];
            }
          }
          out[ch * oh * ow + oy * ow + ox] = acc / (window * window);
        } else {
          // ties resolve to the lowest flat index, like the consumer engine
          let best = -Infinity;
          let bestAt = -1;
          for (let dy = 0; dy < window; dy++) {
            for (let dx = 0; dx < window; dx++) {
              const at = base + (y0 + dy) * w + (x0 + dx);
              if (x[at] > best) {
                best = x[at];
                bestAt = at;
              }
            }
          }
          const flat = ch * oh * ow + oy * ow + ox;
          out[flat] = best;
          argmax[flat] = bestAt;
        }
      }
    }
  }
  return { out, argmax };
}

export interface ForwardResult {
  /** Post-activation output of every layer, input order. */
  outputs: Float64Array[];
  logits: Float64Array;
  label: number;
}

export function forward(net: Network, x: Float64Array): ForwardResult {
  let cur = x;
  let shape = net.inputShape;
  const outputs: Float64Array[] = [];
  for (const layer of net.layers) {
    if (layer.kind === "dense") {
      cur = denseForward(layer, cur);
    } else if (layer.kind === "conv2d") {
      cur = convForward(layer, cur, shape);
    } else if (layer.kind === "flatten") {
      cur = cur.slice();
    } else {
      cur = poolForward(layer, cur, shape).out;
    }
    shape = outputShape(layer, shape);
    outputs.push(cur);
  }
  return { outputs, logits: cur, label: argmax(cur) };
}

/** First maximum wins, matching the consumer engine's tie rule. */
export function argmax(values: Float64Array): number {
  let best = 0;
  for (let i = 1; i < values.length; i++) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return best;
}

/** Weighted layers contribute coverage neurons: per-channel spatial
 * means for conv outputs, raw values for dense outputs. */
export function coverageVector(output: Float64Array, shape: number[]): Float64Array {
  if (shape.length === 1) {
    return output.slice();
  }
  const [c, h, w] = shape;
  const out = new Float64Array(c);
  for (let ch = 0; ch < c; ch++) {
    let acc = 0;
    const base = ch * h * w;
    for (let i = 0; i < h * w; i++) {
      acc += output[base + i];
    }
    out[ch] = acc / (h * w);
  }
  return out;
}

export function coverageLayers(net: Network): number[] {
  const out: number[] = [];
  net.layers.forEach((layer, i) => {
    if (layer.kind === "dense" || layer.kind === "conv2d") {
      out.push(i);
    }
  });
  return out;
}
