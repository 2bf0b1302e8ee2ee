/** Plain SGD training for the small convolutional classifiers that get
 * exported. Loss is softmax cross-entropy on the raw logits.
 */

import {
  ConvLayer,
  DenseLayer,
  Network,
  argmax,
  convForward,
  denseForward,
  networkShapes,
  outputShape,
  poolForward,
} from "./network";
import { Rng } from "./rng";

interface LayerCache {
  input: Float64Array;
  output: Float64Array;
  argmax?: Int32Array;
}

interface Grads {
  w: Map<number, Float64Array>;
  b: Map<number, Float64Array>;
}

function forwardWithCache(net: Network, x: Float64Array): LayerCache[] {
  const caches: LayerCache[] = [];
  let cur = x;
  let shape = net.inputShape;
  for (const layer of net.layers) {
    const input = cur;
    let amax: Int32Array | undefined;
    if (layer.kind === "dense") {
      cur = denseForward(layer, cur);
    } else if (layer.kind === "conv2d") {
      cur = convForward(layer, cur, shape);
    } else if (layer.kind === "flatten") {
      cur = cur.slice();
    } else {
      const pooled = poolForward(layer, cur, shape);
      cur = pooled.out;
      if (layer.kind === "maxpool2d") {
        amax = pooled.argmax;
      }
    }
    caches.push({ input, output: cur, argmax: amax });
    shape = outputShape(layer, shape);
  }
  return caches;
}

function denseBackward(layer: DenseLayer, cache: LayerCache,
                       gout: Float64Array, gw: Float64Array,
                       gb: Float64Array): Float64Array {
  if (layer.activation === "relu") {
    for (let o = 0; o < layer.outDim; o++) {
      if (cache.output[o] <= 0) {
        gout[o] = 0;
      }
    }
  }
  const gin = new Float64Array(layer.inDim);
  for (let o = 0; o < layer.outDim; o++) {
    const g = gout[o];
    gb[o] += g;
    const row = o * layer.inDim;
    for (let i = 0; i < layer.inDim; i++) {
      gw[row + i] += g * cache.input[i];
      gin[i] += layer.w[row + i] * g;
    }
  }
  return gin;
}

function convBackward(layer: ConvLayer, cache: LayerCache, shape: number[],
                      gout: Float64Array, gw: Float64Array,
                      gb: Float64Array): Float64Array {
  const [, h, w] = shape;
  const [oc, oh, ow] = outputShape(layer, shape);
  const { inChannels: ic, kernelH: kh, kernelW: kw, stride, padding } = layer;
  const gin = new Float64Array(cache.input.length);
  for (let o = 0; o < oc; o++) {
    const wBase = o * ic * kh * kw;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        const flat = o * oh * ow + oy * ow + ox;
        let g = gout[flat];
        if (layer.activation === "relu" && cache.output[flat] <= 0) {
          g = 0;
        }
        if (g === 0) {
          continue;
        }
        gb[o] += g;
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
              gw[wcBase + ky * kw + kx] += g * cache.input[xBase + y * w + xcol];
              gin[xBase + y * w + xcol] += layer.w[wcBase + ky * kw + kx] * g;
            }
          }
        }
      }
    }
  }
  return gin;
}

function poolBackward(layer: { kind: string; window: number; stride: number },
                      cache: LayerCache, shape: number[],
                      gout: Float64Array): Float64Array {
  const [c, h, w] = shape;
  const gin = new Float64Array(cache.input.length);
  if (layer.kind === "maxpool2d") {
    const amax = cache.argmax as Int32Array;
    for (let i = 0; i < gout.length; i++) {
      gin[amax[i]] += gout[i];
    }
    return gin;
  }
  const scale = 1 / (layer.window * layer.window);
  const oh = Math.floor((h - layer.window) / layer.stride) + 1;
  const ow = Math.floor((w - layer.window) / layer.stride) + 1;
  for (let ch = 0; ch < c; ch++) {
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        const g = gout[ch * oh * ow + oy * ow + ox] * scale;
        const y0 = oy * layer.stride;
        const x0 = ox * layer.stride;
        for (let dy = 0; dy < layer.window; dy++) {
          for (let dx = 0; dx < layer.window; dx++) {
            gin[ch * h * w + (y0 + dy) * w + (x0 + dx)] += g;
          }
        }
      }
    }
  }
  return gin;
}

function zeroGrads(net: Network): Grads {
  const grads: Grads = { w: new Map(), b: new Map() };
  net.layers.forEach((layer, i) => {
    if (layer.kind === "dense" || layer.kind === "conv2d") {
      grads.w.set(i, new Float64Array(layer.w.length));
      grads.b.set(i, new Float64Array(layer.b.length));
    }
  });
  return grads;
}

/** Accumulates gradients for one example and returns its loss. */
function backprop(net: Network, x: Float64Array, label: number,
                  grads: Grads): number {
  const caches = forwardWithCache(net, x);
  const shapes = networkShapes(net);
  const logits = caches[caches.length - 1].output;

  let maxLogit = -Infinity;
  for (const v of logits) {
    maxLogit = Math.max(maxLogit, v);
  }
  let sum = 0;
  const probs = new Float64Array(logits.length);
  for (let i = 0; i < logits.length; i++) {
    probs[i] = Math.exp(logits[i] - maxLogit);
    sum += probs[i];
  }
  let gout: Float64Array = new Float64Array(logits.length);
  for (let i = 0; i < logits.length; i++) {
    probs[i] /= sum;
    gout[i] = probs[i] - (i === label ? 1 : 0);
  }
  const loss = -Math.log(Math.max(probs[label], 1e-300));

  for (let i = net.layers.length - 1; i >= 0; i--) {
    const layer = net.layers[i];
    const inShape = i === 0 ? net.inputShape : shapes[i - 1];
    if (layer.kind === "dense") {
      gout = denseBackward(layer, caches[i], gout,
                           grads.w.get(i) as Float64Array,
                           grads.b.get(i) as Float64Array);
    } else if (layer.kind === "conv2d") {
      gout = convBackward(layer, caches[i], inShape, gout,
                          grads.w.get(i) as Float64Array,
                          grads.b.get(i) as Float64Array);
    } else if (layer.kind === "flatten") {
      gout = gout.slice();
    } else {
      gout = poolBackward(layer, caches[i], inShape, gout);
    }
  }
  return loss;
}

export function initWeights(net: Network, rng: Rng): void {
  for (const layer of net.layers) {
    if (layer.kind === "dense") {
      const scale = Math.sqrt((layer.activation === "relu" ? 2 : 1) / layer.inDim);
      for (let i = 0; i < layer.w.length; i++) {
        layer.w[i] = rng.normal() * scale;
      }
      // a small positive bias keeps relu units from starting dead
      layer.b.fill(layer.activation === "relu" ? 0.01 : 0);
    } else if (layer.kind === "conv2d") {
      const fanIn = layer.inChannels * layer.kernelH * layer.kernelW;
      const scale = Math.sqrt(2 / fanIn);
      for (let i = 0; i < layer.w.length; i++) {
        layer.w[i] = rng.normal() * scale;
      }
      layer.b.fill(0.01);
    }
  }
}

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  learningRate: number;
  decay: number; // multiplied into the learning rate after each epoch
  log?: boolean;
}

export function trainNetwork(net: Network, images: Float64Array[],
                             labels: Uint8Array, rng: Rng,
                             options: TrainOptions): void {
  const order = new Int32Array(images.length);
  for (let i = 0; i < order.length; i++) {
    order[i] = i;
  }
  let lr = options.learningRate;
  for (let epoch = 0; epoch < options.epochs; epoch++) {
    rng.shuffle(order);
    let lossSum = 0;
    for (let start = 0; start < order.length; start += options.batchSize) {
      const end = Math.min(start + options.batchSize, order.length);
      const grads = zeroGrads(net);
      for (let k = start; k < end; k++) {
        lossSum += backprop(net, images[order[k]], labels[order[k]], grads);
      }
      const scale = lr / (end - start);
      net.layers.forEach((layer, i) => {
        if (layer.kind === "dense" || layer.kind === "conv2d") {
          const gw = grads.w.get(i) as Float64Array;
          const gb = grads.b.get(i) as Float64Array;
          for (let j = 0; j < layer.w.length; j++) {
            layer.w[j] -= scale * gw[j];
          }
          for (let j = 0; j < layer.b.length; j++) {
            layer.b[j] -= scale * gb[j];
          }
        }
      });
    }
    if (options.log) {
      console.log(`  epoch ${epoch + 1}/${options.epochs}: ` +
                  `mean loss ${(lossSum / order.length).toFixed(4)}, lr ${lr.toFixed(4)}`);
    }
    lr *= options.decay;
  }
}

export function accuracy(net: Network, images: Float64Array[],
                         labels: Uint8Array): number {
  let hits = 0;
  for (let i = 0; i < images.length; i++) {
    let cur = images[i];
    let shape = net.inputShape;
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
    }
    if (argmax(cur) === labels[i]) {
      hits += 1;
    }
  }
  return hits / images.length;
}
