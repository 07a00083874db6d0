// Procedural stand-ins for the diffusion model. Everything here is a pure
// function of its inputs (seed included), so responses are byte-stable.

import { Rng, fnv1a64 } from "./rng.js";

export interface SdsInput {
  prompt: string;
  guidanceScale: number;
  height: number;
  width: number;
  seed: bigint;
  tMin: number;
  tMax: number;
  image: Float32Array; // row-major HWC, 3 channels
}

// 2x2 average pool per channel; ragged edge cells average fewer pixels.
function encodeLatent(
  image: Float32Array,
  height: number,
  width: number,
): { latent: Float32Array; lh: number; lw: number } {
  const lh = Math.ceil(height / 2);
  const lw = Math.ceil(width / 2);
  const latent = new Float32Array(lh * lw * 3);
  for (let i = 0; i < lh; i++) {
    const y0 = i * 2;
    const y1 = Math.min(y0 + 2, height);
    for (let j = 0; j < lw; j++) {
      const x0 = j * 2;
      const x1 = Math.min(x0 + 2, width);
      const count = (y1 - y0) * (x1 - x0);
      for (let c = 0; c < 3; c++) {
        let sum = 0;
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            sum += image[(y * width + x) * 3 + c];
          }
        }
        latent[(i * lw + j) * 3 + c] = sum / count;
      }
    }
  }
  return { latent, lh, lw };
}

// 3x3 box mean, borders clamped.
function boxBlur(plane: Float32Array, h: number, w: number): Float32Array {
  const out = new Float32Array(h * w * 3);
  for (let i = 0; i < h; i++) {
    const i0 = Math.max(i - 1, 0);
    const i1 = Math.min(i + 1, h - 1);
    for (let j = 0; j < w; j++) {
      const j0 = Math.max(j - 1, 0);
      const j1 = Math.min(j + 1, w - 1);
      const count = (i1 - i0 + 1) * (j1 - j0 + 1);
      for (let c = 0; c < 3; c++) {
        let sum = 0;
        for (let y = i0; y <= i1; y++) {
          for (let x = j0; x <= j1; x++) {
            sum += plane[(y * w + x) * 3 + c];
          }
        }
        out[(i * w + j) * 3 + c] = sum / count;
      }
    }
  }
  return out;
}

// Score-distillation-shaped gradient: noise the pooled latent at a
// seed-chosen timestep, predict noise procedurally (high-pass of the noisy
// latent plus a prompt-keyed bias under classifier-free guidance), weight the
// residual, and push it back through the transpose of the pooling.
export function sdsGrad(input: SdsInput): Float32Array {
  const { height, width, image } = input;
  const { latent, lh, lw } = encodeLatent(image, height, width);
  const n = lh * lw * 3;

  const rng = new Rng(input.seed);
  const t = input.tMin + (input.tMax - input.tMin) * rng.uniform();
  const alphaBar = Math.cos((Math.PI * t) / 2) ** 2;
  const signal = Math.sqrt(alphaBar);
  const sigma = Math.sqrt(1 - alphaBar);

  const eps = new Float32Array(n);
  for (let i = 0; i < n; i++) eps[i] = rng.normal();

  const noisy = new Float32Array(n);
  for (let i = 0; i < n; i++) noisy[i] = signal * latent[i] + sigma * eps[i];

  const smooth = boxBlur(noisy, lh, lw);

  const promptRng = new Rng(fnv1a64(input.prompt));
  const tint = [0, 0, 0].map(() => promptRng.uniform() * 2 - 1);
  const bias = 0.001 * input.guidanceScale;

  const weight = 1 - alphaBar;
  const residual = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const epsHat = noisy[i] - smooth[i] + bias * tint[i % 3];
    residual[i] = weight * (epsHat - eps[i]);
  }

  // Transpose of the average pool: every pixel of a cell receives the cell
  // residual divided by the cell's pixel count.
  const grad = new Float32Array(height * width * 3);
  for (let i = 0; i < lh; i++) {
    const y0 = i * 2;
    const y1 = Math.min(y0 + 2, height);
    for (let j = 0; j < lw; j++) {
      const x0 = j * 2;
      const x1 = Math.min(x0 + 2, width);
      const count = (y1 - y0) * (x1 - x0);
      for (let c = 0; c < 3; c++) {
        const value = residual[(i * lw + j) * 3 + c] / count;
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            grad[(y * width + x) * 3 + c] = value;
          }
        }
      }
    }
  }
  return grad;
}

export interface InpaintInput {
  height: number;
  width: number;
  image: Uint8Array; // h*w*3
  mask: Uint8Array; // h*w, byte >= 128 means repaint
  prompt: string;
  seed: bigint;
  steps: number;
  tokenEmbedding?: Float32Array;
}

// Repaint masked pixels with a prompt-keyed color field, then run `steps`
// smoothing passes that read the whole image but write only inside the mask.
// Bytes outside the mask are never touched.
export function inpaint(input: InpaintInput): Uint8Array {
  const { height, width, image, mask } = input;
  const out = Uint8Array.from(image);

  const masked: number[] = [];
  for (let p = 0; p < mask.length; p++) {
    if (mask[p] >= 128) masked.push(p);
  }
  if (masked.length === 0) {
    throw new Error("empty mask");
  }

  let key = fnv1a64(input.prompt);
  if (input.tokenEmbedding) {
    const e = input.tokenEmbedding;
    key ^= fnv1a64(new Uint8Array(e.buffer, e.byteOffset, e.byteLength));
  }
  const colorRng = new Rng(key);
  const base = [0, 0, 0].map(() => 48 + colorRng.uniform() * 160);

  const work = new Float32Array(out.length);
  for (let i = 0; i < out.length; i++) work[i] = out[i];

  const pixelRng = new Rng(input.seed ^ key);
  for (const p of masked) {
    for (let c = 0; c < 3; c++) {
      work[p * 3 + c] = base[c] + pixelRng.normal() * 12;
    }
  }

  // Each pass pulls masked pixels toward their 3x3 neighborhood, so the
  // patch blends into its surroundings a little like a real inpainter.
  let current = work;
  for (let pass = 0; pass < input.steps; pass++) {
    const next = current.slice();
    for (const p of masked) {
      const i = Math.floor(p / width);
      const j = p % width;
      const i0 = Math.max(i - 1, 0);
      const i1 = Math.min(i + 1, height - 1);
      const j0 = Math.max(j - 1, 0);
      const j1 = Math.min(j + 1, width - 1);
      const count = (i1 - i0 + 1) * (j1 - j0 + 1);
      for (let c = 0; c < 3; c++) {
        let sum = 0;
        for (let y = i0; y <= i1; y++) {
          for (let x = j0; x <= j1; x++) {
            sum += current[(y * width + x) * 3 + c];
          }
        }
        next[p * 3 + c] = sum / count;
      }
    }
    current = next;
  }

  for (const p of masked) {
    for (let c = 0; c < 3; c++) {
      const value = Math.round(current[p * 3 + c]);
      out[p * 3 + c] = Math.min(255, Math.max(0, value));
    }
  }
  return out;
}

// Deterministic 64-float embedding from the subject images and model id.
export function invertEmbedding(
  images: Uint8Array[],
  modelId: string,
): Float32Array {
  let state = fnv1a64(modelId);
  for (const image of images) {
    state ^= fnv1a64(image);
    state = (state * 0x100000001b3n) & ((1n << 64n) - 1n);
  }
  const rng = new Rng(state);
  const embedding = new Float32Array(64);
  for (let i = 0; i < 64; i++) embedding[i] = rng.normal() * 0.02;
  return embedding;
}
