/**
 * Model backends behind the bridge.
 *
 * The bridge owns every model-specific constant: latent scale factor,
 * channel count, and the native timestep schedule all travel through the
 * hello handshake, never baked into the client.
 *
 * ProceduralModel is the weights-free backend: deterministic targets per
 * prompt id, fixed orthonormal channel projections around 8x8 patch means.
 * It exercises the full pipeline (including nonzero VAE residuals) with no
 * downloads. Real pretrained backends plug in through the same interface;
 * see `loadModel`.
 */

import { createHash } from 'node:crypto'

export interface ModelBackend {
  readonly scaleFactor: number
  readonly latentChannels: number
  readonly imageChannels: number
  schedule: (steps?: number) => number[]
  velocity: (z: Float64Array, shape: number[], t: number, promptId: string) => Float64Array
  encode: (x: Float64Array, shape: number[]) => { data: Float64Array, shape: number[] }
  decode: (z: Float64Array, shape: number[]) => { data: Float64Array, shape: number[] }
}

/** Deterministic 32-bit PRNG (mulberry32), seeded from a hash. */
function mulberry32 (seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function seedFrom (text: string): number {
  return createHash('sha256').update(text, 'utf-8').digest().readUInt32LE(0)
}

function gaussianPair (rand: () => number): [number, number] {
  let u = 0
  while (u === 0) u = rand()
  const v = rand()
  const r = Math.sqrt(-2.0 * Math.log(u))
  return [r * Math.cos(2 * Math.PI * v), r * Math.sin(2 * Math.PI * v)]
}

function gaussianField (seed: number, count: number): Float64Array {
  const rand = mulberry32(seed)
  const out = new Float64Array(count)
  for (let i = 0; i < count; i += 2) {
    const [a, b] = gaussianPair(rand)
    out[i] = a
    if (i + 1 < count) out[i + 1] = b
  }
  return out
}

const T_CLIP = 0.999

export class ProceduralModel implements ModelBackend {
  readonly scaleFactor: number
  readonly latentChannels: number
  readonly imageChannels = 3
  private readonly lift: Float64Array // latentChannels x imageChannels, orthonormal columns
  private readonly targets = new Map<string, Float64Array>()

  constructor (scaleFactor = 8, latentChannels = 16) {
    this.scaleFactor = scaleFactor
    this.latentChannels = latentChannels
    this.lift = this.buildProjection()
  }

  private buildProjection (): Float64Array {
    const rows = this.latentChannels
    const cols = this.imageChannels
    const m = gaussianField(0x5eed, rows * cols)
    // Gram-Schmidt the columns so decode (transpose) inverts encode exactly
    for (let c = 0; c < cols; c++) {
      for (let prev = 0; prev < c; prev++) {
        let dot = 0
        for (let r = 0; r < rows; r++) dot += m[r * cols + c] * m[r * cols + prev]
        for (let r = 0; r < rows; r++) m[r * cols + c] -= dot * m[r * cols + prev]
      }
      let norm = 0
      for (let r = 0; r < rows; r++) norm += m[r * cols + c] ** 2
      norm = Math.sqrt(norm)
      for (let r = 0; r < rows; r++) m[r * cols + c] /= norm
    }
    return m
  }

  schedule (steps = 30): number[] {
    const out: number[] = []
    for (let k = 0; k <= steps; k++) out.push(Number(Math.pow(k / steps, 1.2).toFixed(10)))
    return out
  }

  private target (promptId: string, shape: number[]): Float64Array {
    const key = `${promptId}|${shape.join('x')}`
    const cached = this.targets.get(key)
    if (cached !== undefined) return cached
    const [c, h, w] = shape
    const ch = Math.ceil(h / 4)
    const cw = Math.ceil(w / 4)
    const coarse = gaussianField(seedFrom(key), c * ch * cw)
    const field = new Float64Array(c * h * w)
    for (let cc = 0; cc < c; cc++) {
      for (let y = 0; y < h; y++) {
        for (let x = 0; x < w; x++) {
          field[(cc * h + y) * w + x] = coarse[(cc * ch + (y >> 2)) * cw + (x >> 2)]
        }
      }
    }
    this.targets.set(key, field)
    return field
  }

  velocity (z: Float64Array, shape: number[], t: number, promptId: string): Float64Array {
    const target = this.target(promptId, shape)
    const inv = 1.0 / (1.0 - Math.min(t, T_CLIP))
    const out = new Float64Array(z.length)
    for (let i = 0; i < z.length; i++) out[i] = (target[i] - z[i]) * inv
    return out
  }

  encode (x: Float64Array, shape: number[]): { data: Float64Array, shape: number[] } {
    const [c, h, w] = shape
    if (c !== this.imageChannels) throw new Error(`expected ${this.imageChannels} image channels, got ${c}`)
    const k = this.scaleFactor
    if (h % k !== 0 || w % k !== 0) throw new Error(`image size ${h}x${w} not divisible by ${k}`)
    const lh = h / k
    const lw = w / k
    const pooled = new Float64Array(c * lh * lw)
    const inv = 1.0 / (k * k)
    for (let cc = 0; cc < c; cc++) {
      for (let y = 0; y < lh; y++) {
        for (let xx = 0; xx < lw; xx++) {
          let sum = 0
          for (let dy = 0; dy < k; dy++) {
            for (let dx = 0; dx < k; dx++) {
              sum += x[(cc * h + y * k + dy) * w + xx * k + dx]
            }
          }
          pooled[(cc * lh + y) * lw + xx] = sum * inv
        }
      }
    }
    const out = new Float64Array(this.latentChannels * lh * lw)
    for (let l = 0; l < this.latentChannels; l++) {
      for (let p = 0; p < lh * lw; p++) {
        let acc = 0
        for (let cc = 0; cc < c; cc++) acc += this.lift[l * c + cc] * pooled[cc * lh * lw + p]
        out[l * lh * lw + p] = acc
      }
    }
    return { data: out, shape: [this.latentChannels, lh, lw] }
  }

  decode (z: Float64Array, shape: number[]): { data: Float64Array, shape: number[] } {
    const [lc, lh, lw] = shape
    if (lc !== this.latentChannels) throw new Error(`expected ${this.latentChannels} latent channels, got ${lc}`)
    const c = this.imageChannels
    const k = this.scaleFactor
    const back = new Float64Array(c * lh * lw)
    for (let cc = 0; cc < c; cc++) {
      for (let p = 0; p < lh * lw; p++) {
        let acc = 0
        for (let l = 0; l < this.latentChannels; l++) acc += this.lift[l * c + cc] * z[l * lh * lw + p]
        back[cc * lh * lw + p] = acc
      }
    }
    const h = lh * k
    const w = lw * k
    const out = new Float64Array(c * h * w)
    for (let cc = 0; cc < c; cc++) {
      for (let y = 0; y < h; y++) {
        for (let xx = 0; xx < w; xx++) {
          out[(cc * h + y) * w + xx] = back[(cc * lh + (y / k | 0)) * lw + (xx / k | 0)]
        }
      }
    }
    return { data: out, shape: [c, h, w] }
  }
}

/**
 * Resolve a --model spec. "procedural" needs nothing; anything else is a
 * pretrained checkpoint identifier and requires an inference runtime plus
 * local weights, which this build does not vendor.
 */
export function loadModel (spec: string): ModelBackend {
  if (spec === 'procedural' || spec === '') return new ProceduralModel()
  throw new Error(
    `model ${spec}: loading pretrained weights requires an inference runtime ` +
    'and a local checkpoint; install one and extend loadModel, or use --model procedural'
  )
}
