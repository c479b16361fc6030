/**
 * Length-prefixed frame codec.
 *
 * A frame is a little-endian u32 header length, a UTF-8 JSON header, then a
 * raw payload whose byte count is implied by the header: product(shape) * 4
 * for dtype "f32le" (8 for "f64le"), zero when no shape is present.
 */

export interface FrameHeader {
  op: string
  t?: number
  prompt_id?: string
  shape?: number[]
  dtype?: string
  message?: string
  scale_factor?: number
  latent_channels?: number
  schedule?: number[]
  capabilities?: string[]
}

const DTYPE_BYTES: Record<string, number> = { f32le: 4, f64le: 8 }

export function payloadSize (header: FrameHeader): number {
  if (!header.shape) return 0
  const dtype = header.dtype ?? 'f32le'
  const unit = DTYPE_BYTES[dtype]
  if (unit === undefined) throw new Error(`unknown dtype ${dtype}`)
  let n = 1
  for (const d of header.shape) {
    if (!Number.isInteger(d) || d <= 0) throw new Error(`bad shape entry ${d}`)
    n *= d
  }
  return n * unit
}

export function encodeFrame (header: FrameHeader, payload: Buffer = Buffer.alloc(0)): Buffer {
  const expected = payloadSize(header)
  if (expected !== payload.length) {
    throw new Error(`payload is ${payload.length} bytes, header implies ${expected}`)
  }
  const json = Buffer.from(JSON.stringify(header), 'utf-8')
  const prefix = Buffer.alloc(4)
  prefix.writeUInt32LE(json.length, 0)
  return Buffer.concat([prefix, json, payload])
}

export function tensorToPayload (data: Float64Array | Float32Array): Buffer {
  const out = Buffer.alloc(data.length * 4)
  for (let i = 0; i < data.length; i++) out.writeFloatLE(data[i], i * 4)
  return out
}

export function payloadToTensor (payload: Buffer, count: number): Float64Array {
  if (payload.length !== count * 4) {
    throw new Error(`payload size ${payload.length} does not match ${count} f32 samples`)
  }
  const out = new Float64Array(count)
  for (let i = 0; i < count; i++) out[i] = payload.readFloatLE(i * 4)
  return out
}

/**
 * Incremental frame parser: feed arbitrary chunks, get complete frames out.
 */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0)

  push (chunk: Buffer): Array<{ header: FrameHeader, payload: Buffer }> {
    this.buffer = Buffer.concat([this.buffer, chunk])
    const frames: Array<{ header: FrameHeader, payload: Buffer }> = []
    for (;;) {
      if (this.buffer.length < 4) break
      const headerLen = this.buffer.readUInt32LE(0)
      if (headerLen > 1 << 24) throw new Error(`unreasonable header length ${headerLen}`)
      if (this.buffer.length < 4 + headerLen) break
      const header = JSON.parse(this.buffer.subarray(4, 4 + headerLen).toString('utf-8')) as FrameHeader
      const bodyLen = payloadSize(header)
      if (this.buffer.length < 4 + headerLen + bodyLen) break
      const payload = this.buffer.subarray(4 + headerLen, 4 + headerLen + bodyLen)
      this.buffer = this.buffer.subarray(4 + headerLen + bodyLen)
      frames.push({ header, payload: Buffer.from(payload) })
    }
    return frames
  }
}
