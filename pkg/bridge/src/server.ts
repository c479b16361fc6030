/**
 * Serial frame responder: one request, one response, in arrival order.
 */

import type { Readable, Writable } from 'node:stream'
import { FrameDecoder, encodeFrame, payloadToTensor, tensorToPayload, type FrameHeader } from './frames.js'
import type { ModelBackend } from './model.js'
import { PromptRegistry } from './registry.js'

export class BridgeServer {
  private readonly decoder = new FrameDecoder()

  constructor (
    private readonly model: ModelBackend,
    private readonly registry: PromptRegistry
  ) {}

  attach (input: Readable, output: Writable, onClose?: () => void): void {
    input.on('data', (chunk: Buffer) => {
      let frames
      try {
        frames = this.decoder.push(chunk)
      } catch (err) {
        output.write(encodeFrame({ op: 'error', message: `malformed frame: ${String(err)}` }))
        input.destroy()
        onClose?.()
        return
      }
      for (const { header, payload } of frames) {
        output.write(this.respond(header, payload))
      }
    })
    input.on('end', () => onClose?.())
    input.on('error', () => onClose?.())
  }

  respond (header: FrameHeader, payload: Buffer): Buffer {
    try {
      switch (header.op) {
        case 'hello':
          return encodeFrame({
            op: 'hello',
            scale_factor: this.model.scaleFactor,
            latent_channels: this.model.latentChannels,
            schedule: this.model.schedule(),
            capabilities: ['serial']
          })
        case 'velocity': {
          const shape = this.requireShape(header)
          const z = payloadToTensor(payload, shape.reduce((a, b) => a * b, 1))
          const promptText = header.prompt_id ?? ''
          const promptId = promptText === '' ? '' : this.registry.add(promptText)
          const u = this.model.velocity(z, shape, header.t ?? 0, promptId)
          return encodeFrame({ op: 'velocity', shape, dtype: 'f32le' }, tensorToPayload(u))
        }
        case 'encode': {
          const shape = this.requireShape(header)
          const x = payloadToTensor(payload, shape.reduce((a, b) => a * b, 1))
          const out = this.model.encode(x, shape)
          return encodeFrame({ op: 'encode', shape: out.shape, dtype: 'f32le' }, tensorToPayload(out.data))
        }
        case 'decode': {
          const shape = this.requireShape(header)
          const z = payloadToTensor(payload, shape.reduce((a, b) => a * b, 1))
          const out = this.model.decode(z, shape)
          return encodeFrame({ op: 'decode', shape: out.shape, dtype: 'f32le' }, tensorToPayload(out.data))
        }
        default:
          return encodeFrame({ op: 'error', message: `unknown op ${JSON.stringify(header.op)}` })
      }
    } catch (err) {
      return encodeFrame({ op: 'error', message: String(err instanceof Error ? err.message : err) })
    }
  }

  private requireShape (header: FrameHeader): number[] {
    if (!header.shape || header.shape.length !== 3) {
      throw new Error(`${header.op} needs a [c, h, w] shape`)
    }
    return header.shape
  }
}
