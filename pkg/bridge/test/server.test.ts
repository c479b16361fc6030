import assert from 'node:assert/strict'
import { mkdtempSync, rmSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { test } from 'node:test'
import { FrameDecoder, encodeFrame, tensorToPayload, type FrameHeader } from '../src/frames.js'
import { ProceduralModel } from '../src/model.js'
import { PromptRegistry } from '../src/registry.js'
import { BridgeServer } from '../src/server.js'

function makeServer (): BridgeServer {
  return new BridgeServer(new ProceduralModel(), new PromptRegistry())
}

function respond (server: BridgeServer, header: FrameHeader, payload?: Buffer): { header: FrameHeader, payload: Buffer } {
  const decoder = new FrameDecoder()
  const frames = decoder.push(server.respond(header, payload ?? Buffer.alloc(0)))
  assert.equal(frames.length, 1)
  return frames[0]
}

test('hello advertises the model constants and serial capability', () => {
  const reply = respond(makeServer(), { op: 'hello' })
  assert.equal(reply.header.op, 'hello')
  assert.equal(reply.header.scale_factor, 8)
  assert.equal(reply.header.latent_channels, 16)
  assert.ok(Array.isArray(reply.header.schedule))
  assert.equal(reply.header.schedule![0], 0)
  assert.equal(reply.header.schedule![reply.header.schedule!.length - 1], 1)
  assert.ok(reply.header.capabilities!.includes('serial'))
})

test('declared shapes always match payload byte counts', () => {
  const server = makeServer()
  const size = 16
  const image = new Float64Array(3 * size * size).fill(0.1)
  const reply = respond(
    server,
    { op: 'encode', shape: [3, size, size], dtype: 'f32le' },
    tensorToPayload(image)
  )
  assert.equal(reply.header.op, 'encode')
  const n = reply.header.shape!.reduce((a, b) => a * b, 1)
  assert.equal(reply.payload.length, 4 * n)
})

test('unknown ops are answered with error frames', () => {
  const reply = respond(makeServer(), { op: 'translate' })
  assert.equal(reply.header.op, 'error')
  assert.ok(reply.header.message!.includes('unknown op'))
})

test('model failures become error frames, not crashes', () => {
  const reply = respond(
    makeServer(),
    { op: 'encode', shape: [3, 9, 9], dtype: 'f32le' },
    tensorToPayload(new Float64Array(3 * 81))
  )
  assert.equal(reply.header.op, 'error')
})

test('prompt ids are stable across registry restarts', () => {
  const dir = mkdtempSync(join(tmpdir(), 'bridge-cache-'))
  try {
    const cache = join(dir, 'prompts.json')
    const first = new PromptRegistry(cache)
    const id1 = first.add('a snowy mountain village')
    const id2 = first.add('a snowy mountain village')
    assert.equal(id1, id2)
    const second = new PromptRegistry(cache)
    assert.equal(second.add('a snowy mountain village'), id1)
    assert.notEqual(second.add('a horse'), id1)
  } finally {
    rmSync(dir, { recursive: true, force: true })
  }
})

test('empty prompts are rejected by the registry', () => {
  assert.throws(() => new PromptRegistry().add(''))
})
