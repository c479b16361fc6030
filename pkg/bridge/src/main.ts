#!/usr/bin/env node
/**
 * Bridge entry point.
 *
 *   anamorph-bridge [--listen stdio|tcp://HOST:PORT] [--model procedural]
 *                   [--cache PATH]
 *
 * stdio mode serves a single peer over stdin/stdout (diagnostics go to
 * stderr); tcp mode accepts one connection, serves it, and exits.
 */

import { createServer } from 'node:net'
import process from 'node:process'
import { loadModel } from './model.js'
import { PromptRegistry } from './registry.js'
import { BridgeServer } from './server.js'

interface Options {
  listen: string
  model: string
  cache?: string
}

function parseArgs (argv: string[]): Options {
  const opts: Options = { listen: 'stdio', model: 'procedural' }
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (arg === '--listen') opts.listen = argv[++i]
    else if (arg === '--model') opts.model = argv[++i]
    else if (arg === '--cache') opts.cache = argv[++i]
    else {
      process.stderr.write(`unknown argument ${arg}\n`)
      process.exit(2)
    }
  }
  return opts
}

function main (): void {
  const opts = parseArgs(process.argv.slice(2))
  let model
  try {
    model = loadModel(opts.model)
  } catch (err) {
    process.stderr.write(`${String(err instanceof Error ? err.message : err)}\n`)
    process.exit(1)
  }
  const registry = new PromptRegistry(opts.cache)
  const server = new BridgeServer(model, registry)

  if (opts.listen === 'stdio') {
    server.attach(process.stdin, process.stdout, () => process.exit(0))
    return
  }
  if (opts.listen.startsWith('tcp://')) {
    const [host, portText] = opts.listen.slice('tcp://'.length).split(':')
    const tcp = createServer((socket) => {
      server.attach(socket, socket, () => {
        socket.destroy()
        tcp.close()
      })
    })
    tcp.listen(Number(portText), host, () => {
      const addr = tcp.address()
      if (addr !== null && typeof addr === 'object') {
        process.stderr.write(`listening on ${addr.address}:${addr.port}\n`)
      }
    })
    return
  }
  process.stderr.write(`bad --listen value ${opts.listen}\n`)
  process.exit(2)
}

main()
