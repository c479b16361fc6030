/**
 * Prompt registry: maps free text to stable opaque ids with an on-disk
 * cache, so ids (and any cached conditioning data keyed by them) survive
 * process restarts and reconnects.
 */

import { createHash } from 'node:crypto'
import { existsSync, mkdirSync, readFileSync, writeFileSync } from 'node:fs'
import { dirname } from 'node:path'

export class PromptRegistry {
  private readonly entries = new Map<string, string>()

  constructor (private readonly cachePath?: string) {
    if (cachePath !== undefined && existsSync(cachePath)) {
      const raw = JSON.parse(readFileSync(cachePath, 'utf-8')) as Record<string, string>
      for (const [text, id] of Object.entries(raw)) this.entries.set(text, id)
    }
  }

  /** Register text (idempotent) and return its opaque id. */
  add (text: string): string {
    if (text.length === 0) throw new Error('empty prompt')
    const existing = this.entries.get(text)
    if (existing !== undefined) return existing
    const id = 'p_' + createHash('sha256').update(text, 'utf-8').digest('hex').slice(0, 16)
    this.entries.set(text, id)
    this.flush()
    return id
  }

  get size (): number {
    return this.entries.size
  }

  private flush (): void {
    if (this.cachePath === undefined) return
    mkdirSync(dirname(this.cachePath), { recursive: true })
    writeFileSync(this.cachePath, JSON.stringify(Object.fromEntries(this.entries), null, 2))
  }
}
