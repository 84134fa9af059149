import { mkdtempSync, readdirSync, readFileSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { beforeEach, describe, expect, it } from 'vitest'
import { decodeEvec } from '../src/evec'
import { embedImages, embedQueryTokens, embedSections } from '../src/jobs'
import { main } from '../src/cli'

let dir: string

beforeEach(() => {
  dir = mkdtempSync(join(tmpdir(), 'evec-adapter-'))
})

function writeJsonl(name: string, rows: object[]): string {
  const path = join(dir, name)
  writeFileSync(path, rows.map(r => JSON.stringify(r)).join('\n') + '\n')
  return path
}

function norm(v: Float32Array): number {
  let s = 0
  for (const x of v) s += x * x
  return Math.sqrt(s)
}

describe('embedImages', () => {
  it('writes one unit row per readable image and reports skips', () => {
    const img = join(dir, 'a.bin')
    writeFileSync(img, Buffer.from([1, 2, 3]))
    const manifest = writeJsonl('images.jsonl', [
      { image_id: 'imgA', path: img },
      { image_id: 'imgGone', path: join(dir, 'missing.bin') },
    ])
    const out = join(dir, 'images.evec')
    const report = embedImages({ manifestPath: manifest, encoderName: 'tiny-v1', dim: 8, outPath: out })
    expect(report.written).toBe(1)
    expect(report.skipped).toEqual([
      { id: 'imgGone', reason: expect.stringContaining('missing.bin') },
    ])
    const decoded = decodeEvec(readFileSync(out))
    expect(decoded.normalized).toBe(true)
    expect(decoded.records.map(r => r.id)).toEqual(['imgA'])
    expect(Math.abs(norm(decoded.records[0].vector) - 1)).toBeLessThan(1e-4)
    const sidecar = JSON.parse(readFileSync(out + '.meta.json', 'utf-8'))
    expect(sidecar.encoder).toBe('tiny-v1')
    expect(sidecar.dim).toBe(8)
    expect(sidecar.input_hash).toMatch(/^[0-9a-f]{64}$/)
    expect(sidecar.skipped).toHaveLength(1)
  })

  it('rejects duplicate manifest ids before any output', () => {
    const img = join(dir, 'a.bin')
    writeFileSync(img, Buffer.from([9]))
    const manifest = writeJsonl('images.jsonl', [
      { image_id: 'dup', path: img },
      { image_id: 'dup', path: img },
    ])
    const out = join(dir, 'images.evec')
    expect(() =>
      embedImages({ manifestPath: manifest, encoderName: 'tiny-v1', dim: 4, outPath: out }),
    ).toThrow(/duplicate id/)
    expect(readdirSync(dir)).not.toContain('images.evec')
    expect(readdirSync(dir)).not.toContain('images.evec.tmp')
  })
})

describe('embedSections', () => {
  it('keys records by section id', () => {
    const manifest = writeJsonl('sections.jsonl', [
      { section_id: 'kb://a#0', text: 'Alpha ## intro ## body' },
      { section_id: 'kb://a#1', text: 'Alpha ## more ## body' },
    ])
    const out = join(dir, 'sections.evec')
    const report = embedSections({ manifestPath: manifest, encoderName: 'tiny-v1', dim: 16, outPath: out })
    expect(report.written).toBe(2)
    const decoded = decodeEvec(readFileSync(out))
    expect(decoded.records.map(r => r.id)).toEqual(['kb://a#0', 'kb://a#1'])
  })

  it('rejects empty text', () => {
    const manifest = writeJsonl('sections.jsonl', [{ section_id: 's', text: '' }])
    expect(() =>
      embedSections({ manifestPath: manifest, encoderName: 'tiny-v1', dim: 4, outPath: join(dir, 'x.evec') }),
    ).toThrow(/nonempty/)
  })
})

describe('embedQueryTokens', () => {
  it('emits exactly nq dense token ids per query', () => {
    const manifest = writeJsonl('queries.jsonl', [{ query_id: 'q0', question: 'What?' }])
    const out = join(dir, 'tokens.evec')
    embedQueryTokens({
      manifestPath: manifest, encoderName: 'tiny-v1', dim: 8, outPath: out, numQueryTokens: 32,
    })
    const decoded = decodeEvec(readFileSync(out))
    expect(decoded.records).toHaveLength(32)
    expect(decoded.records.map(r => r.id)).toEqual(
      Array.from({ length: 32 }, (_, i) => `q0/token_${i}`),
    )
    const unique = new Set(decoded.records.map(r => JSON.stringify(Array.from(r.vector))))
    expect(unique.size).toBe(32) // token salt separates the slots
  })

  it('mixes image bytes into the tokens when provided', () => {
    const img = join(dir, 'q.bin')
    writeFileSync(img, Buffer.from([5, 5, 5]))
    const withImage = writeJsonl('queries1.jsonl', [
      { query_id: 'q', question: 'Same?', image_path: img },
    ])
    const without = writeJsonl('queries2.jsonl', [{ query_id: 'q', question: 'Same?' }])
    const outA = join(dir, 'a.evec')
    const outB = join(dir, 'b.evec')
    embedQueryTokens({ manifestPath: withImage, encoderName: 'tiny-v1', dim: 8, outPath: outA, numQueryTokens: 2 })
    embedQueryTokens({ manifestPath: without, encoderName: 'tiny-v1', dim: 8, outPath: outB, numQueryTokens: 2 })
    const a = decodeEvec(readFileSync(outA)).records[0].vector
    const b = decodeEvec(readFileSync(outB)).records[0].vector
    expect(Array.from(a)).not.toEqual(Array.from(b))
  })
})

describe('cli', () => {
  it('runs a job end to end', () => {
    const manifest = writeJsonl('sections.jsonl', [{ section_id: 's#0', text: 'words' }])
    const out = join(dir, 'cli.evec')
    const code = main([
      'embed-sections', '--manifest', manifest, '--encoder', 'tiny-v1',
      '--dim', '4', '--out', out,
    ])
    expect(code).toBe(0)
    expect(decodeEvec(readFileSync(out)).records).toHaveLength(1)
  })

  it('rejects unknown commands and missing flags', () => {
    expect(() => main(['transmogrify'])).toThrow(/unknown command/)
    expect(() => main(['embed-images', '--manifest', 'x'])).toThrow(/--encoder/)
  })
})
