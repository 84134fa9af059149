// Embedding jobs: read a manifest, encode in batches, write the EVEC file
// atomically (temp + rename) with a sidecar metadata file next to it.

import { createHash } from 'crypto'
import { readFileSync, renameSync, unlinkSync, writeFileSync } from 'fs'
import { encodeEvec, EvecRecord } from './evec'
import { Encoder, resolveEncoder } from './encoders'
import { readImageManifest, readQueryManifest, readSectionManifest } from './manifest'

export interface AdapterJob {
  manifestPath: string
  encoderName: string
  dim: number
  outPath: string
  batchSize?: number
  device?: string
  numQueryTokens?: number
}

export interface JobReport {
  written: number
  skipped: Array<{ id: string; reason: string }>
  outPath: string
}

function inputHash(path: string): string {
  return createHash('sha256').update(readFileSync(path)).digest('hex')
}

function writeAtomic(path: string, data: Buffer | string): void {
  const tmp = path + '.tmp'
  try {
    writeFileSync(tmp, data)
    renameSync(tmp, path)
  } catch (err) {
    try {
      unlinkSync(tmp)
    } catch {
      // nothing partial to clean up
    }
    throw err
  }
}

function writeSidecar(job: AdapterJob, encoder: Encoder, report: JobReport): void {
  const sidecar = {
    encoder: encoder.name,
    pooling: encoder.pooling,
    dim: job.dim,
    created_at: new Date().toISOString(),
    input_hash: inputHash(job.manifestPath),
    written: report.written,
    skipped: report.skipped,
    device: job.device ?? 'cpu',
  }
  writeAtomic(job.outPath + '.meta.json', JSON.stringify(sidecar, null, 2) + '\n')
}

function flushEvec(job: AdapterJob, encoder: Encoder, records: EvecRecord[], skipped: JobReport['skipped']): JobReport {
  writeAtomic(job.outPath, encodeEvec(job.dim, records, true))
  const report = { written: records.length, skipped, outPath: job.outPath }
  writeSidecar(job, encoder, report)
  return report
}

export function embedImages(job: AdapterJob): JobReport {
  const encoder = resolveEncoder(job.encoderName, job.dim)
  const items = readImageManifest(job.manifestPath) // duplicate ids rejected before any encoding
  const records: EvecRecord[] = []
  const skipped: JobReport['skipped'] = []
  const batch = job.batchSize ?? 32
  for (let start = 0; start < items.length; start += batch) {
    for (const item of items.slice(start, start + batch)) {
      let bytes: Buffer
      try {
        bytes = readFileSync(item.path)
      } catch (err) {
        console.warn(`warning: skipping unreadable image ${item.imageId}: ${item.path}`)
        skipped.push({ id: item.imageId, reason: `unreadable: ${item.path}` })
        continue
      }
      records.push({ id: item.imageId, vector: encoder.encode(bytes) })
    }
  }
  return flushEvec(job, encoder, records, skipped)
}

export function embedSections(job: AdapterJob): JobReport {
  const encoder = resolveEncoder(job.encoderName, job.dim)
  const items = readSectionManifest(job.manifestPath)
  const records = items.map(item => ({
    id: item.sectionId,
    vector: encoder.encode(Buffer.from(item.text, 'utf-8')),
  }))
  return flushEvec(job, encoder, records, [])
}

export function embedQueryTokens(job: AdapterJob): JobReport {
  const encoder = resolveEncoder(job.encoderName, job.dim)
  const nq = job.numQueryTokens ?? 32
  if (!Number.isInteger(nq) || nq <= 0) {
    throw new Error(`number of query tokens must be a positive integer, got ${nq}`)
  }
  const items = readQueryManifest(job.manifestPath)
  const records: EvecRecord[] = []
  for (const item of items) {
    const imageBytes = item.imagePath ? readFileSync(item.imagePath) : Buffer.alloc(0)
    const questionBytes = Buffer.from(item.question, 'utf-8')
    for (let t = 0; t < nq; t++) {
      // one fused image+question token per slot, salted by token index
      const salted = Buffer.concat([questionBytes, imageBytes, Buffer.from(`#token${t}`)])
      records.push({ id: `${item.queryId}/token_${t}`, vector: encoder.encode(salted) })
    }
  }
  return flushEvec(job, encoder, records, [])
}
