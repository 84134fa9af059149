#!/usr/bin/env node
// evec-adapter <embed-images|embed-sections|embed-query-tokens> [flags]
//   --manifest <jsonl>  --encoder <name>  --dim <n>  --out <file.evec>
//   [--batch <n>]  [--device <hint>]  [--nq <n>, query tokens only]

import { AdapterJob, embedImages, embedQueryTokens, embedSections } from './jobs'

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${JSON.stringify(argv[i])}`)
    }
    flags.set(key.slice(2), argv[i + 1])
  }
  return flags
}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name)
  if (value === undefined) {
    throw new Error(`missing required flag --${name}`)
  }
  return value
}

function intFlag(flags: Map<string, string>, name: string, fallback?: number): number {
  const raw = flags.get(name)
  if (raw === undefined) {
    if (fallback === undefined) throw new Error(`missing required flag --${name}`)
    return fallback
  }
  const value = Number(raw)
  if (!Number.isInteger(value)) {
    throw new Error(`--${name} must be an integer, got ${JSON.stringify(raw)}`)
  }
  return value
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv
  if (!command || command === '--help' || command === '-h') {
    console.log(
      'usage: evec-adapter <embed-images|embed-sections|embed-query-tokens> ' +
        '--manifest m.jsonl --encoder tiny-v1 --dim 32 --out file.evec [--batch n] [--device d] [--nq n]',
    )
    return command ? 0 : 1
  }
  const runners = {
    'embed-images': embedImages,
    'embed-sections': embedSections,
    'embed-query-tokens': embedQueryTokens,
  } as const
  if (!(command in runners)) {
    throw new Error(`unknown command ${JSON.stringify(command)}`)
  }
  const flags = parseFlags(rest)
  const job: AdapterJob = {
    manifestPath: requireFlag(flags, 'manifest'),
    encoderName: requireFlag(flags, 'encoder'),
    dim: intFlag(flags, 'dim'),
    outPath: requireFlag(flags, 'out'),
    batchSize: intFlag(flags, 'batch', 32),
    device: flags.get('device'),
  }
  if (command === 'embed-query-tokens') {
    job.numQueryTokens = intFlag(flags, 'nq', 32)
  }
  const report = runners[command as keyof typeof runners](job)
  console.log(
    `wrote ${report.written} vectors -> ${report.outPath}` +
      (report.skipped.length ? ` (${report.skipped.length} skipped)` : ''),
  )
  return 0
}

if (require.main === module) {
  try {
    process.exit(main(process.argv.slice(2)))
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    process.exit(1)
  }
}
