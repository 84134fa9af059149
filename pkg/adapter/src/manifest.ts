// Line-delimited manifest readers, mirroring the engine's file formats.

import { readFileSync } from 'fs'

export interface ImageItem {
  imageId: string
  path: string
}

export interface SectionItem {
  sectionId: string
  text: string
}

export interface QueryItem {
  queryId: string
  question: string
  imagePath?: string
}

function parseLines(path: string): Array<{ lineno: number; obj: Record<string, unknown> }> {
  const out: Array<{ lineno: number; obj: Record<string, unknown> }> = []
  const lines = readFileSync(path, 'utf-8').split('\n')
  lines.forEach((line, i) => {
    if (!line.trim()) return
    let obj: unknown
    try {
      obj = JSON.parse(line)
    } catch (err) {
      throw new Error(`${path}:${i + 1}: invalid JSON`)
    }
    if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
      throw new Error(`${path}:${i + 1}: record must be a JSON object`)
    }
    out.push({ lineno: i + 1, obj: obj as Record<string, unknown> })
  })
  return out
}

function requireString(
  obj: Record<string, unknown>,
  key: string,
  where: string,
  allowEmpty = false,
): string {
  const value = obj[key]
  if (typeof value !== 'string' || (!allowEmpty && value.length === 0)) {
    throw new Error(`${where}: field ${JSON.stringify(key)} must be a nonempty string`)
  }
  return value
}

function rejectDuplicateIds(ids: string[], path: string): void {
  const seen = new Set<string>()
  for (const id of ids) {
    if (seen.has(id)) {
      throw new Error(`${path}: duplicate id ${JSON.stringify(id)}`)
    }
    seen.add(id)
  }
}

export function readImageManifest(path: string): ImageItem[] {
  const items = parseLines(path).map(({ lineno, obj }) => ({
    imageId: requireString(obj, 'image_id', `${path}:${lineno}`),
    path: requireString(obj, 'path', `${path}:${lineno}`),
  }))
  rejectDuplicateIds(items.map(i => i.imageId), path)
  return items
}

export function readSectionManifest(path: string): SectionItem[] {
  const items = parseLines(path).map(({ lineno, obj }) => ({
    sectionId: requireString(obj, 'section_id', `${path}:${lineno}`),
    text: requireString(obj, 'text', `${path}:${lineno}`),
  }))
  rejectDuplicateIds(items.map(i => i.sectionId), path)
  return items
}

export function readQueryManifest(path: string): QueryItem[] {
  const items = parseLines(path).map(({ lineno, obj }) => {
    const item: QueryItem = {
      queryId: requireString(obj, 'query_id', `${path}:${lineno}`),
      question: requireString(obj, 'question', `${path}:${lineno}`),
    }
    if (obj['image_path'] !== undefined) {
      item.imagePath = requireString(obj, 'image_path', `${path}:${lineno}`)
    }
    return item
  })
  rejectDuplicateIds(items.map(i => i.queryId), path)
  return items
}
