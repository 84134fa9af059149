// EVEC binary embedding file, little-endian:
//   magic "EVEC" | version u32=1 | dim u32 | count u64 | normalized u8
//   then per record: id_len u16 | id utf-8 bytes | dim x f32

const MAGIC = Buffer.from('EVEC', 'ascii')
const VERSION = 1
const HEADER_BYTES = 4 + 4 + 4 + 8 + 1

export interface EvecRecord {
  id: string
  vector: Float32Array
}

export function encodeEvec(dim: number, records: EvecRecord[], normalized: boolean): Buffer {
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new Error(`dim must be a positive integer, got ${dim}`)
  }
  const seen = new Set<string>()
  const chunks: Buffer[] = []
  const header = Buffer.alloc(HEADER_BYTES)
  MAGIC.copy(header, 0)
  header.writeUInt32LE(VERSION, 4)
  header.writeUInt32LE(dim, 8)
  header.writeBigUInt64LE(BigInt(records.length), 12)
  header.writeUInt8(normalized ? 1 : 0, 20)
  chunks.push(header)
  for (const record of records) {
    if (seen.has(record.id)) {
      throw new Error(`duplicate id ${JSON.stringify(record.id)}`)
    }
    seen.add(record.id)
    if (record.vector.length !== dim) {
      throw new Error(
        `vector for ${JSON.stringify(record.id)} has length ${record.vector.length}, expected ${dim}`,
      )
    }
    const idBytes = Buffer.from(record.id, 'utf-8')
    if (idBytes.length > 0xffff) {
      throw new Error(`id too long: ${record.id.slice(0, 40)}...`)
    }
    const lenBuf = Buffer.alloc(2)
    lenBuf.writeUInt16LE(idBytes.length, 0)
    const vecBuf = Buffer.alloc(dim * 4)
    for (let i = 0; i < dim; i++) {
      vecBuf.writeFloatLE(record.vector[i], i * 4)
    }
    chunks.push(lenBuf, idBytes, vecBuf)
  }
  return Buffer.concat(chunks)
}

export function decodeEvec(data: Buffer): {
  dim: number
  normalized: boolean
  records: EvecRecord[]
} {
  if (data.length < HEADER_BYTES) {
    throw new Error(`truncated header (${data.length} bytes)`)
  }
  if (!data.subarray(0, 4).equals(MAGIC)) {
    throw new Error('bad magic')
  }
  const version = data.readUInt32LE(4)
  if (version !== VERSION) {
    throw new Error(`unsupported version ${version}`)
  }
  const dim = data.readUInt32LE(8)
  const count = Number(data.readBigUInt64LE(12))
  const normalized = data.readUInt8(20) === 1
  const records: EvecRecord[] = []
  let offset = HEADER_BYTES
  for (let i = 0; i < count; i++) {
    if (offset + 2 > data.length) throw new Error(`truncated id length at record ${i}`)
    const idLen = data.readUInt16LE(offset)
    offset += 2
    if (offset + idLen + dim * 4 > data.length) {
      throw new Error(`truncated record ${i} (byte offset ${offset})`)
    }
    const id = data.subarray(offset, offset + idLen).toString('utf-8')
    offset += idLen
    const vector = new Float32Array(dim)
    for (let d = 0; d < dim; d++) {
      vector[d] = data.readFloatLE(offset + d * 4)
    }
    offset += dim * 4
    records.push({ id, vector })
  }
  if (offset !== data.length) {
    throw new Error(`${data.length - offset} trailing bytes after last record`)
  }
  return { dim, normalized, records }
}
