// Encoder registry. The engine consuming the EVEC output never learns
// which encoder produced a file; provenance lives in the sidecar.
//
// "tiny-v1" is a deterministic, dependency-free encoder for pipelines and
// tests: content bytes are hashed per output component, so identical
// inputs produce bit-identical vectors on every platform. Real model
// backends register here under their own names and resolve lazily.

export interface Encoder {
  name: string
  dim: number
  pooling: string
  encode(content: Uint8Array): Float32Array
}

function fnv1a(bytes: Uint8Array, seed: number): number {
  let hash = (0x811c9dc5 ^ seed) >>> 0
  for (let i = 0; i < bytes.length; i++) {
    hash ^= bytes[i]
    hash = Math.imul(hash, 0x01000193) >>> 0
  }
  return hash >>> 0
}

function xorshift32(state: number): number {
  state ^= state << 13
  state >>>= 0
  state ^= state >>> 17
  state ^= state << 5
  return state >>> 0
}

class TinyEncoder implements Encoder {
  readonly name = 'tiny-v1'
  readonly pooling = 'hash-projection'

  constructor(readonly dim: number) {
    if (!Number.isInteger(dim) || dim <= 0) {
      throw new Error(`tiny-v1: dim must be a positive integer, got ${dim}`)
    }
  }

  encode(content: Uint8Array): Float32Array {
    const out = new Float32Array(this.dim)
    let sumSquares = 0
    for (let d = 0; d < this.dim; d++) {
      let state = fnv1a(content, d + 1) || 0x9e3779b9
      state = xorshift32(xorshift32(state))
      const value = state / 0x80000000 - 1 // uniform in [-1, 1)
      out[d] = value
      sumSquares += value * value
    }
    if (sumSquares < 1e-24) {
      out[0] = 1
      sumSquares = 1
    }
    const inv = 1 / Math.sqrt(sumSquares)
    for (let d = 0; d < this.dim; d++) {
      out[d] = Math.fround(out[d] * inv)
    }
    return out
  }
}

export function resolveEncoder(name: string, dim: number): Encoder {
  if (name === 'tiny-v1') {
    return new TinyEncoder(dim)
  }
  throw new Error(
    `encoder load failure: unknown encoder ${JSON.stringify(name)} (available: tiny-v1)`,
  )
}
