// Counter-free deterministic RNG. Seeds are bigint so full uint64 request
// seeds survive (JSON numbers would truncate past 2^53).

const MASK64 = (1n << 64n) - 1n;

export function fnv1a64(data: Uint8Array | string): bigint {
  const bytes =
    typeof data === "string" ? new TextEncoder().encode(data) : data;
  let hash = 0xcbf29ce484222325n;
  for (const byte of bytes) {
    hash ^= BigInt(byte);
    hash = (hash * 0x100000001b3n) & MASK64;
  }
  return hash;
}

export class Rng {
  private state: bigint;
  private spare: number | null = null;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  private nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return z ^ (z >> 31n);
  }

  // uniform in [0, 1) with 53-bit resolution
  uniform(): number {
    return Number(this.nextU64() >> 11n) / 9007199254740992;
  }

  // standard normal via Box-Muller, caching the second draw
  normal(): number {
    if (this.spare !== null) {
      const value = this.spare;
      this.spare = null;
      return value;
    }
    let u = this.uniform();
    while (u === 0) u = this.uniform();
    const v = this.uniform();
    const radius = Math.sqrt(-2 * Math.log(u));
    this.spare = radius * Math.sin(2 * Math.PI * v);
    return radius * Math.cos(2 * Math.PI * v);
  }
}
