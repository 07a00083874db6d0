// Tensor payloads travel as base64 of little-endian f32 (gradients, images
// during optimization) or raw u8 (inpainting). Decoding is explicit about
// endianness so the wire format does not depend on the host.

const B64_RE = /^[A-Za-z0-9+/]*={0,2}$/;

export function b64ToBytes(b64: string, expectedLength?: number): Uint8Array {
  if (!B64_RE.test(b64)) {
    throw new Error("payload is not valid base64");
  }
  const bytes = Buffer.from(b64, "base64");
  if (expectedLength !== undefined && bytes.length !== expectedLength) {
    throw new Error(
      `payload is ${bytes.length} bytes, expected ${expectedLength}`,
    );
  }
  return new Uint8Array(bytes);
}

export function bytesToB64(bytes: Uint8Array): string {
  return Buffer.from(bytes.buffer, bytes.byteOffset, bytes.byteLength).toString(
    "base64",
  );
}

export function b64ToF32(b64: string, expectedCount: number): Float32Array {
  const bytes = b64ToBytes(b64, expectedCount * 4);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float32Array(expectedCount);
  for (let i = 0; i < expectedCount; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

export function f32ToB64(values: Float32Array): string {
  const bytes = new Uint8Array(values.length * 4);
  const view = new DataView(bytes.buffer);
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(i * 4, values[i], true);
  }
  return bytesToB64(bytes);
}
