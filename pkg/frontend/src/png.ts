/**
 * Minimal PNG decoder for the export formats this tool consumes:
 * 8-bit RGB/RGBA color and 8/16-bit grayscale alpha, non-interlaced.
 *
 * Inflate is injected so the same code runs in the browser
 * (DecompressionStream) and under node tests (zlib).
 */

export type Inflate = (data: Uint8Array) => Promise<Uint8Array> | Uint8Array;

export interface DecodedPng {
  width: number;
  height: number;
  channels: number; // 1 gray, 3 rgb, 4 rgba
  /** samples in [0, 1], row-major, channel-interleaved, full precision */
  data: Float32Array;
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export async function decodePng(bytes: Uint8Array, inflate: Inflate): Promise<DecodedPng> {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Uint8Array[] = [];
  while (pos < bytes.length) {
    const length = view.getUint32(pos);
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const body = bytes.subarray(pos + 8, pos + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(pos + 8);
      height = view.getUint32(pos + 12);
      bitDepth = bytes[pos + 16];
      colorType = bytes[pos + 17];
      const interlace = bytes[pos + 20];
      if (interlace !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  const channels = colorType === 0 ? 1 : colorType === 2 ? 3 : colorType === 6 ? 4 : -1;
  if (channels < 0) throw new Error(`unsupported PNG color type ${colorType}`);
  if (bitDepth !== 8 && bitDepth !== 16) throw new Error(`unsupported bit depth ${bitDepth}`);
  if (bitDepth === 16 && channels !== 1) throw new Error("16-bit is supported for grayscale only");

  const compressed = concat(idat);
  const raw = await inflate(compressed);

  const sampleBytes = bitDepth / 8;
  const bpp = channels * sampleBytes;
  const stride = width * bpp;
  if (raw.length < height * (stride + 1)) throw new Error("truncated PNG data");

  const out = new Float32Array(width * height * channels);
  const prev = new Uint8Array(stride);
  const cur = new Uint8Array(stride);
  const maxVal = bitDepth === 8 ? 255 : 65535;
  for (let y = 0; y < height; y++) {
    const rowStart = y * (stride + 1);
    const filter = raw[rowStart];
    cur.set(raw.subarray(rowStart + 1, rowStart + 1 + stride));
    switch (filter) {
      case 0:
        break;
      case 1:
        for (let i = bpp; i < stride; i++) cur[i] = (cur[i] + cur[i - bpp]) & 0xff;
        break;
      case 2:
        for (let i = 0; i < stride; i++) cur[i] = (cur[i] + prev[i]) & 0xff;
        break;
      case 3:
        for (let i = 0; i < stride; i++) {
          const left = i >= bpp ? cur[i - bpp] : 0;
          cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xff;
        }
        break;
      case 4:
        for (let i = 0; i < stride; i++) {
          const left = i >= bpp ? cur[i - bpp] : 0;
          const upLeft = i >= bpp ? prev[i - bpp] : 0;
          cur[i] = (cur[i] + paeth(left, prev[i], upLeft)) & 0xff;
        }
        break;
      default:
        throw new Error(`unknown PNG filter ${filter}`);
    }
    const rowOut = y * width * channels;
    if (bitDepth === 8) {
      for (let i = 0; i < width * channels; i++) out[rowOut + i] = cur[i] / maxVal;
    } else {
      for (let i = 0; i < width * channels; i++) {
        out[rowOut + i] = ((cur[2 * i] << 8) | cur[2 * i + 1]) / maxVal; // big-endian
      }
    }
    prev.set(cur);
  }
  return { width, height, channels, data: out };
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

/** Browser inflate using DecompressionStream (zlib container). */
export async function browserInflate(data: Uint8Array): Promise<Uint8Array> {
  const ds = new DecompressionStream("deflate");
  const stream = new Blob([data as BlobPart]).stream().pipeThrough(ds);
  const buf = await new Response(stream).arrayBuffer();
  return new Uint8Array(buf);
}
