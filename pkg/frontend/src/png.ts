/**
 * Minimal PNG encode/decode for the mask and scribble-composite uploads.
 *
 * Images here are tiny (64x64), so IDAT uses stored (uncompressed) deflate
 * blocks: the bytes stay deterministic across platforms, any standard PNG
 * reader accepts them, and no compressor dependency is needed. The decoder
 * exists to re-import what we exported (round-trip guarantee); it only
 * inflates stored blocks and says so loudly for anything else.
 */

export interface RawImage {
  width: number;
  height: number;
  channels: 1 | 3;
  data: Uint8Array; // row-major, width*height*channels
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

// ---------------------------------------------------------------------------
// checksums

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

// ---------------------------------------------------------------------------
// byte plumbing

function u32be(n: number): Uint8Array {
  return new Uint8Array([(n >>> 24) & 0xff, (n >>> 16) & 0xff, (n >>> 8) & 0xff, n & 0xff]);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((s, p) => s + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = new Uint8Array([...type].map((c) => c.charCodeAt(0)));
  const body = concat([typeBytes, data]);
  return concat([u32be(data.length), body, u32be(crc32(body))]);
}

/** zlib container around stored deflate blocks (max 65535 bytes each). */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  let at = 0;
  do {
    const len = Math.min(65535, raw.length - at);
    const final = at + len >= raw.length ? 1 : 0;
    parts.push(
      new Uint8Array([final, len & 0xff, len >>> 8, ~len & 0xff, (~len >>> 8) & 0xff]),
      raw.subarray(at, at + len),
    );
    at += len;
  } while (at < raw.length);
  parts.push(u32be(adler32(raw)));
  return concat(parts);
}

function zlibStoredInflate(z: Uint8Array): Uint8Array {
  if (z.length < 6) throw new Error("zlib stream truncated");
  if ((z[0] & 0x0f) !== 8) throw new Error("not a zlib stream");
  const parts: Uint8Array[] = [];
  let at = 2;
  for (;;) {
    const header = z[at];
    if ((header & 0x06) !== 0) {
      throw new Error("compressed PNG: only stored-block streams are supported here");
    }
    const len = z[at + 1] | (z[at + 2] << 8);
    const nlen = z[at + 3] | (z[at + 4] << 8);
    if ((len ^ nlen) !== 0xffff) throw new Error("corrupt stored block");
    parts.push(z.subarray(at + 5, at + 5 + len));
    at += 5 + len;
    if (header & 1) break;
  }
  const raw = concat(parts);
  const sum = (z[at] << 24 | z[at + 1] << 16 | z[at + 2] << 8 | z[at + 3]) >>> 0;
  if (sum !== adler32(raw)) throw new Error("zlib checksum mismatch");
  return raw;
}

// ---------------------------------------------------------------------------
// public codec

export function encodePng(img: RawImage): Uint8Array {
  const { width, height, channels, data } = img;
  if (data.length !== width * height * channels) {
    throw new Error(`pixel buffer is ${data.length} bytes, expected ${width * height * channels}`);
  }
  const colorType = channels === 1 ? 0 : 2;
  const ihdr = concat([u32be(width), u32be(height), new Uint8Array([8, colorType, 0, 0, 0])]);

  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height); // +1 filter byte per row
  for (let y = 0; y < height; y++) {
    raw.set(data.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

function unfilter(raw: Uint8Array, width: number, height: number, bpp: number): Uint8Array {
  const stride = width * bpp;
  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    const cur = out.subarray(y * stride, (y + 1) * stride);
    for (let x = 0; x < stride; x++) {
      const a = x >= bpp ? cur[x - bpp] : 0;
      const b = prev ? prev[x] : 0;
      const c = x >= bpp && prev ? prev[x - bpp] : 0;
      let v: number;
      switch (filter) {
        case 0: v = row[x]; break;
        case 1: v = row[x] + a; break;
        case 2: v = row[x] + b; break;
        case 3: v = row[x] + ((a + b) >> 1); break;
        case 4: {
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          v = row[x] + (pa <= pb && pa <= pc ? a : pb <= pc ? b : c);
          break;
        }
        default:
          throw new Error(`unknown PNG filter ${filter}`);
      }
      cur[x] = v & 0xff;
    }
  }
  return out;
}

export function decodePng(bytes: Uint8Array): RawImage {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  let at = 8;
  let width = 0;
  let height = 0;
  let channels: 1 | 3 = 1;
  const idat: Uint8Array[] = [];
  while (at < bytes.length) {
    const len = (bytes[at] << 24 | bytes[at + 1] << 16 | bytes[at + 2] << 8 | bytes[at + 3]) >>> 0;
    const type = String.fromCharCode(bytes[at + 4], bytes[at + 5], bytes[at + 6], bytes[at + 7]);
    const data = bytes.subarray(at + 8, at + 8 + len);
    if (type === "IHDR") {
      width = (data[0] << 24 | data[1] << 16 | data[2] << 8 | data[3]) >>> 0;
      height = (data[4] << 24 | data[5] << 16 | data[6] << 8 | data[7]) >>> 0;
      const bitDepth = data[8];
      const colorType = data[9];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (colorType === 0) channels = 1;
      else if (colorType === 2) channels = 3;
      else throw new Error(`unsupported color type ${colorType}`);
      if (data[12] !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    at += 12 + len; // length + type + data + crc
  }
  if (!width || !height) throw new Error("missing IHDR");
  const raw = zlibStoredInflate(concat(idat));
  const expect = (width * channels + 1) * height;
  if (raw.length !== expect) throw new Error(`IDAT is ${raw.length} bytes, expected ${expect}`);
  return { width, height, channels, data: unfilter(raw, width, height, channels) };
}

/** Binary mask (0/1 per pixel) -> 8-bit grayscale PNG with 255 inside. */
export function encodeMaskPng(mask: Uint8Array, width: number, height: number): Uint8Array {
  const data = new Uint8Array(width * height);
  for (let i = 0; i < data.length; i++) data[i] = mask[i] ? 255 : 0;
  return encodePng({ width, height, channels: 1, data });
}

/** Grayscale PNG -> binary mask; pixels > 127 count as inside (server rule). */
export function decodeMaskPng(bytes: Uint8Array): { width: number; height: number; mask: Uint8Array } {
  const img = decodePng(bytes);
  if (img.channels !== 1) throw new Error("mask PNG must be grayscale");
  const mask = new Uint8Array(img.width * img.height);
  for (let i = 0; i < mask.length; i++) mask[i] = img.data[i] > 127 ? 1 : 0;
  return { width: img.width, height: img.height, mask };
}
