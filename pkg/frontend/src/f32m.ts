/**
 * Reader/writer for the F32M float-map container used at the predictor
 * boundary: magic bytes "F32M", then little-endian u32 width, height,
 * channels, then height*width*channels float32 values in row-major order
 * with channels interleaved.
 */

export interface FloatMap {
  width: number;
  height: number;
  channels: number;
  /** length = height * width * channels, layout [y][x][c] */
  data: Float32Array;
}

const MAGIC = 'F32M';
const HEADER_BYTES = 16;

export function encodeF32m(map: FloatMap): Buffer {
  const { width, height, channels, data } = map;
  if (data.length !== width * height * channels) {
    throw new Error(
      `f32m payload length ${data.length} does not match ${height}x${width}x${channels}`,
    );
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * data.length);
  buf.write(MAGIC, 0, 'ascii');
  buf.writeUInt32LE(width, 4);
  buf.writeUInt32LE(height, 8);
  buf.writeUInt32LE(channels, 12);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], HEADER_BYTES + 4 * i);
  }
  return buf;
}

export function decodeF32m(buf: Buffer): FloatMap {
  if (buf.length < HEADER_BYTES) {
    throw new Error('f32m: shorter than the 16-byte header');
  }
  if (buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('f32m: bad magic bytes');
  }
  const width = buf.readUInt32LE(4);
  const height = buf.readUInt32LE(8);
  const channels = buf.readUInt32LE(12);
  const expected = HEADER_BYTES + 4 * width * height * channels;
  if (buf.length !== expected) {
    throw new Error(`f32m: expected ${expected} bytes, got ${buf.length}`);
  }
  const data = new Float32Array(width * height * channels);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
  }
  return { width, height, channels, data };
}
