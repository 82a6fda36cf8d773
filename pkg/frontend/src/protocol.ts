/**
 * Wire codec, mirroring the server's message catalog.
 *
 * Control plane: canonical JSON envelopes
 *   {"body":{...},"sender":s,"seq":n,"ts":ms,"type":tag,"v":1}
 * Data plane: binary frames
 *   magic "HDPC" | version u8 | kind u8 | frame_id u32 LE | count u32 LE | payload
 */

import { canonicalStringify } from "./canonical.js";
import { JsonValue, PyNum, num, parsePreserving } from "./pynum.js";

export const PROTOCOL_VERSION = 1;
export const STREAM_HEADER_SIZE = 14;
export const POINT_BYTES = 9;

const STREAM_MAGIC = [0x48, 0x44, 0x50, 0x43]; // "HDPC"
const STREAM_KIND_POINTCLOUD = 0;
const STREAM_KIND_HAND = 1;

export class ProtocolError extends Error {}
export class DecodeError extends ProtocolError {}
export class VersionError extends DecodeError {}

export type PayloadTag =
  | "join"
  | "welcome"
  | "pose_update"
  | "content_upsert"
  | "content_remove"
  | "command"
  | "event"
  | "stream_header"
  | "error";

const KNOWN_TAGS: ReadonlySet<string> = new Set([
  "join",
  "welcome",
  "pose_update",
  "content_upsert",
  "content_remove",
  "command",
  "event",
  "stream_header",
  "error",
]);

export interface ControlEnvelope {
  v: number;
  seq: number;
  sender: string;
  ts: number;
  type: PayloadTag;
  /** Payload body with raw-preserved numbers (PyNum leaves). */
  body: { [key: string]: JsonValue };
}

/** Decode a control envelope; numbers keep their wire text for hashing. */
export function decodeControl(text: string): ControlEnvelope {
  let doc: JsonValue;
  try {
    doc = parsePreserving(text);
  } catch (exc) {
    throw new DecodeError(`invalid JSON: ${(exc as Error).message}`);
  }
  if (doc === null || typeof doc !== "object" || Array.isArray(doc) || doc instanceof PyNum) {
    throw new DecodeError("envelope must be a JSON object");
  }
  const obj = doc as { [key: string]: JsonValue };
  const v = obj["v"];
  if (v === undefined) throw new DecodeError("missing protocol version");
  const version = num(v);
  if (version !== PROTOCOL_VERSION) {
    throw new VersionError(`unsupported protocol version ${version}`);
  }
  const tag = obj["type"];
  if (typeof tag !== "string" || !KNOWN_TAGS.has(tag)) {
    throw new DecodeError(`unknown payload tag: ${String(tag)}`);
  }
  const body = obj["body"] ?? {};
  if (body === null || typeof body !== "object" || Array.isArray(body)) {
    throw new DecodeError("payload body must be an object");
  }
  return {
    v: version,
    seq: obj["seq"] === undefined ? 0 : num(obj["seq"]),
    sender: typeof obj["sender"] === "string" ? obj["sender"] : "",
    ts: obj["ts"] === undefined ? 0 : num(obj["ts"]),
    type: tag as PayloadTag,
    body: body as { [key: string]: JsonValue },
  };
}

/** Encode an outgoing envelope in the server's canonical layout. */
export function encodeControl(
  type: PayloadTag,
  body: { [key: string]: JsonValue },
  opts: { seq?: number; sender?: string; ts?: number } = {},
): string {
  return canonicalStringify({
    v: PROTOCOL_VERSION,
    seq: opts.seq ?? 0,
    sender: opts.sender ?? "",
    ts: opts.ts ?? 0,
    type,
    body,
  });
}

// ---------------------------------------------------------------------------
// Binary stream frames

export interface StreamFrameHeader {
  streamKind: "pointcloud" | "hand";
  frameId: number;
  count: number;
}

export interface HandFrame {
  deviceId: string;
  joints: Array<[number, [number, number, number]]>;
  rootScale: [number, number, number];
  timestampMs: number;
}

export interface PackedPoint {
  x: number; // meters
  y: number;
  z: number;
  r: number;
  g: number;
  b: number;
}

export function encodeStreamFrame(
  header: StreamFrameHeader,
  payload: Uint8Array | HandFrame,
): Uint8Array {
  let body: Uint8Array;
  let kind: number;
  if (header.streamKind === "pointcloud") {
    kind = STREAM_KIND_POINTCLOUD;
    if (!(payload instanceof Uint8Array)) {
      throw new ProtocolError("point-cloud frame payload must be packed bytes");
    }
    if (payload.length !== header.count * POINT_BYTES) {
      throw new ProtocolError("count mismatch");
    }
    body = payload;
  } else if (header.streamKind === "hand") {
    kind = STREAM_KIND_HAND;
    const hand = payload as HandFrame;
    if (hand.joints.length !== header.count) throw new ProtocolError("count mismatch");
    if (!hand.joints.some(([id]) => id === 0)) {
      throw new ProtocolError("hand frame has no root joint");
    }
    const dev = new TextEncoder().encode(hand.deviceId);
    body = new Uint8Array(10 + dev.length + 12 + hand.joints.length * 14);
    const dv = new DataView(body.buffer);
    dv.setBigUint64(0, BigInt(hand.timestampMs), true);
    dv.setUint16(8, dev.length, true);
    body.set(dev, 10);
    let off = 10 + dev.length;
    for (const s of hand.rootScale) {
      dv.setFloat32(off, s, true);
      off += 4;
    }
    for (const [id, [x, y, z]] of hand.joints) {
      dv.setUint16(off, id, true);
      dv.setFloat32(off + 2, x, true);
      dv.setFloat32(off + 6, y, true);
      dv.setFloat32(off + 10, z, true);
      off += 14;
    }
  } else {
    throw new ProtocolError(`unknown stream kind: ${header.streamKind}`);
  }
  const out = new Uint8Array(STREAM_HEADER_SIZE + body.length);
  out.set(STREAM_MAGIC, 0);
  const dv = new DataView(out.buffer);
  dv.setUint8(4, PROTOCOL_VERSION);
  dv.setUint8(5, kind);
  dv.setUint32(6, header.frameId, true);
  dv.setUint32(10, header.count, true);
  out.set(body, STREAM_HEADER_SIZE);
  return out;
}

export function decodeStreamFrame(
  data: Uint8Array,
): { header: StreamFrameHeader; payload: Uint8Array | HandFrame } {
  if (data.length < STREAM_HEADER_SIZE) {
    throw new DecodeError("buffer shorter than frame header");
  }
  for (let i = 0; i < 4; i++) {
    if (data[i] !== STREAM_MAGIC[i]) throw new DecodeError("bad magic");
  }
  const dv = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const version = dv.getUint8(4);
  if (version !== PROTOCOL_VERSION) {
    throw new VersionError(`unsupported stream frame version ${version}`);
  }
  const kind = dv.getUint8(5);
  const frameId = dv.getUint32(6, true);
  const count = dv.getUint32(10, true);
  const body = data.subarray(STREAM_HEADER_SIZE);
  if (kind === STREAM_KIND_POINTCLOUD) {
    if (body.length !== count * POINT_BYTES) throw new DecodeError("count mismatch");
    return { header: { streamKind: "pointcloud", frameId, count }, payload: body };
  }
  if (kind !== STREAM_KIND_HAND) {
    throw new DecodeError(`unknown stream kind code ${kind}`);
  }
  const bdv = new DataView(body.buffer, body.byteOffset, body.byteLength);
  if (body.length < 10) throw new DecodeError("truncated hand payload");
  const timestampMs = Number(bdv.getBigUint64(0, true));
  const devLen = bdv.getUint16(8, true);
  if (body.length < 10 + devLen + 12 + count * 14) {
    throw new DecodeError("truncated hand payload");
  }
  const deviceId = new TextDecoder().decode(body.subarray(10, 10 + devLen));
  let off = 10 + devLen;
  const rootScale: [number, number, number] = [
    bdv.getFloat32(off, true),
    bdv.getFloat32(off + 4, true),
    bdv.getFloat32(off + 8, true),
  ];
  off += 12;
  const joints: Array<[number, [number, number, number]]> = [];
  for (let i = 0; i < count; i++) {
    joints.push([
      bdv.getUint16(off, true),
      [
        bdv.getFloat32(off + 2, true),
        bdv.getFloat32(off + 6, true),
        bdv.getFloat32(off + 10, true),
      ],
    ]);
    off += 14;
  }
  if (off !== body.length) throw new DecodeError("trailing bytes in hand payload");
  if (!joints.some(([id]) => id === 0)) {
    throw new DecodeError("hand frame has no root joint");
  }
  return {
    header: { streamKind: "hand", frameId, count },
    payload: { deviceId, joints, rootScale, timestampMs },
  };
}

/** Unpack 9-byte points (i16 millimeters x3 + RGB) for the dot overlay. */
export function unpackPoints(payload: Uint8Array): PackedPoint[] {
  if (payload.length % POINT_BYTES !== 0) throw new DecodeError("ragged payload");
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const out: PackedPoint[] = [];
  for (let off = 0; off < payload.length; off += POINT_BYTES) {
    out.push({
      x: dv.getInt16(off, true) / 1000,
      y: dv.getInt16(off + 2, true) / 1000,
      z: dv.getInt16(off + 4, true) / 1000,
      r: payload[off + 6]!,
      g: payload[off + 7]!,
      b: payload[off + 8]!,
    });
  }
  return out;
}
