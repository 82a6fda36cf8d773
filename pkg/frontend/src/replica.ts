/**
 * Client-side replica of the session state.
 *
 * Mirrors the server's replica application rules exactly: per-attribute
 * last-writer-wins by server seq, removal tombstones, placeholder devices
 * for reordered pose updates, and command-derived ids as functions of the
 * stamped seq. `stateHash` reproduces the server's digest byte-for-byte,
 * which is what the debug panel compares.
 */

import { canonicalStringify } from "./canonical.js";
import { ControlEnvelope } from "./protocol.js";
import { JsonValue, PyNum, num } from "./pynum.js";
import { sha256Hex } from "./sha256.js";

export const SHARED_SPACE = "__shared__";
const OWNER_ATTR = "__owner";

export interface PoseJson {
  pos: JsonValue[];
  rot: JsonValue[];
  scale: JsonValue[];
}

export interface DeviceDict {
  kind: string;
  extents: [JsonValue, JsonValue];
  pose: PoseJson;
  presence: string;
  last_seq: PyNum | number;
}

export interface ElementDict {
  owner: string;
  attrs: { [name: string]: JsonValue };
  attr_seqs: { [name: string]: PyNum | number };
}

export interface LinkDict {
  link_id: string;
  source: string;
  target: string;
  author: string;
}

export interface ReplicaState {
  session_id: string;
  seq: number;
  devices: { [id: string]: DeviceDict };
  elements: { [id: string]: ElementDict };
  links: LinkDict[];
  groups: { [id: string]: string[] };
  tombstones: { [id: string]: number };
}

export function identityPose(): PoseJson {
  const f = (raw: string) => new PyNum(raw);
  return {
    pos: [f("0.0"), f("0.0"), f("0.0")],
    rot: [f("0.0"), f("0.0"), f("0.0"), f("1.0")],
    scale: [f("1.0"), f("1.0"), f("1.0")],
  };
}

function placeholderDevice(): DeviceDict {
  return {
    kind: "phone",
    extents: [new PyNum("0.07"), new PyNum("0.15")],
    pose: identityPose(),
    presence: "remote_holographic",
    last_seq: 0,
  };
}

export function emptyState(sessionId: string): ReplicaState {
  return {
    session_id: sessionId,
    seq: 0,
    devices: {},
    elements: {},
    links: [],
    groups: {},
    tombstones: {},
  };
}

/** Adopt the welcome snapshot (already in the server's canonical shape). */
export function stateFromWelcome(stateDict: { [key: string]: JsonValue }): ReplicaState {
  const out = emptyState(String(stateDict["session_id"] ?? ""));
  out.seq = stateDict["seq"] === undefined ? 0 : num(stateDict["seq"]);
  const devices = (stateDict["devices"] ?? {}) as { [id: string]: JsonValue };
  for (const [id, d] of Object.entries(devices)) {
    const dd = d as { [key: string]: JsonValue };
    out.devices[id] = {
      kind: dd["kind"] as string,
      extents: dd["extents"] as [JsonValue, JsonValue],
      pose: dd["pose"] as unknown as PoseJson,
      presence: dd["presence"] as string,
      last_seq: dd["last_seq"] as PyNum,
    };
  }
  const elements = (stateDict["elements"] ?? {}) as { [id: string]: JsonValue };
  for (const [id, e] of Object.entries(elements)) {
    const ed = e as { [key: string]: JsonValue };
    out.elements[id] = {
      owner: ed["owner"] as string,
      attrs: { ...(ed["attrs"] as { [k: string]: JsonValue }) },
      attr_seqs: { ...(ed["attr_seqs"] as { [k: string]: PyNum }) },
    };
  }
  for (const l of (stateDict["links"] ?? []) as JsonValue[]) {
    const ld = l as { [key: string]: JsonValue };
    out.links.push({
      link_id: ld["link_id"] as string,
      source: ld["source"] as string,
      target: ld["target"] as string,
      author: ld["author"] as string,
    });
  }
  const groups = (stateDict["groups"] ?? {}) as { [id: string]: JsonValue };
  for (const [gid, members] of Object.entries(groups)) {
    out.groups[gid] = (members as JsonValue[]).map(String);
  }
  const tombstones = (stateDict["tombstones"] ?? {}) as { [id: string]: JsonValue };
  for (const [eid, s] of Object.entries(tombstones)) out.tombstones[eid] = num(s);
  return out;
}

function linkSeq(link: LinkDict): number {
  const n = parseInt(link.link_id.replace(/^l/, ""), 10);
  return Number.isFinite(n) ? n : 0;
}

function setAttribute(
  el: ElementDict,
  name: string,
  value: JsonValue,
  seq: number,
): void {
  const prior = el.attr_seqs[name];
  if (prior !== undefined && num(prior) >= seq) return;
  el.attrs[name] = value;
  el.attr_seqs[name] = seq;
}

/** Apply a server-stamped envelope; order-insensitive given seq stamps. */
export function applyEnvelope(state: ReplicaState, env: ControlEnvelope): void {
  if (env.seq <= 0) throw new Error("cannot apply an unstamped envelope");
  state.seq = Math.max(state.seq, env.seq);
  const body = env.body;

  if (env.type === "join") {
    const existing = state.devices[env.sender];
    const extents: [JsonValue, JsonValue] = [
      body["width"] as JsonValue,
      body["height"] as JsonValue,
    ];
    if (existing === undefined) {
      state.devices[env.sender] = {
        kind: String(body["kind"]),
        extents,
        pose: identityPose(),
        presence: String(body["presence"]),
        last_seq: env.seq,
      };
    } else {
      // a reordered pose update created a placeholder; fill in the
      // descriptor without clobbering the newer pose
      existing.kind = String(body["kind"]);
      existing.extents = extents;
      existing.presence = String(body["presence"]);
    }
    return;
  }

  if (env.type === "pose_update") {
    const deviceId = String(body["device_id"]);
    let dev = state.devices[deviceId];
    if (dev === undefined) {
      dev = placeholderDevice();
      state.devices[deviceId] = dev;
    }
    if (env.seq > num(dev.last_seq)) {
      dev.pose = body["pose"] as unknown as PoseJson;
      dev.last_seq = env.seq;
    }
    return;
  }

  if (env.type === "content_upsert") {
    const elementId = String(body["element_id"]);
    if ((state.tombstones[elementId] ?? 0) >= env.seq) return;
    let el = state.elements[elementId];
    if (el === undefined) {
      el = { owner: SHARED_SPACE, attrs: {}, attr_seqs: {} };
      state.elements[elementId] = el;
    }
    const attrs = { ...(body["attrs"] as { [k: string]: JsonValue }) };
    if (body["owner"] !== undefined && body["owner"] !== null) {
      attrs[OWNER_ATTR] = body["owner"];
    }
    for (const [name, value] of Object.entries(attrs)) {
      setAttribute(el, name, value, env.seq);
    }
    const owner = el.attrs[OWNER_ATTR];
    el.owner = typeof owner === "string" ? owner : SHARED_SPACE;
    return;
  }

  if (env.type === "content_remove") {
    const elementId = String(body["element_id"]);
    state.tombstones[elementId] = Math.max(state.tombstones[elementId] ?? 0, env.seq);
    const el = state.elements[elementId];
    if (el !== undefined) {
      // strip writes the removal supersedes; newer ones survive it
      for (const name of Object.keys(el.attr_seqs)) {
        if (num(el.attr_seqs[name]!) <= env.seq) {
          delete el.attrs[name];
          delete el.attr_seqs[name];
        }
      }
      if (Object.keys(el.attrs).length === 0) {
        delete state.elements[elementId];
      } else {
        const owner = el.attrs[OWNER_ATTR];
        el.owner = typeof owner === "string" ? owner : SHARED_SPACE;
      }
    }
    state.links = state.links.filter(
      (l) =>
        !((l.source === elementId || l.target === elementId) && linkSeq(l) <= env.seq),
    );
    return;
  }

  if (env.type === "command") {
    const name = String(body["name"]);
    const params = (body["params"] ?? {}) as { [k: string]: JsonValue };
    if (name === "group_create") {
      const ids = ((params["ids"] ?? []) as JsonValue[]).map(String).sort();
      state.groups[`g${env.seq}`] = ids;
    } else if (name === "link_create") {
      const source = String(params["source"]);
      const target = String(params["target"]);
      if ((state.tombstones[source] ?? 0) >= env.seq) return;
      if ((state.tombstones[target] ?? 0) >= env.seq) return;
      state.links.push({ link_id: `l${env.seq}`, source, target, author: env.sender });
    }
    return;
  }
  // event / welcome / stream_header / error: no state effect
}

/** Digest over the replicated portion, byte-compatible with the server. */
export function stateHash(state: ReplicaState): string {
  const groups: { [id: string]: JsonValue } = {};
  for (const [gid, members] of Object.entries(state.groups)) {
    groups[gid] = [...members].sort();
  }
  const links = [...state.links]
    .sort((a, b) => (a.link_id < b.link_id ? -1 : a.link_id > b.link_id ? 1 : 0))
    .map((l) => ({
      link_id: l.link_id,
      source: l.source,
      target: l.target,
      author: l.author,
    }));
  const doc = {
    devices: state.devices,
    elements: state.elements,
    groups,
    links,
  } as unknown as JsonValue;
  return sha256Hex(canonicalStringify(doc));
}
