/**
 * Browser client: top-down canvas view of a session with draggable devices
 * and content, a live event feed, and a replica-hash debug panel.
 *
 * The replica never invents state: everything rendered solid traces to a
 * sequenced envelope; locally initiated drags render as a dashed
 * "unconfirmed" overlay until the server's echo arrives.
 */

import {
  decodeControl,
  decodeStreamFrame,
  encodeControl,
  PackedPoint,
  ProtocolError,
  unpackPoints,
} from "./protocol.js";
import { JsonValue, num, pyFloat } from "./pynum.js";
import {
  DeviceDict,
  ReplicaState,
  applyEnvelope,
  emptyState,
  stateFromWelcome,
  stateHash,
} from "./replica.js";

const PX_PER_M = 400;
const SEND_INTERVAL_MS = 34; // <= 30 Hz update stream

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("scene");
const ctx = canvas.getContext("2d")!;
const sessionId = new URLSearchParams(location.search).get("session") ?? "demo";
$("session-id").textContent = sessionId;

let ws: WebSocket | null = null;
let replica: ReplicaState = emptyState(sessionId);
let selfId: string | null = null;
let lastCloud: PackedPoint[] = [];

interface Drag {
  kind: "device" | "element";
  id: string;
  lastSent: number;
  pendingPose?: { x: number; y: number };
}
let drag: Drag | null = null;

// ---------------------------------------------------------------------------
// Geometry helpers (top-down: shared x right, shared y up)

const toScreen = (x: number, y: number): [number, number] => [
  canvas.width / 2 + x * PX_PER_M,
  canvas.height / 2 - y * PX_PER_M,
];
const toWorld = (px: number, py: number): [number, number] => [
  (px - canvas.width / 2) / PX_PER_M,
  (canvas.height / 2 - py) / PX_PER_M,
];

function devicePos(dev: DeviceDict): [number, number] {
  return [num(dev.pose.pos[0]), num(dev.pose.pos[1])];
}

function deviceSize(dev: DeviceDict): [number, number] {
  const sx = num(dev.pose.scale[0]);
  const sy = num(dev.pose.scale[1]);
  return [num(dev.extents[0]) * sx, num(dev.extents[1]) * sy];
}

function elementWorld(
  state: ReplicaState,
  elementId: string,
): [number, number] | null {
  const el = state.elements[elementId];
  if (!el) return null;
  const posAttr = el.attrs["position"];
  if (!Array.isArray(posAttr) || posAttr.length < 2) return null;
  const lx = num(posAttr[0]);
  const ly = num(posAttr[1]);
  const owner = state.devices[el.owner];
  if (!owner) return [lx, ly]; // shared-space coordinates
  const [ox, oy] = devicePos(owner);
  return [ox + lx, oy + ly];
}

// ---------------------------------------------------------------------------
// Networking

function send(type: Parameters<typeof encodeControl>[0], body: { [k: string]: JsonValue }) {
  if (ws && ws.readyState === WebSocket.OPEN) ws.send(encodeControl(type, body));
}

function showBanner(text: string | null) {
  const banner = $("banner");
  if (text === null) banner.classList.add("hidden");
  else {
    banner.classList.remove("hidden");
    $("banner-text").textContent = text;
  }
}

function addEvent(line: string) {
  const feed = $("events");
  const li = document.createElement("li");
  li.textContent = line;
  feed.prepend(li);
  while (feed.childElementCount > 60) feed.lastElementChild?.remove();
}

function connect() {
  replica = emptyState(sessionId);
  selfId = null;
  const proto = location.protocol === "https:" ? "wss:" : "ws:";
  ws = new WebSocket(`${proto}//${location.host}/session/${sessionId}`);
  ws.binaryType = "arraybuffer";

  ws.onopen = () => {
    showBanner(null);
    send("join", {
      kind: "virtual",
      width: pyFloat(0.07),
      height: pyFloat(0.15),
      presence: "remote_holographic",
    });
  };

  ws.onmessage = (msg: MessageEvent) => {
    if (typeof msg.data !== "string") {
      try {
        const { header, payload } = decodeStreamFrame(new Uint8Array(msg.data));
        if (header.streamKind === "pointcloud") {
          lastCloud = unpackPoints(payload as Uint8Array);
        }
      } catch {
        // malformed stream frames are dropped, never fatal
      }
      return;
    }
    let env;
    try {
      env = decodeControl(msg.data);
    } catch (exc) {
      if (exc instanceof ProtocolError) return;
      throw exc;
    }
    if (env.type === "welcome") {
      selfId = String(env.body["device_id"]);
      $("self-id").textContent = selfId;
      replica = stateFromWelcome(env.body["state"] as { [k: string]: JsonValue });
      return;
    }
    if (env.type === "error") {
      addEvent(`error ${env.body["code"]}: ${env.body["message"]}`);
      return;
    }
    if (env.seq > 0) {
      applyEnvelope(replica, env);
      $("seq").textContent = String(replica.seq);
      if (env.type === "event") {
        const t = num(env.body["t"] ?? 0).toFixed(2);
        const who = (env.body["participants"] as JsonValue[]).join(", ");
        addEvent(`${t}s ${env.body["kind"]} [${who}]`);
      }
      if (drag && env.type === "pose_update" && env.body["device_id"] === drag.id) {
        drag.pendingPose = undefined; // server echo confirmed the drag
      }
    }
  };

  ws.onclose = () => showBanner("disconnected from server");
  ws.onerror = () => showBanner("connection error");
}

$("retry").onclick = () => connect();

// ---------------------------------------------------------------------------
// Dragging

function hitTest(wx: number, wy: number): Drag | null {
  for (const [eid] of Object.entries(replica.elements)) {
    const pos = elementWorld(replica, eid);
    if (pos && Math.abs(wx - pos[0]) < 0.02 && Math.abs(wy - pos[1]) < 0.02) {
      return { kind: "element", id: eid, lastSent: 0 };
    }
  }
  for (const [did, dev] of Object.entries(replica.devices).reverse()) {
    const [x, y] = devicePos(dev);
    const [w, h] = deviceSize(dev);
    if (Math.abs(wx - x) < w / 2 && Math.abs(wy - y) < h / 2) {
      return { kind: "device", id: did, lastSent: 0 };
    }
  }
  return null;
}

function deviceAt(wx: number, wy: number, exceptOwner: string): string | null {
  for (const [did, dev] of Object.entries(replica.devices)) {
    if (did === exceptOwner) continue;
    const [x, y] = devicePos(dev);
    const [w, h] = deviceSize(dev);
    if (Math.abs(wx - x) < w / 2 && Math.abs(wy - y) < h / 2) return did;
  }
  return null;
}

canvas.addEventListener("pointerdown", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const [wx, wy] = toWorld(ev.clientX - rect.left, ev.clientY - rect.top);
  drag = hitTest(wx, wy);
  if (drag) canvas.setPointerCapture(ev.pointerId);
});

canvas.addEventListener("pointermove", (ev) => {
  if (!drag) return;
  const rect = canvas.getBoundingClientRect();
  const [wx, wy] = toWorld(ev.clientX - rect.left, ev.clientY - rect.top);
  drag.pendingPose = { x: wx, y: wy };
  const now = performance.now();
  if (now - drag.lastSent < SEND_INTERVAL_MS) return;
  drag.lastSent = now;

  if (drag.kind === "device") {
    const dev = replica.devices[drag.id];
    if (!dev) return;
    const depth = parseFloat($<HTMLInputElement>("depth").value);
    send("pose_update", {
      device_id: drag.id,
      pose: {
        pos: [pyFloat(wx), pyFloat(wy), pyFloat(depth)],
        rot: dev.pose.rot,
        scale: dev.pose.scale,
      },
    });
    return;
  }
  const el = replica.elements[drag.id];
  if (!el) return;
  // crossing into another screen re-expresses the position in that
  // screen's coordinates and hands over ownership
  const newOwner = deviceAt(wx, wy, "") ?? el.owner;
  const ownerDev = replica.devices[newOwner];
  const [ox, oy] = ownerDev ? devicePos(ownerDev) : [0, 0];
  const body: { [k: string]: JsonValue } = {
    element_id: drag.id,
    attrs: { position: [pyFloat(wx - ox), pyFloat(wy - oy)] },
  };
  if (newOwner !== el.owner) body["owner"] = newOwner;
  send("content_upsert", body);
});

canvas.addEventListener("pointerup", () => (drag = null));

$<HTMLInputElement>("depth").addEventListener("input", (ev) => {
  $("depth-value").textContent = parseFloat(
    (ev.target as HTMLInputElement).value,
  ).toFixed(2);
});

// ---------------------------------------------------------------------------
// Debug panel: replica-hash parity with the server

async function refreshHashes() {
  const clientHash = selfId ? stateHash(replica) : null;
  $("client-hash").textContent = clientHash ? clientHash.slice(0, 12) : "—";
  try {
    const resp = await fetch(`/session/${sessionId}/hash`);
    const doc = (await resp.json()) as { state_hash: string };
    $("server-hash").textContent = doc.state_hash.slice(0, 12);
    const badge = $("hash-match");
    const ok = clientHash === doc.state_hash;
    badge.textContent = ok ? "match" : "diverged";
    badge.className = `badge ${ok ? "ok" : "bad"}`;
  } catch {
    $("server-hash").textContent = "unreachable";
  }
}
setInterval(refreshHashes, 1000);

// ---------------------------------------------------------------------------
// Rendering

function draw() {
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  ctx.fillStyle = "#3a4250";
  for (let i = 0; i < lastCloud.length; i += 4) {
    const p = lastCloud[i]!;
    const [sx, sy] = toScreen(p.x, p.y);
    ctx.fillRect(sx, sy, 1, 1);
  }

  for (const [did, dev] of Object.entries(replica.devices)) {
    let [x, y] = devicePos(dev);
    const pendingHere = drag?.kind === "device" && drag.id === did && drag.pendingPose;
    if (pendingHere) ({ x, y } = drag!.pendingPose!);
    const [w, h] = deviceSize(dev);
    const [sx, sy] = toScreen(x, y);
    ctx.save();
    ctx.translate(sx, sy);
    ctx.lineWidth = did === selfId ? 2.5 : 1.5;
    ctx.strokeStyle =
      dev.presence === "local_physical" ? "#e0b24a" : did === selfId ? "#6fc2ff" : "#7a88a0";
    if (pendingHere) ctx.setLineDash([4, 3]);
    ctx.strokeRect((-w / 2) * PX_PER_M, (-h / 2) * PX_PER_M, w * PX_PER_M, h * PX_PER_M);
    ctx.setLineDash([]);
    ctx.fillStyle = "#aab4c4";
    ctx.font = "11px ui-monospace, monospace";
    ctx.fillText(did, (-w / 2) * PX_PER_M, (-h / 2) * PX_PER_M - 4);
    ctx.restore();
  }

  for (const [eid] of Object.entries(replica.elements)) {
    const pos = elementWorld(replica, eid);
    if (!pos) continue;
    let [x, y] = pos;
    if (drag?.kind === "element" && drag.id === eid && drag.pendingPose) {
      ({ x, y } = drag.pendingPose);
    }
    const [sx, sy] = toScreen(x, y);
    ctx.fillStyle = "#6fd08c";
    ctx.fillRect(sx - 5, sy - 5, 10, 10);
    ctx.fillStyle = "#aab4c4";
    ctx.font = "10px ui-monospace, monospace";
    ctx.fillText(eid, sx + 7, sy + 3);
  }
  requestAnimationFrame(draw);
}

connect();
requestAnimationFrame(draw);
