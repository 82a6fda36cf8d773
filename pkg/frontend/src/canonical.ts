/**
 * Canonical JSON serializer, byte-compatible with the server's
 * (Python `json.dumps(obj, sort_keys=True, separators=(",", ":"),
 * allow_nan=False)` with the default `ensure_ascii=True`).
 */

import { JsonValue, PyNum, pyNumberRepr } from "./pynum.js";

const SHORT_ESCAPES: Record<string, string> = {
  '"': '\\"',
  "\\": "\\\\",
  "\b": "\\b",
  "\f": "\\f",
  "\n": "\\n",
  "\r": "\\r",
  "\t": "\\t",
};

/** ensure_ascii string escaping: every code unit outside 0x20-0x7e escapes. */
export function encodeString(s: string): string {
  let out = '"';
  for (let i = 0; i < s.length; i++) {
    const ch = s[i]!;
    const code = s.charCodeAt(i);
    const short = SHORT_ESCAPES[ch];
    if (short !== undefined) out += short;
    else if (code < 0x20 || code > 0x7e) {
      out += "\\u" + code.toString(16).padStart(4, "0");
    } else out += ch;
  }
  return out + '"';
}

export function canonicalStringify(value: JsonValue): string {
  if (value === null) return "null";
  if (typeof value === "boolean") return value ? "true" : "false";
  if (typeof value === "string") return encodeString(value);
  if (value instanceof PyNum) return value.raw;
  if (typeof value === "number") return pyNumberRepr(value);
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalStringify).join(",") + "]";
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map((k) => encodeString(k) + ":" + canonicalStringify(value[k]!));
  return "{" + parts.join(",") + "}";
}
