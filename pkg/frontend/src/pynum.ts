/**
 * Number handling for byte-exact parity with the server's canonical JSON.
 *
 * The server serializes with Python's json module: ints print without a
 * decimal point, floats with repr() (shortest round-trip, ".0" for integral
 * values, scientific notation outside [1e-4, 1e16)). JSON.parse collapses
 * "7" and "7.0" into the same number, which would break replica hashing, so
 * the replica path parses JSON with a parser that keeps each number's raw
 * source text (see {@link parsePreserving}).
 */

/** A JSON number with its original source text retained. */
export class PyNum {
  constructor(public readonly raw: string) {}

  get value(): number {
    return Number(this.raw);
  }

  get isInt(): boolean {
    return !/[.eE]/.test(this.raw);
  }
}

export type JsonValue =
  | null
  | boolean
  | string
  | PyNum
  | number
  | JsonValue[]
  | { [key: string]: JsonValue };

/** Coerce a (possibly raw-preserving) JSON number to a JS number. */
export function num(v: unknown): number {
  if (v instanceof PyNum) return v.value;
  if (typeof v === "number") return v;
  throw new Error(`expected a number, got ${typeof v}`);
}

/**
 * Format a float exactly as Python's repr() does: shortest round-trip
 * digits, a trailing ".0" for integral values, and scientific notation with
 * a signed two-digit-minimum exponent when the decimal exponent is < -4 or
 * >= 16.
 */
export function pyFloatRepr(n: number): string {
  if (!Number.isFinite(n)) throw new Error("non-finite numbers are not allowed");
  if (n === 0) return Object.is(n, -0) ? "-0.0" : "0.0";
  const neg = n < 0;
  const m = /^-?(\d)(?:\.(\d+))?e([+-]\d+)$/.exec(Math.abs(n).toExponential());
  if (!m) throw new Error(`unparseable exponential form for ${n}`);
  const digits = m[1]! + (m[2] ?? "");
  const e = parseInt(m[3]!, 10); // power of ten of the leading digit
  let out: string;
  if (e < -4 || e >= 16) {
    const mantissa = m[1]! + (m[2] ? "." + m[2] : "");
    const sign = e < 0 ? "-" : "+";
    out = `${mantissa}e${sign}${String(Math.abs(e)).padStart(2, "0")}`;
  } else if (e >= 0) {
    out =
      digits.length <= e + 1
        ? digits.padEnd(e + 1, "0") + ".0"
        : digits.slice(0, e + 1) + "." + digits.slice(e + 1);
  } else {
    out = "0." + "0".repeat(-e - 1) + digits;
  }
  return neg ? "-" + out : out;
}

/** Wrap a JS number so it serializes as a Python float (e.g. 0 -> "0.0"). */
export function pyFloat(n: number): PyNum {
  return new PyNum(pyFloatRepr(n));
}

/** Format a number the way the server would: int text or float repr. */
export function pyNumberRepr(n: number): string {
  if (Number.isInteger(n) && Math.abs(n) < 1e16) return String(n);
  return pyFloatRepr(n);
}

// ---------------------------------------------------------------------------
// Raw-preserving JSON parser

class Parser {
  private pos = 0;

  constructor(private readonly text: string) {}

  parse(): JsonValue {
    this.skipWs();
    const value = this.parseValue();
    this.skipWs();
    if (this.pos !== this.text.length) {
      throw new SyntaxError(`trailing characters at ${this.pos}`);
    }
    return value;
  }

  private error(msg: string): never {
    throw new SyntaxError(`${msg} at ${this.pos}`);
  }

  private skipWs(): void {
    while (this.pos < this.text.length && " \t\n\r".includes(this.text[this.pos]!)) {
      this.pos++;
    }
  }

  private parseValue(): JsonValue {
    const c = this.text[this.pos];
    if (c === undefined) this.error("unexpected end of input");
    if (c === "{") return this.parseObject();
    if (c === "[") return this.parseArray();
    if (c === '"') return this.parseString();
    if (this.text.startsWith("true", this.pos)) return (this.pos += 4), true;
    if (this.text.startsWith("false", this.pos)) return (this.pos += 5), false;
    if (this.text.startsWith("null", this.pos)) return (this.pos += 4), null;
    return this.parseNumber();
  }

  private parseObject(): { [key: string]: JsonValue } {
    this.pos++; // {
    const out: { [key: string]: JsonValue } = {};
    this.skipWs();
    if (this.text[this.pos] === "}") return this.pos++, out;
    for (;;) {
      this.skipWs();
      if (this.text[this.pos] !== '"') this.error("expected object key");
      const key = this.parseString();
      this.skipWs();
      if (this.text[this.pos] !== ":") this.error("expected ':'");
      this.pos++;
      this.skipWs();
      out[key] = this.parseValue();
      this.skipWs();
      const c = this.text[this.pos];
      if (c === ",") {
        this.pos++;
        continue;
      }
      if (c === "}") return this.pos++, out;
      this.error("expected ',' or '}'");
    }
  }

  private parseArray(): JsonValue[] {
    this.pos++; // [
    const out: JsonValue[] = [];
    this.skipWs();
    if (this.text[this.pos] === "]") return this.pos++, out;
    for (;;) {
      this.skipWs();
      out.push(this.parseValue());
      this.skipWs();
      const c = this.text[this.pos];
      if (c === ",") {
        this.pos++;
        continue;
      }
      if (c === "]") return this.pos++, out;
      this.error("expected ',' or ']'");
    }
  }

  private parseString(): string {
    const start = this.pos;
    this.pos++; // opening quote
    while (this.pos < this.text.length) {
      const c = this.text[this.pos];
      if (c === "\\") this.pos += 2;
      else if (c === '"') {
        this.pos++;
        return JSON.parse(this.text.slice(start, this.pos)) as string;
      } else this.pos++;
    }
    this.error("unterminated string");
  }

  private parseNumber(): PyNum {
    const m = /^-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][+-]?\d+)?/.exec(
      this.text.slice(this.pos),
    );
    if (!m || m[0].length === 0) this.error("invalid value");
    this.pos += m[0].length;
    return new PyNum(m[0]);
  }
}

/** Parse JSON keeping each number's raw source text as a {@link PyNum}. */
export function parsePreserving(text: string): JsonValue {
  return new Parser(text).parse();
}
