import { describe, expect, it } from "vitest";

import { canonicalStringify, encodeString } from "../src/canonical.js";
import { PyNum, parsePreserving, pyFloatRepr, num } from "../src/pynum.js";

describe("pyFloatRepr", () => {
  // expected strings are Python repr() outputs
  const cases: Array<[number, string]> = [
    [0.0, "0.0"],
    [-0.0, "-0.0"],
    [1.0, "1.0"],
    [-1.0, "-1.0"],
    [10.0, "10.0"],
    [0.1, "0.1"],
    [1.5, "1.5"],
    [123.456, "123.456"],
    [0.0001, "0.0001"],
    [0.00001, "1e-05"],
    [1e-7, "1e-07"],
    [5e-324, "5e-324"],
    [1e16, "1e+16"],
    [1.5e16, "1.5e+16"],
    [1e21, "1e+21"],
    [9999999999999998.0, "9999999999999998.0"],
    [0.30000000000000004, "0.30000000000000004"],
    [-3.5, "-3.5"],
    [2 ** 53, "9007199254740992.0"],
  ];
  for (const [value, expected] of cases) {
    it(`formats ${expected}`, () => {
      expect(pyFloatRepr(value)).toBe(expected);
    });
  }

  it("rejects non-finite values", () => {
    expect(() => pyFloatRepr(NaN)).toThrow();
    expect(() => pyFloatRepr(Infinity)).toThrow();
  });

  it("round-trips random doubles through parseFloat", () => {
    let seed = 42;
    const rand = () => {
      seed = (seed * 1103515245 + 12345) % 2147483648;
      return seed / 2147483648;
    };
    for (let i = 0; i < 2000; i++) {
      const n = (rand() - 0.5) * Math.pow(10, Math.floor(rand() * 40) - 20);
      expect(Number(pyFloatRepr(n))).toBe(n);
    }
  });
});

describe("parsePreserving", () => {
  it("keeps the raw spelling of numbers", () => {
    const doc = parsePreserving('{"a":7,"b":7.0,"c":1e-05,"d":-0.0}') as Record<
      string,
      PyNum
    >;
    expect(doc["a"]!.raw).toBe("7");
    expect(doc["a"]!.isInt).toBe(true);
    expect(doc["b"]!.raw).toBe("7.0");
    expect(doc["b"]!.isInt).toBe(false);
    expect(doc["c"]!.raw).toBe("1e-05");
    expect(num(doc["d"])).toBe(-0);
  });

  it("handles nesting, escapes and unicode", () => {
    const doc = parsePreserving('{"s":"h\\u00e9llo \\u2713","arr":[1,[2.5,null],true]}');
    expect(doc).toMatchObject({ s: "héllo ✓" });
  });

  it("rejects malformed documents", () => {
    for (const bad of ["{", "[1,]", '{"a"}', "07", "nul", '"x', "1 2"]) {
      expect(() => parsePreserving(bad)).toThrow(SyntaxError);
    }
  });

  it("round-trips through canonicalStringify", () => {
    const text = '{"a":[1,2.5,-0.0,1e-05],"b":{"y":"z","x":7.0},"c":null}';
    const canonical = '{"a":[1,2.5,-0.0,1e-05],"b":{"x":7.0,"y":"z"},"c":null}';
    expect(canonicalStringify(parsePreserving(text))).toBe(canonical);
  });
});

describe("encodeString", () => {
  it("escapes like Python json.dumps with ensure_ascii", () => {
    expect(encodeString("héllo ✓")).toBe('"h\\u00e9llo \\u2713"');
    expect(encodeString('q"\\\n\t\x7f')).toBe('"q\\"\\\\\\n\\t\\u007f"');
    expect(encodeString("😀")).toBe('"\\ud83d\\ude00"');
  });
});
