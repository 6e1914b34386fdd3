/**
 * Canonical JSON: keys sorted by code point, no insignificant whitespace,
 * raw UTF-8 output.
 *
 * Signatures cover the encoded payload, so every SDK language has to emit
 * the exact same bytes for the same value. Timestamps are nanosecond epoch
 * integers that overflow the 53-bit float mantissa; pass them as bigint.
 * Plain numbers that happen to be integral are emitted without a decimal
 * point, and non-integral ones use the shortest digit string that parses
 * back to the same double.
 */

const ESCAPES: Record<number, string> = {
  0x08: "\\b",
  0x09: "\\t",
  0x0a: "\\n",
  0x0c: "\\f",
  0x0d: "\\r",
  0x22: '\\"',
  0x5c: "\\\\",
};

export function canonJson(value: unknown): string {
  const out: string[] = [];
  writeValue(value, out);
  return out.join("");
}

export function canonJsonBytes(value: unknown): Buffer {
  return Buffer.from(canonJson(value), "utf8");
}

function writeValue(value: unknown, out: string[]): void {
  if (value === null) {
    out.push("null");
    return;
  }
  switch (typeof value) {
    case "boolean":
      out.push(value ? "true" : "false");
      return;
    case "bigint":
      out.push(value.toString(10));
      return;
    case "number":
      out.push(formatNumber(value));
      return;
    case "string":
      out.push(quoteString(value));
      return;
    case "object":
      break;
    default:
      throw new TypeError(`cannot serialize a ${typeof value}`);
  }
  if (Array.isArray(value)) {
    out.push("[");
    for (let i = 0; i < value.length; i++) {
      if (i > 0) out.push(",");
      writeValue(value[i], out);
    }
    out.push("]");
    return;
  }
  const proto = Object.getPrototypeOf(value);
  if (proto !== Object.prototype && proto !== null) {
    throw new TypeError("cannot serialize a non-plain object");
  }
  const record = value as Record<string, unknown>;
  const keys = Object.keys(record).sort(compareCodePoints);
  out.push("{");
  for (let i = 0; i < keys.length; i++) {
    if (i > 0) out.push(",");
    out.push(quoteString(keys[i]), ":");
    writeValue(record[keys[i]], out);
  }
  out.push("}");
}

function formatNumber(x: number): string {
  if (!Number.isFinite(x)) {
    throw new TypeError("cannot serialize a non-finite number");
  }
  if (Object.is(x, -0)) return "-0.0";
  // BigInt conversion is exact for any integer-valued double, including
  // magnitudes where toString would switch to exponential notation
  if (Number.isInteger(x)) return BigInt(x).toString(10);
  const [mantissa, expText] = x.toExponential().split("e");
  const exponent = parseInt(expText, 10);
  // every double at or above 1e16 is integral, so only tiny values need
  // the exponential form here
  if (exponent < -4) {
    const abs = Math.abs(exponent).toString(10).padStart(2, "0");
    return `${mantissa}e${exponent < 0 ? "-" : "+"}${abs}`;
  }
  const sign = x < 0 ? "-" : "";
  const digits = mantissa.replace("-", "").replace(".", "");
  if (exponent >= 0) {
    return sign + digits.slice(0, exponent + 1) + "." + digits.slice(exponent + 1);
  }
  return sign + "0." + "0".repeat(-exponent - 1) + digits;
}

function quoteString(s: string): string {
  if (!isWellFormedUtf16(s)) {
    throw new TypeError("cannot serialize a string with a lone surrogate");
  }
  let out = '"';
  for (let i = 0; i < s.length; i++) {
    const code = s.charCodeAt(i);
    const esc = ESCAPES[code];
    if (esc !== undefined) {
      out += esc;
    } else if (code < 0x20) {
      out += "\\u" + code.toString(16).padStart(4, "0");
    } else {
      out += s[i];
    }
  }
  return out + '"';
}

// UTF-16 order and code-point order disagree once astral characters are
// involved, and the wire format is defined over code points
function compareCodePoints(a: string, b: string): number {
  let i = 0;
  let j = 0;
  while (i < a.length && j < b.length) {
    const ca = a.codePointAt(i) as number;
    const cb = b.codePointAt(j) as number;
    if (ca !== cb) return ca < cb ? -1 : 1;
    i += ca > 0xffff ? 2 : 1;
    j += cb > 0xffff ? 2 : 1;
  }
  return (a.length - i) - (b.length - j);
}

function isWellFormedUtf16(s: string): boolean {
  for (let i = 0; i < s.length; i++) {
    const code = s.charCodeAt(i);
    if (code >= 0xd800 && code <= 0xdbff) {
      const next = s.charCodeAt(i + 1);
      if (!(next >= 0xdc00 && next <= 0xdfff)) return false;
      i++;
    } else if (code >= 0xdc00 && code <= 0xdfff) {
      return false;
    }
  }
  return true;
}
