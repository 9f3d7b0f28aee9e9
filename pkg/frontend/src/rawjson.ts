// JSON parser that keeps the raw text of every number literal.
//
// The report view must show numbers exactly as the server serialized them;
// going through JSON.parse alone would reformat them (1.0 -> "1"). Parsing
// here yields the same value tree as JSON.parse plus, for each number, the
// untouched source slice to render.

export type RawNumber = { value: number; raw: string };

export type RawJson =
  | { kind: "object"; entries: Map<string, RawJson> }
  | { kind: "array"; items: RawJson[] }
  | { kind: "string"; value: string }
  | { kind: "number"; value: number; raw: string }
  | { kind: "boolean"; value: boolean }
  | { kind: "null" };

export class DecodeError extends Error {
  readonly path: string;

  constructor(path: string, message: string) {
    super(`${path}: ${message}`);
    this.name = "DecodeError";
    this.path = path;
  }
}

const WHITESPACE = new Set([" ", "\t", "\n", "\r"]);
const ESCAPES: Record<string, string> = {
  '"': '"',
  "\\": "\\",
  "/": "/",
  b: "\b",
  f: "\f",
  n: "\n",
  r: "\r",
  t: "\t",
};

class Parser {
  private pos = 0;

  constructor(private readonly text: string) {}

  parse(): RawJson {
    this.skipWhitespace();
    const value = this.parseValue();
    this.skipWhitespace();
    if (this.pos !== this.text.length) {
      throw this.error("trailing characters after JSON value");
    }
    return value;
  }

  private error(message: string): SyntaxError {
    return new SyntaxError(`invalid JSON at offset ${this.pos}: ${message}`);
  }

  private skipWhitespace(): void {
    while (this.pos < this.text.length && WHITESPACE.has(this.text[this.pos])) {
      this.pos += 1;
    }
  }

  private parseValue(): RawJson {
    if (this.pos >= this.text.length) {
      throw this.error("unexpected end of input");
    }
    const ch = this.text[this.pos];
    if (ch === "{") return this.parseObject();
    if (ch === "[") return this.parseArray();
    if (ch === '"') return { kind: "string", value: this.parseString() };
    if (ch === "-" || (ch >= "0" && ch <= "9")) return this.parseNumber();
    if (this.text.startsWith("true", this.pos)) {
      this.pos += 4;
      return { kind: "boolean", value: true };
    }
    if (this.text.startsWith("false", this.pos)) {
      this.pos += 5;
      return { kind: "boolean", value: false };
    }
    if (this.text.startsWith("null", this.pos)) {
      this.pos += 4;
      return { kind: "null" };
    }
    throw this.error(`unexpected character ${JSON.stringify(ch)}`);
  }

  private parseObject(): RawJson {
    this.pos += 1; // consume {
    const entries = new Map<string, RawJson>();
    this.skipWhitespace();
    if (this.text[this.pos] === "}") {
      this.pos += 1;
      return { kind: "object", entries };
    }
    for (;;) {
      this.skipWhitespace();
      if (this.text[this.pos] !== '"') {
        throw this.error("expected object key");
      }
      const key = this.parseString();
      this.skipWhitespace();
      if (this.text[this.pos] !== ":") {
        throw this.error("expected ':' after object key");
      }
      this.pos += 1;
      this.skipWhitespace();
      entries.set(key, this.parseValue());
      this.skipWhitespace();
      const ch = this.text[this.pos];
      if (ch === ",") {
        this.pos += 1;
        continue;
      }
      if (ch === "}") {
        this.pos += 1;
        return { kind: "object", entries };
      }
      throw this.error("expected ',' or '}' in object");
    }
  }

  private parseArray(): RawJson {
    this.pos += 1; // consume [
    const items: RawJson[] = [];
    this.skipWhitespace();
    if (this.text[this.pos] === "]") {
      this.pos += 1;
      return { kind: "array", items };
    }
    for (;;) {
      this.skipWhitespace();
      items.push(this.parseValue());
      this.skipWhitespace();
      const ch = this.text[this.pos];
      if (ch === ",") {
        this.pos += 1;
        continue;
      }
      if (ch === "]") {
        this.pos += 1;
        return { kind: "array", items };
      }
      throw this.error("expected ',' or ']' in array");
    }
  }

  private parseString(): string {
    this.pos += 1; // consume opening quote
    let out = "";
    for (;;) {
      if (this.pos >= this.text.length) {
        throw this.error("unterminated string");
      }
      const ch = this.text[this.pos];
      if (ch === '"') {
        this.pos += 1;
        return out;
      }
      if (ch === "\\") {
        this.pos += 1;
        const esc = this.text[this.pos];
        if (esc === "u") {
          const hex = this.text.slice(this.pos + 1, this.pos + 5);
          if (!/^[0-9a-fA-F]{4}$/.test(hex)) {
            throw this.error("bad \\u escape");
          }
          out += String.fromCharCode(parseInt(hex, 16));
          this.pos += 5;
          continue;
        }
        const mapped = ESCAPES[esc];
        if (mapped === undefined) {
          throw this.error(`bad escape \\${esc}`);
        }
        out += mapped;
        this.pos += 1;
        continue;
      }
      out += ch;
      this.pos += 1;
    }
  }

  private parseNumber(): RawJson {
    const match = /^-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][+-]?\d+)?/.exec(
      this.text.slice(this.pos),
    );
    if (match === null) {
      throw this.error("malformed number");
    }
    const raw = match[0];
    this.pos += raw.length;
    return { kind: "number", value: Number(raw), raw };
  }
}

export function parseRawJson(text: string): RawJson {
  return new Parser(text).parse();
}

// Strict accessors: each one narrows a node or raises DecodeError naming the
// offending path, so a renamed or retyped server field fails loudly.

export function asObject(node: RawJson, path: string): Map<string, RawJson> {
  if (node.kind !== "object") {
    throw new DecodeError(path, `expected object, got ${node.kind}`);
  }
  return node.entries;
}

export function asArray(node: RawJson, path: string): RawJson[] {
  if (node.kind !== "array") {
    throw new DecodeError(path, `expected array, got ${node.kind}`);
  }
  return node.items;
}

export function required(
  entries: Map<string, RawJson>,
  key: string,
  path: string,
): RawJson {
  const node = entries.get(key);
  if (node === undefined) {
    throw new DecodeError(`${path}.${key}`, "missing required field");
  }
  return node;
}

export function asString(node: RawJson, path: string): string {
  if (node.kind !== "string") {
    throw new DecodeError(path, `expected string, got ${node.kind}`);
  }
  return node.value;
}

export function asNumber(node: RawJson, path: string): RawNumber {
  if (node.kind !== "number") {
    throw new DecodeError(path, `expected number, got ${node.kind}`);
  }
  return { value: node.value, raw: node.raw };
}

export function asNullableNumber(node: RawJson, path: string): RawNumber | null {
  if (node.kind === "null") {
    return null;
  }
  return asNumber(node, path);
}

export function asInteger(node: RawJson, path: string): number {
  const num = asNumber(node, path);
  if (!Number.isInteger(num.value)) {
    throw new DecodeError(path, `expected integer, got ${num.raw}`);
  }
  return num.value;
}

// Collapse a subtree back to plain data (for free-form parts like provenance).
export function toPlain(node: RawJson): unknown {
  switch (node.kind) {
    case "object": {
      const out: Record<string, unknown> = {};
      for (const [key, value] of node.entries) {
        out[key] = toPlain(value);
      }
      return out;
    }
    case "array":
      return node.items.map(toPlain);
    case "string":
      return node.value;
    case "number":
      return node.value;
    case "boolean":
      return node.value;
    case "null":
      return null;
  }
}
