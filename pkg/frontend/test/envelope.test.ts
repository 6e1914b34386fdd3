import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, test } from "vitest";

import { canonJson } from "../src/canon.js";
import { Signature, recover } from "../src/crypto.js";
import { signEnvelope } from "../src/envelope.js";

interface EnvelopeVector {
  name: string;
  payloadtype: string;
  fields: Record<string, unknown>;
  canonical_payload: string;
  payload_b64: string;
  privatekey: string;
  signature: string;
  identity: string;
}

const here = dirname(fileURLToPath(import.meta.url));
const vectors: EnvelopeVector[] = JSON.parse(
  readFileSync(resolve(here, "../../tests/conformance/envelope_vectors.json"), "utf8"),
);

// ts values are odd 61-bit integers that a double cannot hold, so pull
// them out of the canonical payload text instead of the parsed JSON
function tsOf(vector: EnvelopeVector): bigint {
  const match = /"ts":(\d+)/.exec(vector.canonical_payload);
  if (!match) throw new Error(`no ts in ${vector.name}`);
  return BigInt(match[1]);
}

describe("golden envelope corpus", () => {
  vectors.forEach((vector) => {
    test(`${vector.name} serializes to the fixture bytes`, () => {
      const ts = tsOf(vector);
      const payload = { ...vector.fields, msgtype: vector.payloadtype, ts };
      expect(canonJson(payload)).toBe(vector.canonical_payload);

      const envelope = signEnvelope(vector.payloadtype, vector.fields, vector.privatekey, ts);
      expect(envelope.payloadtype).toBe(vector.payloadtype);
      expect(envelope.payload).toBe(vector.payload_b64);
      expect(envelope.signature).toBe(vector.signature);
    });

    test(`${vector.name} fixture signature recovers to the fixture identity`, () => {
      // the fixture signature comes from the reference implementation, so
      // this is the cross-language direction: their bytes, our recovery
      const identity = recover(
        Buffer.from(vector.payload_b64, "ascii"),
        Signature.fromHex(vector.signature),
      );
      expect(identity).toBe(vector.identity);
    });
  });

  test("tampering with one payload byte changes the recovered identity", () => {
    const vector = vectors[0];
    const flipped =
      vector.payload_b64.slice(0, 3) +
      (vector.payload_b64[3] === "A" ? "B" : "A") +
      vector.payload_b64.slice(4);
    const identity = recover(Buffer.from(flipped, "ascii"), Signature.fromHex(vector.signature));
    expect(identity).not.toBe(vector.identity);
  });
});
