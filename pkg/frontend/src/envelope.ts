/**
 * Signed request envelopes.
 *
 * Every call goes over the wire as one JSON object:
 *
 *     {"payloadtype": "<method>",
 *      "payload": "<base64 of canonical JSON>",
 *      "signature": "<130 hex chars: r || s || recovery id>"}
 *
 * The signature covers the ASCII bytes of the base64 payload string. The
 * payload repeats the method as msgtype (payloadtype sits outside the
 * signed bytes) and carries a nanosecond ts that the broker checks
 * against its replay window.
 */

import { canonJsonBytes } from "./canon.js";
import { sign } from "./crypto.js";

export interface Envelope {
  payloadtype: string;
  payload: string;
  signature: string;
}

/** Wall clock as nanosecond epoch, millisecond granularity. */
export function nowNs(): bigint {
  return BigInt(Date.now()) * 1_000_000n;
}

export function signEnvelope(
  payloadType: string,
  fields: Record<string, unknown>,
  privateKey: string,
  tsNs: bigint,
): Envelope {
  const payload: Record<string, unknown> = { ...fields, msgtype: payloadType, ts: tsNs };
  const encoded = canonJsonBytes(payload).toString("base64");
  const signature = sign(Buffer.from(encoded, "ascii"), privateKey);
  return {
    payloadtype: payloadType,
    payload: encoded,
    signature: signature.toHex(),
  };
}
