"""Signed request envelopes.

Every mutating or reading call arrives as one JSON object:

    {"payloadtype": "<method>",
     "payload": "<base64 of canonical JSON>",
     "signature": "<130 hex chars: r || s || recovery id>"}

The signature covers the ASCII bytes of the base64 payload string, so a
receiver verifies before it parses. The payload itself must repeat the
method as ``msgtype`` — ``payloadtype`` sits outside the signed bytes,
and the inner copy is what prevents replaying a signed payload under a
different method name. It must also carry ``ts`` (nanoseconds) inside a
replay window around the receiver's clock.

There is no verify-against-a-key step anywhere: the caller's identity is
recovered from the signature and the payload bytes, then looked up in
the colony membership tables. A tampered payload recovers to a stranger
and is denied, exactly like an unregistered caller.
"""

from __future__ import annotations

import base64
import binascii
import json

from .crypto import Signature, recover, sign
from .errors import MalformedEnvelope, StaleTimestamp
from .model import canonical_json

REPLAY_WINDOW_NS = 300 * 10**9

_ENVELOPE_KEYS = {"payloadtype", "payload", "signature"}


def sign_envelope(payload_type: str, fields: dict, private_key: str, now_ns: int) -> dict:
    """Build a signed envelope for one call. ``fields`` are the
    method-specific payload entries; msgtype and ts are added here."""
    payload = dict(fields)
    payload["msgtype"] = payload_type
    payload["ts"] = now_ns
    encoded = base64.b64encode(canonical_json(payload)).decode("ascii")
    signature = sign(encoded.encode("ascii"), private_key)
    return {
        "payloadtype": payload_type,
        "payload": encoded,
        "signature": signature.to_hex(),
    }


def verify_envelope(envelope, now_ns: int,
                    window_ns: int = REPLAY_WINDOW_NS) -> tuple:
    """Check an incoming envelope and return (payload_type, payload, identity).

    Raises a typed error for every way an envelope can be wrong; the
    recovered identity is meaningful only after the caller authorizes it
    against the membership tables.
    """
    if isinstance(envelope, (bytes, bytearray)):
        try:
            envelope = json.loads(envelope.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedEnvelope(f"request is not JSON: {exc}") from None
    if not isinstance(envelope, dict) or set(envelope) != _ENVELOPE_KEYS:
        raise MalformedEnvelope(
            "envelope must have exactly payloadtype, payload and signature"
        )
    payload_type = envelope["payloadtype"]
    encoded = envelope["payload"]
    if not isinstance(payload_type, str) or not payload_type:
        raise MalformedEnvelope("payloadtype must be a non-empty string")
    if not isinstance(encoded, str) or not encoded:
        raise MalformedEnvelope("payload must be a non-empty base64 string")
    if not isinstance(envelope["signature"], str):
        raise MalformedEnvelope("signature must be a hex string")

    signature = Signature.from_hex(envelope["signature"])
    identity = recover(encoded.encode("ascii"), signature)

    try:
        raw = base64.b64decode(encoded, validate=True)
    except (binascii.Error, ValueError):
        raise MalformedEnvelope("payload is not valid base64") from None
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedEnvelope("payload is not JSON") from None
    if not isinstance(payload, dict):
        raise MalformedEnvelope("payload must be a JSON object")

    if payload.get("msgtype") != payload_type:
        raise MalformedEnvelope(
            f"msgtype {payload.get('msgtype')!r} does not match payloadtype {payload_type!r}"
        )
    ts = payload.get("ts")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise MalformedEnvelope("payload ts must be an integer (nanoseconds)")
    if abs(now_ns - ts) > window_ns:
        raise StaleTimestamp(
            f"payload timestamp {ts} outside the {window_ns // 10**9}s replay window"
        )
    return payload_type, payload, identity


def error_body(exc) -> dict:
    """The uniform JSON error shape returned to clients."""
    return exc.to_obj()
