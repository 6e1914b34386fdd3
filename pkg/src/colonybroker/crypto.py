"""Recoverable ECDSA identities on secp256k1.

The broker never stores public keys. Every API request is signed, the
signer's public key is recovered from the signature, and the principal
identity is the SHA3-256 hash of the 65-byte uncompressed public key,
hex-encoded. Signing is deterministic (RFC 6979 nonces, HMAC-SHA256) so
identical payloads produce identical signatures in every SDK language,
and signatures are always emitted in canonical low-s form.

All functions here are pure and safe for unrestricted concurrent use.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass

from .errors import MalformedSignature, UnrecoverablePoint

# secp256k1 domain parameters
P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
_HALF_N = N // 2

# Affine points are (x, y) tuples; None is the point at infinity.
# Jacobian points are (X, Y, Z) with x = X/Z^2, y = Y/Z^3.


def _jac_double(p):
    X, Y, Z = p
    if not Y:
        return (0, 0, 0)
    ys = (Y * Y) % P
    s = (4 * X * ys) % P
    m = (3 * X * X) % P  # a == 0 for secp256k1
    x3 = (m * m - 2 * s) % P
    y3 = (m * (s - x3) - 8 * ys * ys) % P
    z3 = (2 * Y * Z) % P
    return (x3, y3, z3)


def _jac_add_mixed(p, qx, qy):
    """Add affine (qx, qy) to Jacobian p."""
    X1, Y1, Z1 = p
    if not Z1:
        return (qx, qy, 1)
    zz = (Z1 * Z1) % P
    u2 = (qx * zz) % P
    s2 = (qy * zz * Z1) % P
    if u2 == X1:
        if s2 == Y1:
            return _jac_double(p)
        return (0, 0, 0)
    h = (u2 - X1) % P
    r = (s2 - Y1) % P
    hh = (h * h) % P
    hhh = (hh * h) % P
    v = (X1 * hh) % P
    x3 = (r * r - hhh - 2 * v) % P
    y3 = (r * (v - x3) - Y1 * hhh) % P
    z3 = (Z1 * h) % P
    return (x3, y3, z3)


def _jac_add(p, q):
    X1, Y1, Z1 = p
    X2, Y2, Z2 = q
    if not Z1:
        return q
    if not Z2:
        return p
    zz1 = (Z1 * Z1) % P
    zz2 = (Z2 * Z2) % P
    u1 = (X1 * zz2) % P
    u2 = (X2 * zz1) % P
    s1 = (Y1 * zz2 * Z2) % P
    s2 = (Y2 * zz1 * Z1) % P
    if u1 == u2:
        if s1 == s2:
            return _jac_double(p)
        return (0, 0, 0)
    h = (u2 - u1) % P
    r = (s2 - s1) % P
    hh = (h * h) % P
    hhh = (hh * h) % P
    v = (u1 * hh) % P
    x3 = (r * r - hhh - 2 * v) % P
    y3 = (r * (v - x3) - s1 * hhh) % P
    z3 = (Z1 * Z2 * h) % P
    return (x3, y3, z3)


def _jac_to_affine(p):
    X, Y, Z = p
    if not Z:
        return None
    zi = pow(Z, P - 2, P)
    zi2 = (zi * zi) % P
    return ((X * zi2) % P, (Y * zi2 * zi) % P)


# Precomputed affine 2^i * G for fast fixed-base multiplication.
def _precompute_g_doubles():
    table = []
    p = (GX, GY, 1)
    for _ in range(256):
        table.append(_jac_to_affine(p))
        p = _jac_double(p)
    return table


_G_DOUBLES = _precompute_g_doubles()


def _mul_g(k: int):
    """k*G using the precomputed doubling table."""
    k %= N
    acc = (0, 0, 0)
    i = 0
    while k:
        if k & 1:
            gx, gy = _G_DOUBLES[i]
            acc = _jac_add_mixed(acc, gx, gy)
        k >>= 1
        i += 1
    return _jac_to_affine(acc)


def _mul_point(k: int, point):
    if point is None or k % N == 0:
        return None
    acc = (0, 0, 0)
    add = (point[0], point[1], 1)
    while k:
        if k & 1:
            acc = _jac_add(acc, add)
        add = _jac_double(add)
        k >>= 1
    return _jac_to_affine(acc)


def _shamir(u1: int, u2: int, point):
    """u1*G + u2*point with interleaved doubling."""
    acc = (0, 0, 0)
    q = (point[0], point[1], 1)
    bits = max(u1.bit_length(), u2.bit_length())
    for i in range(bits - 1, -1, -1):
        acc = _jac_double(acc)
        if (u1 >> i) & 1:
            acc = _jac_add_mixed(acc, GX, GY)
        if (u2 >> i) & 1:
            acc = _jac_add(acc, q)
    return _jac_to_affine(acc)


def _hash_msg(msg: bytes) -> int:
    return int.from_bytes(hashlib.sha3_256(msg).digest(), "big")


def _rfc6979_k(secret: int, z: int):
    """Deterministic nonces per RFC 6979 with HMAC-SHA256; yields candidates."""
    x = secret.to_bytes(32, "big")
    h1 = (z % N).to_bytes(32, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        candidate = int.from_bytes(v, "big")
        if 1 <= candidate < N:
            yield candidate
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


@dataclass(frozen=True)
class Signature:
    """Recoverable ECDSA signature: the public key is reconstructible
    from (message hash, r, s, recovery_id)."""

    r: int
    s: int
    recovery_id: int  # 0..3

    def to_hex(self) -> str:
        return "%064x%064x%02x" % (self.r, self.s, self.recovery_id)

    @classmethod
    def from_hex(cls, text: str) -> "Signature":
        if not isinstance(text, str) or len(text) != 130:
            raise MalformedSignature("signature must be 130 hex chars (r||s||recovery)")
        try:
            r = int(text[0:64], 16)
            s = int(text[64:128], 16)
            rec = int(text[128:130], 16)
        except ValueError:
            raise MalformedSignature("signature is not valid hex") from None
        if rec > 3:
            raise MalformedSignature("recovery id must be in 0..3")
        return cls(r, s, rec)


def public_key_of(private_key: str):
    """Affine public point for a hex private key."""
    return _mul_g(_decode_secret(private_key))


def uncompressed_pubkey_bytes(point) -> bytes:
    x, y = point
    return b"\x04" + x.to_bytes(32, "big") + y.to_bytes(32, "big")


def derive_identity(point) -> str:
    """Identity = SHA3-256 of the 65-byte uncompressed public key, hex."""
    return hashlib.sha3_256(uncompressed_pubkey_bytes(point)).hexdigest()


def _decode_secret(private_key: str) -> int:
    try:
        value = int(private_key, 16)
    except (ValueError, TypeError):
        raise MalformedSignature("private key must be hex") from None
    if not 1 <= value < N:
        raise MalformedSignature("private key out of range")
    return value


def generate_private_key() -> str:
    """Fresh random private key as 64 lowercase hex chars."""
    while True:
        value = int.from_bytes(secrets.token_bytes(32), "big")
        if 1 <= value < N:
            return "%064x" % value


def identity_of(private_key: str) -> str:
    return derive_identity(public_key_of(private_key))


def generate_keypair() -> tuple[str, str]:
    """(private key hex, identity)."""
    key = generate_private_key()
    return key, identity_of(key)


def sign(msg: bytes, private_key: str) -> Signature:
    """Sign SHA3-256(msg); always emits the canonical low-s form."""
    secret = _decode_secret(private_key)
    z = _hash_msg(msg)
    for k in _rfc6979_k(secret, z):
        point = _mul_g(k)
        x, y = point
        r = x % N
        if r == 0:
            continue
        s = (pow(k, N - 2, N) * (z + r * secret)) % N
        if s == 0:
            continue
        recovery = (2 if x >= N else 0) | (y & 1)
        if s > _HALF_N:
            s = N - s
            recovery ^= 1
        return Signature(r, s, recovery)
    raise AssertionError("unreachable: RFC 6979 stream exhausted")


def recover(msg: bytes, sig: Signature) -> str:
    """Identity whose private key produced ``sig`` over SHA3-256(msg).

    Pure function: no key registry is consulted. High-s signatures are
    normalized to low-s before recovery rather than rejected.
    """
    r, s, recovery = sig.r, sig.s, sig.recovery_id
    if not (1 <= r < N) or not (1 <= s < N):
        raise MalformedSignature("r and s must be in [1, n)")
    if recovery not in (0, 1, 2, 3):
        raise MalformedSignature("recovery id must be in 0..3")
    if s > _HALF_N:
        s = N - s
        recovery ^= 1
    x = r + (recovery >> 1) * N
    if x >= P:
        raise UnrecoverablePoint("r maps outside the field")
    y_sq = (pow(x, 3, P) + 7) % P
    y = pow(y_sq, (P + 1) // 4, P)
    if (y * y) % P != y_sq:
        raise UnrecoverablePoint("no curve point at recovered x")
    if (y & 1) != (recovery & 1):
        y = P - y
    z = _hash_msg(msg)
    r_inv = pow(r, N - 2, N)
    u1 = (-z * r_inv) % N
    u2 = (s * r_inv) % N
    q = _shamir(u1, u2, (x, y))
    if q is None:
        raise UnrecoverablePoint("recovered the point at infinity")
    return derive_identity(q)


def is_identity(value) -> bool:
    """True iff value is a 64-char lowercase hex string."""
    if not isinstance(value, str) or len(value) != 64:
        return False
    return all(c in "0123456789abcdef" for c in value)


def random_id(entropy: bytes | None = None) -> str:
    """Process/workflow/file ids share the identity namespace: the
    SHA3-256 hex digest of 32 random bytes."""
    return hashlib.sha3_256(entropy if entropy is not None else secrets.token_bytes(32)).hexdigest()


def checksum_bytes(content: bytes) -> str:
    """SHA3-256 content checksum, hex (same hash family as identities)."""
    return hashlib.sha3_256(content).hexdigest()


def read_key_file(path) -> str:
    """Key files hold one lowercase 64-hex-char line."""
    text = open(path, "r", encoding="ascii").read().strip()
    _decode_secret(text)
    if text != text.lower() or len(text) != 64:
        raise MalformedSignature("key file must hold exactly 64 lowercase hex chars")
    return text


def write_key_file(path, private_key: str) -> None:
    import os

    _decode_secret(private_key)
    flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
    fd = os.open(str(path), flags, 0o600)
    try:
        os.write(fd, private_key.encode("ascii"))
    finally:
        os.close(fd)
