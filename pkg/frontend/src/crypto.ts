/**
 * Recoverable ECDSA identities on secp256k1.
 *
 * The broker never stores public keys: the signer's key is recovered from
 * each signature and the principal identity is the SHA3-256 hash of the
 * 65-byte uncompressed public key, hex encoded. Nonces are deterministic
 * (RFC 6979 with HMAC-SHA256), so the same payload signed with the same
 * key yields identical signature bytes in every SDK language, and
 * signatures are always emitted in canonical low-s form.
 */

import { createHash, createHmac, randomBytes } from "node:crypto";
import { readFileSync } from "node:fs";

import { MalformedSignatureError, UnrecoverablePointError } from "./errors.js";

// secp256k1 domain parameters
export const P = 0xfffffffffffffffffffffffffffffffffffffffffffffffffffffffefffffc2fn;
export const N = 0xfffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141n;
const GX = 0x79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798n;
const GY = 0x483ada7726a3c4655da4fbfc0e1108a8fd17b448a68554199c47d08ffb10d4b8n;
const HALF_N = N >> 1n;

// Affine points are [x, y] pairs; null is the point at infinity.
// Jacobian points are [X, Y, Z] with x = X/Z^2, y = Y/Z^3.
export type AffinePoint = [bigint, bigint];
type Jacobian = [bigint, bigint, bigint];

// bigint % keeps the sign of the dividend, so reduce into [0, m)
function modP(a: bigint): bigint {
  const r = a % P;
  return r < 0n ? r + P : r;
}

function modN(a: bigint): bigint {
  const r = a % N;
  return r < 0n ? r + N : r;
}

function modPow(base: bigint, exp: bigint, m: bigint): bigint {
  let result = 1n;
  let b = ((base % m) + m) % m;
  let e = exp;
  while (e > 0n) {
    if (e & 1n) result = (result * b) % m;
    b = (b * b) % m;
    e >>= 1n;
  }
  return result;
}

function jacDouble(p: Jacobian): Jacobian {
  const [X, Y, Z] = p;
  if (Y === 0n) return [0n, 0n, 0n];
  const ys = modP(Y * Y);
  const s = modP(4n * X * ys);
  const m = modP(3n * X * X); // a == 0 for secp256k1
  const x3 = modP(m * m - 2n * s);
  const y3 = modP(m * (s - x3) - 8n * ys * ys);
  const z3 = modP(2n * Y * Z);
  return [x3, y3, z3];
}

/** Add affine (qx, qy) to Jacobian p. */
function jacAddMixed(p: Jacobian, qx: bigint, qy: bigint): Jacobian {
  const [X1, Y1, Z1] = p;
  if (Z1 === 0n) return [qx, qy, 1n];
  const zz = modP(Z1 * Z1);
  const u2 = modP(qx * zz);
  const s2 = modP(qy * zz * Z1);
  if (u2 === X1) {
    if (s2 === Y1) return jacDouble(p);
    return [0n, 0n, 0n];
  }
  const h = modP(u2 - X1);
  const r = modP(s2 - Y1);
  const hh = modP(h * h);
  const hhh = modP(hh * h);
  const v = modP(X1 * hh);
  const x3 = modP(r * r - hhh - 2n * v);
  const y3 = modP(r * (v - x3) - Y1 * hhh);
  const z3 = modP(Z1 * h);
  return [x3, y3, z3];
}

function jacAdd(p: Jacobian, q: Jacobian): Jacobian {
  const [X1, Y1, Z1] = p;
  const [X2, Y2, Z2] = q;
  if (Z1 === 0n) return q;
  if (Z2 === 0n) return p;
  const zz1 = modP(Z1 * Z1);
  const zz2 = modP(Z2 * Z2);
  const u1 = modP(X1 * zz2);
  const u2 = modP(X2 * zz1);
  const s1 = modP(Y1 * zz2 * Z2);
  const s2 = modP(Y2 * zz1 * Z1);
  if (u1 === u2) {
    if (s1 === s2) return jacDouble(p);
    return [0n, 0n, 0n];
  }
  const h = modP(u2 - u1);
  const r = modP(s2 - s1);
  const hh = modP(h * h);
  const hhh = modP(hh * h);
  const v = modP(u1 * hh);
  const x3 = modP(r * r - hhh - 2n * v);
  const y3 = modP(r * (v - x3) - s1 * hhh);
  const z3 = modP(Z1 * Z2 * h);
  return [x3, y3, z3];
}

function jacToAffine(p: Jacobian): AffinePoint | null {
  const [X, Y, Z] = p;
  if (Z === 0n) return null;
  const zi = modPow(Z, P - 2n, P);
  const zi2 = (zi * zi) % P;
  return [(X * zi2) % P, (Y * zi2 * zi) % P];
}

// precomputed affine 2^i * G for fast fixed-base multiplication
const G_DOUBLES: AffinePoint[] = (() => {
  const table: AffinePoint[] = [];
  let p: Jacobian = [GX, GY, 1n];
  for (let i = 0; i < 256; i++) {
    table.push(jacToAffine(p) as AffinePoint);
    p = jacDouble(p);
  }
  return table;
})();

/** k*G using the precomputed doubling table. */
function mulG(k: bigint): AffinePoint | null {
  let rest = modN(k);
  let acc: Jacobian = [0n, 0n, 0n];
  let i = 0;
  while (rest > 0n) {
    if (rest & 1n) {
      const [gx, gy] = G_DOUBLES[i];
      acc = jacAddMixed(acc, gx, gy);
    }
    rest >>= 1n;
    i++;
  }
  return jacToAffine(acc);
}

/** u1*G + u2*point with interleaved doubling. */
function shamir(u1: bigint, u2: bigint, point: AffinePoint): AffinePoint | null {
  let acc: Jacobian = [0n, 0n, 0n];
  const q: Jacobian = [point[0], point[1], 1n];
  const bits = Math.max(bitLength(u1), bitLength(u2));
  for (let i = bits - 1; i >= 0; i--) {
    acc = jacDouble(acc);
    if ((u1 >> BigInt(i)) & 1n) acc = jacAddMixed(acc, GX, GY);
    if ((u2 >> BigInt(i)) & 1n) acc = jacAdd(acc, q);
  }
  return jacToAffine(acc);
}

function bitLength(v: bigint): number {
  return v === 0n ? 0 : v.toString(2).length;
}

function hashMsgInt(msg: Uint8Array): bigint {
  const digest = createHash("sha3-256").update(msg).digest("hex");
  return BigInt("0x" + digest);
}

function bigTo32(value: bigint): Buffer {
  return Buffer.from(value.toString(16).padStart(64, "0"), "hex");
}

function bigFrom(buf: Buffer): bigint {
  return BigInt("0x" + buf.toString("hex"));
}

function hmacSha256(key: Buffer, data: Buffer): Buffer {
  return createHmac("sha256", key).update(data).digest();
}

/** Deterministic nonce candidates per RFC 6979 with HMAC-SHA256. */
function* rfc6979(secret: bigint, z: bigint): Generator<bigint> {
  const x = bigTo32(secret);
  const h1 = bigTo32(z % N);
  let v: Buffer = Buffer.alloc(32, 0x01);
  let k: Buffer = Buffer.alloc(32, 0x00);
  k = hmacSha256(k, Buffer.concat([v, Buffer.from([0x00]), x, h1]));
  v = hmacSha256(k, v);
  k = hmacSha256(k, Buffer.concat([v, Buffer.from([0x01]), x, h1]));
  v = hmacSha256(k, v);
  while (true) {
    v = hmacSha256(k, v);
    const candidate = bigFrom(v);
    if (candidate >= 1n && candidate < N) yield candidate;
    k = hmacSha256(k, Buffer.concat([v, Buffer.from([0x00])]));
    v = hmacSha256(k, v);
  }
}

/**
 * Recoverable ECDSA signature: the public key is reconstructible from
 * (message hash, r, s, recovery id).
 */
export class Signature {
  constructor(
    readonly r: bigint,
    readonly s: bigint,
    readonly recoveryId: number,
  ) {}

  toHex(): string {
    return (
      this.r.toString(16).padStart(64, "0") +
      this.s.toString(16).padStart(64, "0") +
      this.recoveryId.toString(16).padStart(2, "0")
    );
  }

  static fromHex(text: string): Signature {
    if (typeof text !== "string" || text.length !== 130 || !/^[0-9a-fA-F]{130}$/.test(text)) {
      throw new MalformedSignatureError("signature must be 130 hex chars (r||s||recovery)");
    }
    const r = BigInt("0x" + text.slice(0, 64));
    const s = BigInt("0x" + text.slice(64, 128));
    const rec = parseInt(text.slice(128, 130), 16);
    if (rec > 3) {
      throw new MalformedSignatureError("recovery id must be in 0..3");
    }
    return new Signature(r, s, rec);
  }
}

function decodeSecret(privateKey: string): bigint {
  if (typeof privateKey !== "string" || !/^[0-9a-fA-F]+$/.test(privateKey)) {
    throw new MalformedSignatureError("private key must be hex");
  }
  const value = BigInt("0x" + privateKey);
  if (!(value >= 1n && value < N)) {
    throw new MalformedSignatureError("private key out of range");
  }
  return value;
}

/** Affine public point for a hex private key. */
export function publicKeyOf(privateKey: string): AffinePoint {
  return mulG(decodeSecret(privateKey)) as AffinePoint;
}

export function uncompressedPubkeyBytes(point: AffinePoint): Buffer {
  return Buffer.concat([Buffer.from([0x04]), bigTo32(point[0]), bigTo32(point[1])]);
}

/** Identity = SHA3-256 of the 65-byte uncompressed public key, hex. */
export function deriveIdentity(point: AffinePoint): string {
  return createHash("sha3-256").update(uncompressedPubkeyBytes(point)).digest("hex");
}

export function identityOf(privateKey: string): string {
  return deriveIdentity(publicKeyOf(privateKey));
}

/** Fresh random private key as 64 lowercase hex chars. */
export function generatePrivateKey(): string {
  for (;;) {
    const value = bigFrom(randomBytes(32));
    if (value >= 1n && value < N) {
      return value.toString(16).padStart(64, "0");
    }
  }
}

/** Sign SHA3-256(msg); always emits the canonical low-s form. */
export function sign(msg: Uint8Array, privateKey: string): Signature {
  const secret = decodeSecret(privateKey);
  const z = hashMsgInt(msg);
  for (const k of rfc6979(secret, z)) {
    const point = mulG(k) as AffinePoint;
    const [x, y] = point;
    const r = x % N;
    if (r === 0n) continue;
    let s = (modPow(k, N - 2n, N) * ((z + r * secret) % N)) % N;
    if (s === 0n) continue;
    let recovery = (x >= N ? 2 : 0) | Number(y & 1n);
    if (s > HALF_N) {
      s = N - s;
      recovery ^= 1;
    }
    return new Signature(r, s, recovery);
  }
  throw new Error("unreachable: deterministic nonce stream exhausted");
}

/**
 * Identity whose private key produced sig over SHA3-256(msg).
 *
 * Pure function: no key registry is consulted. High-s signatures are
 * normalized to low-s before recovery rather than rejected.
 */
export function recover(msg: Uint8Array, sig: Signature): string {
  let { r, s } = sig;
  let recovery = sig.recoveryId;
  if (!(r >= 1n && r < N) || !(s >= 1n && s < N)) {
    throw new MalformedSignatureError("r and s must be in [1, n)");
  }
  if (recovery < 0 || recovery > 3) {
    throw new MalformedSignatureError("recovery id must be in 0..3");
  }
  if (s > HALF_N) {
    s = N - s;
    recovery ^= 1;
  }
  const x = r + BigInt(recovery >> 1) * N;
  if (x >= P) {
    throw new UnrecoverablePointError("r maps outside the field");
  }
  const ySq = (modPow(x, 3n, P) + 7n) % P;
  let y = modPow(ySq, (P + 1n) >> 2n, P);
  if ((y * y) % P !== ySq) {
    throw new UnrecoverablePointError("no curve point at recovered x");
  }
  if (Number(y & 1n) !== (recovery & 1)) {
    y = P - y;
  }
  const z = hashMsgInt(msg);
  const rInv = modPow(r, N - 2n, N);
  const u1 = modN(-z * rInv);
  const u2 = (s * rInv) % N;
  const q = shamir(u1, u2, [x, y]);
  if (q === null) {
    throw new UnrecoverablePointError("recovered the point at infinity");
  }
  return deriveIdentity(q);
}

/** Key files hold one lowercase 64-hex-char line. */
export function readKeyFile(path: string): string {
  const text = readFileSync(path, "ascii").trim();
  if (!/^[0-9a-f]{64}$/.test(text)) {
    throw new MalformedSignatureError("key file must hold exactly 64 lowercase hex chars");
  }
  decodeSecret(text);
  return text;
}
