export { canonJson, canonJsonBytes } from "./canon.js";
export {
  Signature,
  deriveIdentity,
  generatePrivateKey,
  identityOf,
  publicKeyOf,
  readKeyFile,
  recover,
  sign,
  uncompressedPubkeyBytes,
} from "./crypto.js";
export type { AffinePoint } from "./crypto.js";
export { nowNs, signEnvelope } from "./envelope.js";
export type { Envelope } from "./envelope.js";
export { ColonyClient, createFuncSpec } from "./client.js";
export type {
  ClientOptions,
  FuncSpecOptions,
  ProcessRecord,
  WorkflowSubmission,
} from "./client.js";
export * from "./errors.js";
