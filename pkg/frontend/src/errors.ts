/**
 * Structured client errors, one class per wire-level error code so callers
 * can branch on instanceof instead of string matching. Unknown codes still
 * surface as a ColonyError carrying the code verbatim.
 */

export class ColonyError extends Error {
  static code = "internal";

  readonly code: string;
  readonly status?: number;

  constructor(message?: string, status?: number, code?: string) {
    const resolved = code ?? (new.target as typeof ColonyError).code;
    super(message || resolved);
    this.name = new.target.name;
    this.code = resolved;
    this.status = status;
  }
}

export class MalformedEnvelopeError extends ColonyError { static code = "malformed-envelope"; }
export class BadSignatureError extends ColonyError { static code = "bad-signature"; }
export class MalformedSignatureError extends ColonyError { static code = "malformed-signature"; }
export class UnrecoverablePointError extends ColonyError { static code = "unrecoverable-point"; }
export class StaleTimestampError extends ColonyError { static code = "stale-timestamp"; }
/** Uniform authorization failure; carries no information about the target. */
export class DenyError extends ColonyError { static code = "deny"; }
export class NotFoundError extends ColonyError { static code = "not-found"; }
export class DuplicateIdError extends ColonyError { static code = "duplicate-id"; }
export class NotAssigneeError extends ColonyError { static code = "not-assignee"; }
export class NotRunningError extends ColonyError { static code = "not-running"; }
export class ParentTerminalError extends ColonyError { static code = "parent-terminal"; }
export class InvalidSpecError extends ColonyError { static code = "invalid-spec"; }
export class CycleDetectedError extends InvalidSpecError { static code = "cycle-detected"; }
export class UnknownDependencyError extends InvalidSpecError { static code = "unknown-dependency"; }
export class DuplicateNodeNameError extends InvalidSpecError { static code = "duplicate-node-name"; }
export class InvalidTimeoutError extends ColonyError { static code = "invalid-timeout"; }
export class InvalidScheduleError extends ColonyError { static code = "invalid-schedule"; }
export class UnknownGeneratorError extends ColonyError { static code = "unknown-generator"; }
export class UnknownLabelError extends ColonyError { static code = "unknown-label"; }
export class UnknownSnapshotError extends ColonyError { static code = "unknown-snapshot"; }
export class MalformedChecksumError extends ColonyError { static code = "malformed-checksum"; }
export class ChecksumMismatchError extends ColonyError { static code = "checksum-mismatch"; }
export class StorageUnreachableError extends ColonyError { static code = "storage-unreachable"; }
export class StorageFailureError extends ColonyError { static code = "storage-failure"; }
export class StaleLeaderError extends ColonyError { static code = "stale-leader"; }
export class LeaderUnknownError extends ColonyError { static code = "leader-unknown"; }

/** Raised locally when assign returns no process inside the polling window. */
export class AssignTimeoutError extends ColonyError { static code = "assign-timeout"; }

const SERVER_ERRORS: Array<typeof ColonyError> = [
  ColonyError, MalformedEnvelopeError, BadSignatureError, MalformedSignatureError,
  UnrecoverablePointError, StaleTimestampError, DenyError, NotFoundError,
  DuplicateIdError, NotAssigneeError, NotRunningError, ParentTerminalError,
  InvalidSpecError, CycleDetectedError, UnknownDependencyError,
  DuplicateNodeNameError, InvalidTimeoutError, InvalidScheduleError,
  UnknownGeneratorError, UnknownLabelError, UnknownSnapshotError,
  MalformedChecksumError, ChecksumMismatchError, StorageUnreachableError,
  StorageFailureError, StaleLeaderError, LeaderUnknownError,
];

export const ERROR_BY_CODE: ReadonlyMap<string, typeof ColonyError> = new Map(
  SERVER_ERRORS.map((cls) => [cls.code, cls]),
);

export function errorFromCode(code: string, message: string, status?: number): ColonyError {
  const cls = ERROR_BY_CODE.get(code);
  if (cls !== undefined) return new cls(message, status);
  return new ColonyError(message, status, code);
}
