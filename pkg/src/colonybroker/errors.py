"""Error taxonomy shared by every module.

Each error carries a stable machine-readable ``code`` that maps 1:1 onto
the wire protocol's ``{"error": {"code", "message"}}`` shape. Handlers
never leak whether a denied target exists: authorization failures are the
uniform ``deny`` code.
"""

from __future__ import annotations


class BrokerError(Exception):
    """Base class; ``code`` is the wire-level error code."""

    code = "internal"
    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def to_obj(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


class MalformedEnvelope(BrokerError):
    code = "malformed-envelope"
    http_status = 400


class BadSignature(BrokerError):
    code = "bad-signature"
    http_status = 401


class MalformedSignature(BrokerError):
    code = "malformed-signature"
    http_status = 400


class UnrecoverablePoint(BrokerError):
    code = "unrecoverable-point"
    http_status = 400


class StaleTimestamp(BrokerError):
    code = "stale-timestamp"
    http_status = 401


class Deny(BrokerError):
    """Uniform authorization failure; carries no information about the target."""

    code = "deny"
    http_status = 403

    def __init__(self, message: str = "access denied"):
        super().__init__(message)


class NotFound(BrokerError):
    code = "not-found"
    http_status = 404


class DuplicateId(BrokerError):
    code = "duplicate-id"
    http_status = 409


class NotAssignee(BrokerError):
    code = "not-assignee"
    http_status = 409


class NotRunning(BrokerError):
    code = "not-running"
    http_status = 409


class ParentTerminal(BrokerError):
    code = "parent-terminal"
    http_status = 409


class InvalidSpec(BrokerError):
    code = "invalid-spec"
    http_status = 400


class CycleDetected(InvalidSpec):
    code = "cycle-detected"


class UnknownDependency(InvalidSpec):
    code = "unknown-dependency"


class DuplicateNodeName(InvalidSpec):
    code = "duplicate-node-name"


class InvalidTimeout(BrokerError):
    code = "invalid-timeout"
    http_status = 400


class InvalidSchedule(BrokerError):
    code = "invalid-schedule"
    http_status = 400


class UnknownGenerator(BrokerError):
    code = "unknown-generator"
    http_status = 404


class UnknownLabel(BrokerError):
    code = "unknown-label"
    http_status = 404


class UnknownSnapshot(BrokerError):
    code = "unknown-snapshot"
    http_status = 404


class MalformedChecksum(BrokerError):
    code = "malformed-checksum"
    http_status = 400


class ChecksumMismatch(BrokerError):
    code = "checksum-mismatch"
    http_status = 409


class StorageUnreachable(BrokerError):
    code = "storage-unreachable"
    http_status = 502


class StorageFailure(BrokerError):
    code = "storage-failure"
    http_status = 500


class StaleLeader(BrokerError):
    """Claim stamped with an election term older than the highest seen."""

    code = "stale-leader"
    http_status = 409


class LeaderUnknown(BrokerError):
    """No elected leader to forward to; the client should retry."""

    code = "leader-unknown"
    http_status = 503


ERROR_BY_CODE = {
    cls.code: cls
    for cls in [
        BrokerError, MalformedEnvelope, BadSignature, MalformedSignature,
        UnrecoverablePoint, StaleTimestamp, Deny, NotFound, DuplicateId,
        NotAssignee, NotRunning, ParentTerminal, InvalidSpec, CycleDetected,
        UnknownDependency, DuplicateNodeName, InvalidTimeout, InvalidSchedule,
        UnknownGenerator, UnknownLabel, UnknownSnapshot, MalformedChecksum,
        ChecksumMismatch, StorageUnreachable, StorageFailure, StaleLeader,
        LeaderUnknown,
    ]
}


def from_code(code: str, message: str) -> BrokerError:
    """Rebuild a typed error from a wire-level code (client side)."""
    cls = ERROR_BY_CODE.get(code, BrokerError)
    err = cls.__new__(cls)
    BrokerError.__init__(err, message)
    if code not in ERROR_BY_CODE:
        err.code = code
    return err
