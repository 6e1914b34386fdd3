"""The metadata filesystem.

The broker stores metadata only — labels (logical directories), file
names, immutable revisions, checksums, and a pointer to where the bytes
actually live. Data moves directly between executors/clients and the
storage backend; it never passes through the broker. Snapshots freeze
the latest revision of everything under a label so a workflow sees one
consistent dataset no matter what is uploaded while it runs.

Storage drivers implement the byte side. The local driver is
content-addressed (path derived from the checksum); the in-memory
object driver mimics a remote bucket store and can simulate outages.
"""

from __future__ import annotations

import os
import threading

from .crypto import checksum_bytes, random_id
from .errors import (
    ChecksumMismatch,
    InvalidSpec,
    MalformedChecksum,
    NotFound,
    StorageUnreachable,
    UnknownSnapshot,
)
from .model import FileMeta, FsDirectives, Process


def normalize_label(label: str) -> str:
    """Labels are absolute, slash-separated logical paths: /a/b/c."""
    if not isinstance(label, str) or not label.startswith("/"):
        raise InvalidSpec(f"label must be an absolute /path, got {label!r}")
    parts = [p for p in label.split("/") if p]
    for part in parts:
        if part in (".", ".."):
            raise InvalidSpec("label must not contain . or .. segments")
    return "/" + "/".join(parts) if parts else "/"


def check_name(name: str) -> str:
    if not name or "/" in name or name in (".", ".."):
        raise InvalidSpec(f"bad file name: {name!r}")
    return name


def check_checksum(checksum: str) -> str:
    if not (isinstance(checksum, str) and len(checksum) == 64
            and all(c in "0123456789abcdef" for c in checksum)):
        raise MalformedChecksum("checksum must be 64 lowercase hex characters")
    return checksum


def substitute_placeholders(text: str, process_id: str = "", snapshot_id: str = "") -> str:
    """Expand {processid} / {snapshotid} tokens in labels and dirs, so
    specs written before submission can name per-run locations."""
    return text.replace("{processid}", process_id).replace("{snapshotid}", snapshot_id)


# -- storage drivers ---------------------------------------------------------


class LocalStorageDriver:
    """Content-addressed files under a root directory. The address is the
    checksum, so identical content is stored once and a read can always
    be validated against its name."""

    protocol = "local"

    def __init__(self, root: str):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    def _path(self, checksum: str) -> str:
        return os.path.join(self.root, checksum[:2], checksum[2:4], checksum)

    def put(self, data: bytes) -> dict:
        checksum = checksum_bytes(data)
        path = self._path(checksum)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        if not os.path.exists(path):
            tmp = path + ".tmp." + random_id()[:8]
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        return {"protocol": self.protocol, "address": self.root, "key": checksum}

    def get(self, storage_ref: dict) -> bytes:
        path = self._path(storage_ref["key"])
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise NotFound(f"no stored object {storage_ref['key']}") from None
        if checksum_bytes(data) != storage_ref["key"]:
            raise ChecksumMismatch(f"stored object {storage_ref['key']} is corrupt")
        return data

    def exists(self, storage_ref: dict) -> bool:
        return os.path.exists(self._path(storage_ref["key"]))


class MemoryObjectDriver:
    """Bucket/key object store stub with the same driver surface. Flip
    available=False to simulate the backend being down."""

    protocol = "s3"

    def __init__(self, bucket: str = "colony"):
        self.bucket = bucket
        self.objects: dict = {}
        self.available = True
        self._lock = threading.Lock()

    def _check_up(self):
        if not self.available:
            raise StorageUnreachable(f"bucket {self.bucket} is unreachable")

    def put(self, data: bytes) -> dict:
        self._check_up()
        key = checksum_bytes(data)
        with self._lock:
            self.objects[key] = bytes(data)
        return {"protocol": self.protocol, "address": self.bucket, "key": key}

    def get(self, storage_ref: dict) -> bytes:
        self._check_up()
        with self._lock:
            data = self.objects.get(storage_ref["key"])
        if data is None:
            raise NotFound(f"no stored object {storage_ref['key']}")
        return data

    def exists(self, storage_ref: dict) -> bool:
        self._check_up()
        with self._lock:
            return storage_ref["key"] in self.objects


# -- catalog -----------------------------------------------------------------


class FsCatalog:
    """Validation layer over the store's file/snapshot tables plus the
    byte transfers through a driver."""

    def __init__(self, store, clock, driver=None):
        self.store = store
        self.clock = clock
        self.driver = driver

    def add_file(self, meta: FileMeta) -> FileMeta:
        meta.label = normalize_label(meta.label)
        check_name(meta.name)
        check_checksum(meta.checksum)
        if meta.size < 0:
            raise InvalidSpec("size must be >= 0")
        if not meta.file_id:
            meta.file_id = random_id()
        meta.added = self.clock.now_ns()
        return self.store.register_file(meta)

    def upload(self, colony_id: str, label: str, name: str, data: bytes) -> FileMeta:
        """Bytes to the driver, metadata to the store."""
        if self.driver is None:
            raise StorageUnreachable("no storage driver configured")
        storage_ref = self.driver.put(data)
        meta = FileMeta(
            file_id=random_id(), colony_id=colony_id, label=label, name=name,
            checksum=checksum_bytes(data), size=len(data), storage_ref=storage_ref,
        )
        return self.add_file(meta)

    def download(self, meta: FileMeta) -> bytes:
        if self.driver is None:
            raise StorageUnreachable("no storage driver configured")
        data = self.driver.get(meta.storage_ref)
        if checksum_bytes(data) != meta.checksum:
            raise ChecksumMismatch(
                f"content of {meta.label}/{meta.name} does not match its recorded checksum")
        return data

    def list_files(self, colony_id: str, label: str) -> list:
        return self.store.latest_files(colony_id, normalize_label(label))

    def revisions(self, colony_id: str, label: str, name: str) -> list:
        return self.store.file_revisions(colony_id, normalize_label(label), name)

    def remove_file(self, colony_id: str, label: str, name: str) -> int:
        return self.store.tombstone_file(colony_id, normalize_label(label), name)

    def create_snapshot(self, colony_id: str, label: str):
        return self.store.create_snapshot(
            random_id(), colony_id, normalize_label(label), self.clock.now_ns())

    def get_snapshot(self, snapshot_id: str):
        return self.store.get_snapshot(snapshot_id)

    def remove_snapshot(self, snapshot_id: str) -> None:
        self.store.remove_snapshot(snapshot_id)

    def snapshot_files(self, snapshot_id: str) -> list:
        snap = self.store.get_snapshot(snapshot_id)
        if snap is None:
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        metas = []
        for file_id, _revision in snap.files:
            meta = self.store.get_file(file_id)
            if meta is not None:
                metas.append(meta)
        return metas


# -- executor-side sync -------------------------------------------------------


def sync_before_exec(catalog, process: Process, workdir: str) -> list:
    """Materialize the snapshots a process mounts into its working
    directory. Returns the local paths written. ``catalog`` may be any
    object with the FsCatalog surface (an API-backed facade works)."""
    fs = process.spec.fs
    if fs is None:
        return []
    written = []
    for mount in fs.snapshots:
        snapshot_id = substitute_placeholders(
            mount.snapshot_id, process_id=process.process_id)
        target = substitute_placeholders(
            mount.dir, process_id=process.process_id, snapshot_id=snapshot_id)
        target_dir = os.path.join(workdir, target.lstrip("/"))
        snap = catalog.get_snapshot(snapshot_id)
        if snap is None:
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        base = normalize_label(snap.label)
        for meta in catalog.snapshot_files(snapshot_id):
            rel = meta.label[len(base):].lstrip("/") if base != "/" else meta.label.lstrip("/")
            dest = os.path.join(target_dir, rel, meta.name) if rel else os.path.join(
                target_dir, meta.name)
            os.makedirs(os.path.dirname(dest), exist_ok=True)
            with open(dest, "wb") as fh:
                fh.write(catalog.download(meta))
            written.append(dest)
    return written


def sync_after_exec(catalog, process: Process, workdir: str) -> list:
    """Upload the files a process produced in its declared sync dirs as
    new revisions under a matching label. Returns the new FileMeta rows."""
    fs = process.spec.fs
    if fs is None:
        return []
    colony_id = process.spec.conditions.colony_id
    uploaded = []
    for sync_dir in fs.sync_dirs:
        label_root = normalize_label(
            substitute_placeholders(sync_dir, process_id=process.process_id))
        local_root = os.path.join(workdir, label_root.lstrip("/"))
        if not os.path.isdir(local_root):
            continue
        for dirpath, _dirnames, filenames in os.walk(local_root):
            rel = os.path.relpath(dirpath, local_root)
            label = label_root if rel == "." else normalize_label(
                label_root.rstrip("/") + "/" + rel.replace(os.sep, "/"))
            for filename in sorted(filenames):
                with open(os.path.join(dirpath, filename), "rb") as fh:
                    data = fh.read()
                uploaded.append(catalog.upload(colony_id, label, filename, data))
    return uploaded


def cleanup_after_exec(catalog, process: Process) -> None:
    """Honor keepfiles/keepsnapshot=false mounts once a process is done:
    drop the snapshot and/or tombstone the files it pinned."""
    fs = process.spec.fs
    if fs is None:
        return
    for mount in fs.snapshots:
        snapshot_id = substitute_placeholders(
            mount.snapshot_id, process_id=process.process_id)
        snap = catalog.get_snapshot(snapshot_id)
        if snap is None:
            continue
        if not mount.keep_files:
            for meta in catalog.snapshot_files(snapshot_id):
                try:
                    catalog.remove_file(snap.colony_id, meta.label, meta.name)
                except NotFound:
                    pass
        if not mount.keep_snapshot:
            catalog.remove_snapshot(snapshot_id)
