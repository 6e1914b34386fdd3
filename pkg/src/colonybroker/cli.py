"""Command line interface to the broker.

Subcommand tree: keys, server, colony, executor, function, submit,
workflow, process, stats, cron, generator, fs, store. Server address and
signing key come from --server/--keyfile or the COLONY_SERVER and
COLONY_KEYFILE environment variables.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys

from .client import ColonyClient
from .config import ServerConfig
from .crypto import (
    Signature,
    generate_keypair,
    identity_of,
    read_key_file,
    recover,
    sign,
    write_key_file,
)
from .errors import BrokerError


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _client(args) -> ColonyClient:
    server = args.server or os.environ.get("COLONY_SERVER", "http://127.0.0.1:50080")
    keyfile = args.keyfile or os.environ.get("COLONY_KEYFILE", "")
    if not keyfile:
        raise SystemExit("no signing key: pass --keyfile or set COLONY_KEYFILE")
    return ColonyClient(server, read_key_file(keyfile), retries=3)


def _cid(client: ColonyClient, args) -> str:
    """Colony id from --colony, which may be a name."""
    return client.resolve_colony(args.colony)


# -- keys -----------------------------------------------------------------


def cmd_keys_generate(args) -> None:
    key, identity = generate_keypair()
    if args.out:
        write_key_file(args.out, key)
        _print({"identity": identity, "keyfile": args.out})
    else:
        _print({"identity": identity, "privatekey": key})


def cmd_keys_identity(args) -> None:
    _print({"identity": identity_of(read_key_file(args.keyfile))})


def cmd_keys_sign(args) -> None:
    message = args.message.encode("utf-8")
    signature = sign(message, read_key_file(args.keyfile))
    _print({"signature": signature.to_hex()})


def cmd_keys_recover(args) -> None:
    identity = recover(args.message.encode("utf-8"), Signature.from_hex(args.signature))
    _print({"identity": identity})


# -- server ------------------------------------------------------------------


def cmd_server_start(args) -> None:
    from .server import ColonyServer

    if args.config:
        config = ServerConfig.from_file(args.config)
    else:
        peers = []
        for peer in args.peer or []:
            name, _, url = peer.partition("=")
            if not url:
                raise SystemExit(f"--peer wants name=url, got {peer!r}")
            peers.append({"name": name, "url": url})
        config = ServerConfig(
            name=args.name, host=args.host, port=args.port, db_path=args.db,
            keyfile=args.keyfile or "", fs_root=args.fs_root or "", peers=peers)
    server = ColonyServer(config)
    server.start()
    print(f"serving on {server.url} (owner {server.owner_id[:12]}…, db {config.db_path})")
    stop = []
    signal.signal(signal.SIGTERM, lambda *a: stop.append(1))
    try:
        while not stop:
            signal.pause()
    except KeyboardInterrupt:
        pass
    server.stop()


def cmd_server_health(args) -> None:
    import requests

    server = args.server or os.environ.get("COLONY_SERVER", "http://127.0.0.1:50080")
    _print(requests.get(server.rstrip("/") + "/health", timeout=5).json())


# -- colony / executor / function ---------------------------------------------


def cmd_colony_add(args) -> None:
    if args.colony_keyfile:
        colony_id = identity_of(read_key_file(args.colony_keyfile))
    elif args.colony_id:
        colony_id = args.colony_id
    else:
        key, colony_id = generate_keypair()
        out = args.name + ".colony.key"
        write_key_file(out, key)
        print(f"new colony key written to {out}", file=sys.stderr)
    _print(_client(args).add_colony(colony_id, args.name).to_obj())


def cmd_colony_ls(args) -> None:
    _print([c.to_obj() for c in _client(args).get_colonies()])


def cmd_executor_add(args) -> None:
    executor_id = identity_of(read_key_file(args.executor_keyfile)) \
        if args.executor_keyfile else args.executor_id
    if not executor_id:
        raise SystemExit("pass --executor-keyfile or --executor-id")
    client = _client(args)
    colony_id = _cid(client, args)
    record = client.add_executor(executor_id, args.name, args.type, colony_id)
    if args.approve and not record.approved:
        client.approve_executor(colony_id, args.name)
        record.approved = True
    _print(record.to_obj())


def cmd_executor_approve(args) -> None:
    client = _client(args)
    client.approve_executor(_cid(client, args), args.name)
    _print({"ok": True})


def cmd_executor_remove(args) -> None:
    client = _client(args)
    client.remove_executor(_cid(client, args), args.name)
    _print({"ok": True})


def cmd_executor_ls(args) -> None:
    client = _client(args)
    _print([e.to_obj() for e in client.get_executors(_cid(client, args))])


def cmd_function_add(args) -> None:
    client = _client(args)
    client.add_function(_cid(client, args), args.executor_name, args.funcname)
    _print({"ok": True})


# -- processes ------------------------------------------------------------------


def cmd_submit(args) -> None:
    client = _client(args)
    process = client.submit(_load_json(args.spec))
    if args.follow:
        process = client.subscribe(process.process_id, args.timeout)
    _print(process.to_obj())


def cmd_workflow_submit(args) -> None:
    import time

    client = _client(args)
    colony_id = _cid(client, args)
    result = client.submit_workflow(colony_id, _load_json(args.spec))
    if args.follow:
        deadline = time.monotonic() + args.timeout
        while True:
            result = client.get_workflow(colony_id, result["workflowid"])
            if result["state"] in ("successful", "failed"):
                break
            if time.monotonic() >= deadline:
                print(f"timed out after {args.timeout}s", file=sys.stderr)
                break
            time.sleep(0.2)
    _print(result)


def cmd_workflow_get(args) -> None:
    client = _client(args)
    _print(client.get_workflow(_cid(client, args), args.id))


def cmd_process_get(args) -> None:
    _print(_client(args).get_process(args.id).to_obj())


def cmd_process_ls(args) -> None:
    client = _client(args)
    _print([p.to_obj() for p in
            client.get_processes(_cid(client, args), state=args.state)])


def cmd_stats(args) -> None:
    client = _client(args)
    _print(client.get_statistics(_cid(client, args)))


# -- triggers ---------------------------------------------------------------------


def cmd_cron_add(args) -> None:
    client = _client(args)
    _print(client.add_cron(
        _cid(client, args), args.name, _load_json(args.workflow),
        interval=args.interval, cron_expr=args.expr).to_obj())


def cmd_cron_ls(args) -> None:
    client = _client(args)
    _print([c.to_obj() for c in client.get_crons(_cid(client, args))])


def cmd_generator_add(args) -> None:
    client = _client(args)
    _print(client.add_generator(
        _cid(client, args), args.name, _load_json(args.workflow),
        trigger_count=args.count, timeout=args.timeout).to_obj())


def cmd_generator_ls(args) -> None:
    client = _client(args)
    _print([g.to_obj() for g in client.get_generators(_cid(client, args))])


def cmd_generator_pack(args) -> None:
    client = _client(args)
    _print(client.pack(_cid(client, args), args.id, json.loads(args.payload)))


# -- fs ------------------------------------------------------------------------------


def _driver(args):
    from .fs import LocalStorageDriver

    if not args.fs_root:
        raise SystemExit("pass --fs-root for file content transfers")
    return LocalStorageDriver(args.fs_root)


def cmd_fs_upload(args) -> None:
    with open(args.file, "rb") as fh:
        data = fh.read()
    from .crypto import checksum_bytes

    client = _client(args)
    storage_ref = _driver(args).put(data)
    meta = client.add_file({
        "colonyid": _cid(client, args), "label": args.label,
        "name": args.name or os.path.basename(args.file),
        "checksum": checksum_bytes(data), "size": len(data),
        "storageref": storage_ref,
    })
    _print(meta.to_obj())


def cmd_fs_download(args) -> None:
    client = _client(args)
    metas = client.get_files(_cid(client, args), args.label, name=args.name)
    if not metas:
        raise SystemExit(f"no file {args.label}/{args.name}")
    meta = metas[-1]  # revisions come oldest-first
    data = _driver(args).get(meta.storage_ref)
    out = args.out or meta.name
    with open(out, "wb") as fh:
        fh.write(data)
    _print({"written": out, "size": len(data), "revision": meta.revision})


def cmd_fs_ls(args) -> None:
    client = _client(args)
    _print([m.to_obj() for m in client.get_files(_cid(client, args), args.label)])


def cmd_fs_rm(args) -> None:
    client = _client(args)
    _print(client.remove_file(_cid(client, args), args.label, args.name))


def cmd_fs_snapshot_create(args) -> None:
    client = _client(args)
    _print(client.create_snapshot(_cid(client, args), args.label).to_obj())


def cmd_fs_snapshot_ls(args) -> None:
    client = _client(args)
    _print([s.to_obj() for s in client.get_snapshots(_cid(client, args))])


def cmd_fs_snapshot_rm(args) -> None:
    client = _client(args)
    client.remove_snapshot(_cid(client, args), args.id)
    _print({"ok": True})


# -- store -----------------------------------------------------------------------------


def cmd_store_dump(args) -> None:
    from .store import Store

    store = Store(args.db)
    sys.stdout.write(store.dump() + "\n")
    store.close()


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colony", description="Broker CLI: colonies, executors, processes, "
        "workflows, triggers and the meta filesystem.")
    parser.add_argument("--server", help="broker URL (or COLONY_SERVER)")
    parser.add_argument("--keyfile", help="signing key file (or COLONY_KEYFILE)")
    sub = parser.add_subparsers(dest="command", required=True)

    keys = sub.add_parser("keys", help="key and identity management").add_subparsers(
        dest="sub", required=True)
    p = keys.add_parser("generate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_keys_generate)
    p = keys.add_parser("identity")
    p.add_argument("--keyfile", required=True)
    p.set_defaults(func=cmd_keys_identity)
    p = keys.add_parser("sign")
    p.add_argument("--keyfile", required=True)
    p.add_argument("--message", required=True)
    p.set_defaults(func=cmd_keys_sign)
    p = keys.add_parser("recover")
    p.add_argument("--message", required=True)
    p.add_argument("--signature", required=True)
    p.set_defaults(func=cmd_keys_recover)

    server = sub.add_parser("server", help="run or inspect a server").add_subparsers(
        dest="sub", required=True)
    p = server.add_parser("start")
    p.add_argument("--config")
    p.add_argument("--keyfile", help="server owner key file")
    p.add_argument("--name", default="server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=50080)
    p.add_argument("--db", default="colony.db")
    p.add_argument("--fs-root")
    p.add_argument("--peer", action="append", metavar="NAME=URL")
    p.set_defaults(func=cmd_server_start)
    p = server.add_parser("health")
    p.set_defaults(func=cmd_server_health)

    colony = sub.add_parser("colony", help="manage colonies").add_subparsers(
        dest="sub", required=True)
    p = colony.add_parser("add")
    p.add_argument("--name", required=True)
    p.add_argument("--colony-id")
    p.add_argument("--colony-keyfile")
    p.set_defaults(func=cmd_colony_add)
    p = colony.add_parser("ls")
    p.set_defaults(func=cmd_colony_ls)

    executor = sub.add_parser("executor", help="manage executors").add_subparsers(
        dest="sub", required=True)
    p = executor.add_parser("add")
    p.add_argument("--colony", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--type", default="cli")
    p.add_argument("--executor-id")
    p.add_argument("--executor-keyfile")
    p.add_argument("--approve", action="store_true",
                   help="approve right away (colony owner key required)")
    p.set_defaults(func=cmd_executor_add)
    for verb, fn in (("approve", cmd_executor_approve), ("remove", cmd_executor_remove)):
        p = executor.add_parser(verb)
        p.add_argument("--colony", required=True)
        p.add_argument("--name", required=True)
        p.set_defaults(func=fn)
    p = executor.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.set_defaults(func=cmd_executor_ls)

    function = sub.add_parser("function", help="announce executor functions"
                              ).add_subparsers(dest="sub", required=True)
    p = function.add_parser("add")
    p.add_argument("--colony", required=True)
    p.add_argument("--executor-name", required=True)
    p.add_argument("--funcname", required=True)
    p.set_defaults(func=cmd_function_add)

    p = sub.add_parser("submit", help="submit a function spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--follow", action="store_true")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_submit)

    workflow = sub.add_parser("workflow", help="submit or inspect workflows"
                              ).add_subparsers(dest="sub", required=True)
    p = workflow.add_parser("submit")
    p.add_argument("--colony", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--follow", action="store_true")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_workflow_submit)
    p = workflow.add_parser("get")
    p.add_argument("--colony", required=True)
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_workflow_get)

    process = sub.add_parser("process", help="inspect processes").add_subparsers(
        dest="sub", required=True)
    p = process.add_parser("get")
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_process_get)
    p = process.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.add_argument("--state")
    p.set_defaults(func=cmd_process_ls)

    p = sub.add_parser("stats", help="queue statistics")
    p.add_argument("--colony", required=True)
    p.set_defaults(func=cmd_stats)

    cron = sub.add_parser("cron", help="scheduled workflows").add_subparsers(
        dest="sub", required=True)
    p = cron.add_parser("add")
    p.add_argument("--colony", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--interval", type=int, default=0)
    p.add_argument("--expr", default="")
    p.add_argument("--workflow", required=True)
    p.set_defaults(func=cmd_cron_add)
    p = cron.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.set_defaults(func=cmd_cron_ls)

    generator = sub.add_parser("generator", help="pack-triggered workflows"
                               ).add_subparsers(dest="sub", required=True)
    p = generator.add_parser("add")
    p.add_argument("--colony", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--timeout", type=int, default=0)
    p.add_argument("--workflow", required=True)
    p.set_defaults(func=cmd_generator_add)
    p = generator.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.set_defaults(func=cmd_generator_ls)
    p = generator.add_parser("pack")
    p.add_argument("--colony", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--payload", required=True, help="JSON value")
    p.set_defaults(func=cmd_generator_pack)

    fs = sub.add_parser("fs", help="meta filesystem").add_subparsers(
        dest="sub", required=True)
    p = fs.add_parser("upload")
    p.add_argument("--colony", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--name")
    p.add_argument("--fs-root", required=True)
    p.set_defaults(func=cmd_fs_upload)
    p = fs.add_parser("download")
    p.add_argument("--colony", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--out")
    p.add_argument("--fs-root", required=True)
    p.set_defaults(func=cmd_fs_download)
    p = fs.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.add_argument("--label", required=True)
    p.set_defaults(func=cmd_fs_ls)
    p = fs.add_parser("rm")
    p.add_argument("--colony", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--name", required=True)
    p.set_defaults(func=cmd_fs_rm)
    snapshot = fs.add_parser("snapshot").add_subparsers(dest="subsub", required=True)
    p = snapshot.add_parser("create")
    p.add_argument("--colony", required=True)
    p.add_argument("--label", required=True)
    p.set_defaults(func=cmd_fs_snapshot_create)
    p = snapshot.add_parser("ls")
    p.add_argument("--colony", required=True)
    p.set_defaults(func=cmd_fs_snapshot_ls)
    p = snapshot.add_parser("rm")
    p.add_argument("--colony", required=True)
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_fs_snapshot_rm)

    store = sub.add_parser("store", help="store maintenance").add_subparsers(
        dest="sub", required=True)
    p = store.add_parser("dump")
    p.add_argument("--db", required=True)
    p.set_defaults(func=cmd_store_dump)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except BrokerError as exc:
        print(json.dumps(exc.to_obj()), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
