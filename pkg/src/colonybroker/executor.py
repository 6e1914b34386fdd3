"""Reference executor: the pull loop made runnable.

The whole contract an executor must honor fits in one loop: ask for
work (and hang until there is some), run the named function, close with
the output, repeat. Everything else — retries, deadlines, restarts — is
the broker's problem; an executor that dies mid-process simply never
closes it and the reaper requeues the work.

Ships a small registry of built-in functions sufficient for demos and
end-to-end tests. Shell execution exists but stays disabled unless
explicitly allowed, since an executor runs whatever a colony member
submits.
"""

from __future__ import annotations

import argparse
import shlex
import subprocess
import sys
import time

from . import fs as fslib
from .client import ColonyClient
from .crypto import generate_keypair, identity_of, read_key_file, write_key_file
from .errors import BrokerError, Deny, NotFound, UnknownSnapshot


class FuncContext:
    def __init__(self, process, runtime=None):
        self.process = process
        self.args = list(process.spec.args)
        self.kwargs = dict(process.spec.kwargs)
        self.input = list(process.input)
        self.runtime = runtime

    def values(self) -> list:
        """Upstream output if any arrived, the spec args otherwise."""
        return self.input if self.input else self.args


def fn_helloworld(ctx: FuncContext) -> list:
    return ["hello world"]


def fn_echo(ctx: FuncContext) -> list:
    return ctx.values()


def fn_gen_nums(ctx: FuncContext) -> list:
    return ctx.values() or [2, 3]


def fn_square(ctx: FuncContext) -> list:
    return [v * v for v in ctx.values()]


def fn_sum(ctx: FuncContext) -> list:
    return [sum(ctx.values())]


def fn_sleep(ctx: FuncContext) -> list:
    seconds = float(ctx.args[0]) if ctx.args else 1.0
    time.sleep(seconds)
    return [seconds]


def fn_fail(ctx: FuncContext) -> list:
    raise RuntimeError(str(ctx.args[0]) if ctx.args else "deliberate failure")


def fn_execute(ctx: FuncContext) -> list:
    # gated: only runs when the executor was started with allow_exec
    if ctx.runtime is None or not ctx.runtime.allow_exec:
        raise PermissionError("shell execution is disabled on this executor")
    cmd = ctx.args[0] if len(ctx.args) == 1 else " ".join(str(a) for a in ctx.args)
    result = subprocess.run(shlex.split(str(cmd)), capture_output=True, text=True,
                            timeout=float(ctx.kwargs.get("timeout", 60)))
    if result.returncode != 0:
        raise RuntimeError(f"exit {result.returncode}: {result.stderr.strip()}")
    return [result.stdout.rstrip("\n")]


BUILTINS = {
    "helloworld": fn_helloworld,
    "echo": fn_echo,
    "gen_nums": fn_gen_nums,
    "square": fn_square,
    "sum": fn_sum,
    "sleep": fn_sleep,
    "fail": fn_fail,
    "execute": fn_execute,
}


class ApiFsFacade:
    """FsCatalog surface backed by API calls plus a storage driver, for
    executors that only hold a client connection."""

    def __init__(self, client: ColonyClient, colony_id: str, driver):
        self.client = client
        self.colony_id = colony_id
        self.driver = driver

    def get_snapshot(self, snapshot_id: str):
        try:
            return self.client.get_snapshot(self.colony_id, snapshot_id)
        except NotFound:
            return None

    def snapshot_files(self, snapshot_id: str) -> list:
        snap = self.get_snapshot(snapshot_id)
        if snap is None:
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        return [self.client.get_file(self.colony_id, file_id)
                for file_id, _rev in snap.files]

    def download(self, meta) -> bytes:
        return self.driver.get(meta.storage_ref)

    def upload(self, colony_id: str, label: str, name: str, data: bytes):
        storage_ref = self.driver.put(data)
        return self.client.add_file({
            "colonyid": colony_id, "label": label, "name": name,
            "checksum": fslib.checksum_bytes(data), "size": len(data),
            "storageref": storage_ref,
        })

    def remove_file(self, colony_id: str, label: str, name: str):
        return self.client.remove_file(colony_id, label, name)

    def remove_snapshot(self, snapshot_id: str) -> None:
        self.client.remove_snapshot(self.colony_id, snapshot_id)


class ExecutorRuntime:
    def __init__(self, client: ColonyClient, colony_id: str, name: str,
                 executor_type: str = "cli", functions: dict | None = None,
                 workdir: str | None = None, catalog=None, allow_exec: bool = False):
        self.client = client
        self.colony_id = colony_id
        self.name = name
        self.executor_type = executor_type
        self.functions = dict(BUILTINS)
        if functions:
            self.functions.update(functions)
        self.workdir = workdir
        self.catalog = catalog
        self.allow_exec = allow_exec
        self.executor_id = identity_of(client.private_key)
        self.processed = 0

    def register(self, announce_functions: bool = True) -> None:
        try:
            self.client.add_executor(
                self.executor_id, self.name, self.executor_type, self.colony_id)
        except BrokerError as exc:
            if exc.code != "duplicate-id":
                raise
        if announce_functions:
            try:
                for func_name in sorted(self.functions):
                    self.client.add_function(self.colony_id, self.name, func_name)
            except Deny:
                pass  # not approved yet; the owner can approve and re-announce

    def run_process(self, process) -> None:
        """Execute one assigned process and close it."""
        func = self.functions.get(process.spec.func_name)
        try:
            if func is None:
                raise LookupError(f"unknown function {process.spec.func_name!r}")
            if self.catalog is not None and self.workdir and process.spec.fs:
                fslib.sync_before_exec(self.catalog, process, self.workdir)
            output = func(FuncContext(process, runtime=self))
            if not isinstance(output, list):
                output = [output]
            if self.catalog is not None and self.workdir and process.spec.fs:
                fslib.sync_after_exec(self.catalog, process, self.workdir)
                fslib.cleanup_after_exec(self.catalog, process)
            self.client.close(process.process_id, True, output)
        except BrokerError:
            raise  # closing failed; nothing an executor can do
        except Exception as exc:
            try:
                self.client.close(process.process_id, False, [],
                                  errors=[f"{type(exc).__name__}: {exc}"])
            except BrokerError:
                pass

    def step(self, timeout_s: float = 10.0) -> bool:
        """One assign/execute/close round. False if the poll timed out."""
        process = self.client.assign(self.colony_id, timeout_s)
        if process is None:
            return False
        self.run_process(process)
        self.processed += 1
        return True

    def run_forever(self, poll_timeout_s: float = 10.0, max_iterations: int = 0,
                    stop=None) -> int:
        iterations = 0
        while not (stop is not None and stop.is_set()):
            try:
                self.step(poll_timeout_s)
            except BrokerError as exc:
                print(f"executor {self.name}: {exc.code}: {exc.message}",
                      file=sys.stderr)
                time.sleep(0.5)
            iterations += 1
            if max_iterations and iterations >= max_iterations:
                break
        return self.processed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="colony-executor",
        description="Pull-based executor: claims processes from a broker and runs them.")
    parser.add_argument("--server", required=True, help="broker URL, e.g. http://host:50080")
    parser.add_argument("--colony", required=True,
                        help="colony id, or its name if this executor is already enrolled")
    parser.add_argument("--name", required=True, help="executor name, unique per colony")
    parser.add_argument("--type", default="cli", help="executor type tag (default: cli)")
    parser.add_argument("--keyfile", help="private key file; generated if absent")
    parser.add_argument("--workdir", help="working directory for fs mounts")
    parser.add_argument("--fs-root", help="local storage root for file transfers")
    parser.add_argument("--allow-exec", action="store_true",
                        help="enable the execute (shell) function")
    parser.add_argument("--poll-timeout", type=float, default=10.0)
    parser.add_argument("--max-iterations", type=int, default=0,
                        help="stop after N polls (0 = run forever)")
    args = parser.parse_args(argv)

    if args.keyfile:
        try:
            key = read_key_file(args.keyfile)
        except FileNotFoundError:
            key, _ = generate_keypair()
            write_key_file(args.keyfile, key)
    else:
        key, _ = generate_keypair()

    client = ColonyClient(args.server, key, retries=5)
    # a name only resolves once this executor is enrolled; ids always work
    colony_id = client.resolve_colony(args.colony)
    catalog = None
    if args.fs_root:
        from .fs import LocalStorageDriver
        catalog = ApiFsFacade(client, colony_id, LocalStorageDriver(args.fs_root))
    runtime = ExecutorRuntime(
        client, colony_id, args.name, executor_type=args.type,
        workdir=args.workdir, catalog=catalog, allow_exec=args.allow_exec)
    runtime.register()
    print(f"executor {args.name} ({runtime.executor_id[:12]}…) polling {args.server}")
    try:
        runtime.run_forever(args.poll_timeout, max_iterations=args.max_iterations)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
