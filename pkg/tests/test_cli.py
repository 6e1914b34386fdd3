"""CLI: key management, signing interop with frozen vectors, store dump."""

import json
import subprocess
import sys

import pytest

from colonybroker.crypto import write_key_file

from conftest import load_vectors


def run_cli(*argv, expect_rc=0):
    proc = subprocess.run([sys.executable, "-m", "colonybroker.cli", *argv],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == expect_rc, proc.stderr
    return proc


def run_json(*argv):
    return json.loads(run_cli(*argv).stdout)


def test_keys_generate_inline():
    out = run_json("keys", "generate")
    assert len(out["identity"]) == 64
    assert len(out["privatekey"]) == 64


def test_keys_generate_to_file_and_identity(tmp_path):
    keyfile = str(tmp_path / "id.key")
    out = run_json("keys", "generate", "--out", keyfile)
    assert out["keyfile"] == keyfile
    same = run_json("keys", "identity", "--keyfile", keyfile)
    assert same["identity"] == out["identity"]


def test_keys_sign_recover_roundtrip(tmp_path):
    keyfile = str(tmp_path / "id.key")
    created = run_json("keys", "generate", "--out", keyfile)
    signed = run_json("keys", "sign", "--keyfile", keyfile, "--message", "hello")
    recovered = run_json("keys", "recover", "--message", "hello",
                         "--signature", signed["signature"])
    assert recovered["identity"] == created["identity"]


def test_keys_sign_matches_frozen_vectors(tmp_path):
    """The CLI must produce the exact envelope signatures in the frozen
    interop fixtures."""
    for vector in load_vectors("envelope_vectors.json")[:3]:
        keyfile = str(tmp_path / "v.key")
        write_key_file(keyfile, vector["privatekey"])
        signed = run_json("keys", "sign", "--keyfile", keyfile,
                          "--message", vector["payload_b64"])
        assert signed["signature"] == vector["signature"]

        recovered = run_json("keys", "recover", "--message", vector["payload_b64"],
                             "--signature", vector["signature"])
        assert recovered["identity"] == vector["identity"]


def test_store_dump_is_canonical_json(tmp_path):
    db = str(tmp_path / "fresh.db")
    proc = run_cli("store", "dump", "--db", db)
    dump = json.loads(proc.stdout)
    assert "tables" in dump
    assert "processes" in dump["tables"]


def test_missing_keyfile_is_a_clear_error(tmp_path, monkeypatch):
    proc = subprocess.run(
        [sys.executable, "-m", "colonybroker.cli", "colony", "ls"],
        capture_output=True, text=True, timeout=60,
        env={"PATH": "/usr/bin:/bin", "COLONY_SERVER": "http://127.0.0.1:1"})
    assert proc.returncode != 0
    assert "keyfile" in proc.stderr.lower() or "key" in proc.stderr.lower()


def test_help_lists_subcommands():
    proc = run_cli("--help")
    for name in ("keys", "server", "colony", "executor", "workflow", "fs"):
        assert name in proc.stdout


def test_bad_signature_arg_fails():
    run_cli("keys", "recover", "--message", "m", "--signature", "zz",
            expect_rc=1)
