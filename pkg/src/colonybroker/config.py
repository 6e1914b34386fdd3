"""Server configuration: a small dataclass loadable from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import InvalidSpec


@dataclass
class ServerConfig:
    name: str = "server"
    host: str = "127.0.0.1"
    port: int = 50080
    db_path: str = ":memory:"
    private_key: str = ""      # hex; wins over keyfile
    keyfile: str = ""
    fs_root: str = ""          # local storage root; empty = in-memory object stub
    peers: list = field(default_factory=list)  # [{"name": ..., "url": ...}]
    scan_interval_s: float = 1.0
    replay_window_s: int = 300

    def peer_names(self) -> list:
        return [p["name"] for p in self.peers]

    def peer_url(self, name: str) -> str | None:
        for p in self.peers:
            if p["name"] == name:
                return p["url"]
        return None

    @classmethod
    def from_obj(cls, obj: dict) -> "ServerConfig":
        if not isinstance(obj, dict):
            raise InvalidSpec("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise InvalidSpec(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = cls(**obj)
        for peer in cfg.peers:
            if not isinstance(peer, dict) or set(peer) != {"name", "url"}:
                raise InvalidSpec("each peer needs exactly name and url")
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ServerConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_obj(json.load(fh))
