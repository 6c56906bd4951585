"""Service configuration: flat key=value text file plus CLI/env overrides.

Node inventory syntax: ``nodes=id:cpus:mem_mb[,id:cpus:mem_mb...]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .nodes import NodeDescriptor

ENV_CONFIG = "PUBLICMC_CONFIG"

DEFAULT_NODES = (NodeDescriptor("n1", 4, 1024), NodeDescriptor("n2", 4, 1024))


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    listen_address: str = "127.0.0.1:8080"
    session_ttl_s: int = 1800
    heartbeat_interval_s: float = 5.0
    w_wait: float = 1.0
    w_size: float = 0.0
    tick_period_s: float = 1.0
    whitelist_path: str = ""
    data_dir: str = "data"
    nodes: tuple[NodeDescriptor, ...] = field(default_factory=lambda: DEFAULT_NODES)

    def validate(self) -> None:
        for name in ("session_ttl_s", "heartbeat_interval_s", "tick_period_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.nodes:
            raise ConfigError("node inventory must not be empty")
        seen = set()
        for node in self.nodes:
            if node.node_id in seen:
                raise ConfigError(f"duplicate node id {node.node_id!r}")
            seen.add(node.node_id)
            if node.cpus_capacity < 1 or node.mem_mb_capacity < 1:
                raise ConfigError(
                    f"node {node.node_id!r} capacities must be >= 1")

    @property
    def host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        try:
            return int(self.listen_address.rsplit(":", 1)[1])
        except (IndexError, ValueError):
            raise ConfigError(
                f"listen_address {self.listen_address!r} needs host:port") \
                from None


def _parse_nodes(value: str) -> tuple[NodeDescriptor, ...]:
    nodes = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"node entry {part!r} must be id:cpus:mem_mb")
        try:
            nodes.append(NodeDescriptor(pieces[0], int(pieces[1]),
                                        int(pieces[2])))
        except ValueError:
            raise ConfigError(f"node entry {part!r} has non-integer "
                              "capacities") from None
    return tuple(nodes)


def parse_config(text: str) -> ServiceConfig:
    cfg = ServiceConfig()
    types = {f.name: f.type for f in fields(ServiceConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "nodes":
            cfg.nodes = _parse_nodes(value)
            continue
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                setattr(cfg, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(cfg, key, int(value))
            elif isinstance(current, float):
                setattr(cfg, key, float(value))
            else:
                setattr(cfg, key, value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}") \
                from None
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None,
                data_dir: str | None = None) -> ServiceConfig:
    """Resolve config from an explicit path, then $PUBLICMC_CONFIG, then
    defaults; --data-dir style override wins over the file."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    else:
        cfg = ServiceConfig()
    if data_dir is not None:
        cfg.data_dir = data_dir
    cfg.validate()
    return cfg
