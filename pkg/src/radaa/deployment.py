"""Assembles an in-process deployment: one authorization server, its
resource servers, a shared adaptive engine and shared stores."""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Callable, Iterable, Optional

from radaa.authserver import AudienceRecord, AuthorizationServer
from radaa.config import Config
from radaa.context import Signals
from radaa.engine import AdaptiveEngine
from radaa.federation import Federation
from radaa.resource import ResourceDescriptor, ResourceServer
from radaa.store import AuditLog, Store
from radaa.tokens import KeyPair, b64url_decode

FAULTS = frozenset({
    "pkce", "iss-check", "sender-proof", "replay-cache", "audience-check", "rate-limit", "csp-header", "binding",
})


class ManualClock:
    """Deterministic clock for simulations and tests."""

    def __init__(self, start: float = 1_700_000_000):
        self.t = float(start)

    def __call__(self) -> float:
        return self.t

    def advance(self, seconds: float) -> float:
        self.t += seconds
        return self.t


class Deployment:
    def __init__(self, config: Config, faults: Iterable[str] = (), clock: Optional[Callable[[], float]] = None,
                 store: Optional[Store] = None, audit: Optional[AuditLog] = None,
                 signing_key: Optional[KeyPair] = None):
        faults = frozenset(faults)
        unknown = faults - FAULTS
        if unknown:
            raise ValueError(f"unknown fault(s): {sorted(unknown)}")
        self.config = config
        self.faults = faults
        self.clock = clock or time.time
        self.store = store if store is not None else Store(config.store_dir)
        self.audit = audit if audit is not None else AuditLog(config.audit_log)
        if signing_key is None and config.signing_key_file:
            signing_key = KeyPair.from_json(json.loads(Path(config.signing_key_file).read_text()))
        self.engine = AdaptiveEngine.from_config(config, self.store)
        self.signals = Signals(self.store, config.ip_reputation, config.nids_flagged, config.known_devices)
        self.federation = Federation.from_config(config.idps)
        self.auth_server = AuthorizationServer(
            config, self.store, self.engine, self.signals, self.audit, self.federation,
            signing_key=signing_key, clock=self.clock, faults=faults,
        )
        self.rs_keys: dict[str, KeyPair] = {}
        self.resource_servers: dict[str, ResourceServer] = {}
        for rs_cfg in config.resource_servers:
            key = KeyPair.generate(f"{rs_cfg.rs_id}-key")
            sealing = b64url_decode(rs_cfg.sealing_key_b64) if rs_cfg.sealing_key_b64 else None
            self.rs_keys[rs_cfg.rs_id] = key
            self.auth_server.register_audience(AudienceRecord(
                rs_cfg.rs_id, rs_cfg.base_url, tuple(rs_cfg.scopes), key.public_key, sealing))
            resources = [ResourceDescriptor(r.path, r.required_scope, r.payload.encode()) for r in rs_cfg.resources]
            self.resource_servers[rs_cfg.rs_id] = ResourceServer(
                rs_cfg.rs_id, rs_cfg.base_url, self.auth_server, resources, sealing, self.clock, faults)
        for seed in config.clients:
            if self.store.get("clients", seed.client_id) is None:
                self.auth_server.provision_client(seed)

    def as_app(self):
        from radaa.http import create_as_app

        return create_as_app(self.auth_server, self.faults)

    def rs_app(self, rs_id: str):
        from radaa.http import create_rs_app

        return create_rs_app(self.resource_servers[rs_id], self.faults)

    def apps(self) -> dict[str, object]:
        """Map of base URL to ASGI app, for routing in-process HTTP traffic."""
        out = {self.auth_server.base_url: self.as_app()}
        for rs in self.resource_servers.values():
            out[rs.base_url] = self.rs_app(rs.rs_id)
        return out
