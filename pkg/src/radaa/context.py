"""Turns what the transport observed about a request into a TransactionContext."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from radaa.engine.features import TransactionContext
from radaa.engine.geo import Geo
from radaa.store import Store


@dataclass(frozen=True)
class Evidence:
    ip: str = "127.0.0.1"
    device_id: str = ""
    geo: Optional[Geo] = None

    @classmethod
    def from_headers(cls, headers, peer: str | None, trust_forwarded: bool = True) -> "Evidence":
        ip = peer or "0.0.0.0"
        forwarded = headers.get("x-forwarded-for")
        if trust_forwarded and forwarded:
            ip = forwarded.split(",")[0].strip()
        geo = None
        raw = headers.get("x-geo")
        if raw:
            try:
                lat, lon = (float(x) for x in raw.split(","))
                geo = (lat, lon)
            except ValueError:
                geo = None
        return cls(ip=ip, device_id=headers.get("x-device-id", ""), geo=geo)


class Signals:
    """Deployment-wide risk inputs: IP reputation table, NIDS feed, device registry."""

    def __init__(self, store: Store, ip_reputation: dict[str, float] | None = None,
                 nids_flagged=(), known_devices: dict[str, list[str]] | None = None):
        self.store = store
        self.ip_reputation = dict(ip_reputation or {})
        self.nids_flagged = set(nids_flagged)
        self.flagged_clients: set[str] = set()
        self._lock = threading.Lock()
        for subject, devices in (known_devices or {}).items():
            for device in devices:
                self.remember_device(subject, device)

    def remember_device(self, subject: str, device_id: str) -> None:
        if not device_id:
            return
        with self._lock:
            devices = self.store.get("devices", subject, [])
            if device_id not in devices:
                self.store.put("devices", subject, devices + [device_id])

    def device_known(self, subject: str, device_id: str) -> bool:
        return bool(device_id) and device_id in self.store.get("devices", subject, [])

    def flag_client(self, client_id: str) -> bool:
        with self._lock:
            fresh = client_id not in self.flagged_clients
            self.flagged_clients.add(client_id)
            return fresh

    def context(self, evidence: Evidence, subject: str, client_id: str, tal: int,
                timestamp: int) -> TransactionContext:
        return TransactionContext(
            subject=subject,
            client_id=client_id,
            ip=evidence.ip,
            ip_reputation=float(self.ip_reputation.get(evidence.ip, 0.0)),
            geo=evidence.geo,
            timestamp=timestamp,
            device_id=evidence.device_id,
            device_known=self.device_known(subject, evidence.device_id),
            nids_malicious=evidence.ip in self.nids_flagged or client_id in self.flagged_clients,
            tal=tal,
        )
