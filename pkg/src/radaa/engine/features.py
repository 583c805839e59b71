"""Per-transaction risk evidence and its normalized feature vector."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from radaa.engine.geo import Geo, check_geo, haversine_km

IMPOSSIBLE_SPEED_KMH = 1000.0
TAL_MAX = 1

FEATURE_NAMES = ("ip_reputation", "impossible_travel", "unknown_device", "nids_malicious", "trust_deficit")


@dataclass(frozen=True)
class TransactionContext:
    subject: str
    client_id: str
    ip: str = "0.0.0.0"
    ip_reputation: float = 0.0
    geo: Optional[Geo] = None
    timestamp: int = 0
    device_id: str = ""
    device_known: bool = True
    nids_malicious: bool = False
    tal: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ip_reputation <= 1.0:
            raise ValueError("ip_reputation must lie in [0, 1]")
        if self.geo is not None:
            object.__setattr__(self, "geo", (float(self.geo[0]), float(self.geo[1])))
            check_geo(self.geo)

    @classmethod
    def from_json(cls, doc: dict) -> "TransactionContext":
        fields = dict(doc)
        if fields.get("geo") is not None:
            fields["geo"] = tuple(fields["geo"])
        return cls(**fields)


@dataclass(frozen=True)
class FeatureVector:
    ip_reputation: float
    impossible_travel: float
    unknown_device: float
    nids_malicious: float
    trust_deficit: float

    def __post_init__(self):
        for name in FEATURE_NAMES:
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"feature {name}={value} outside [0, 1]")
            object.__setattr__(self, name, value)

    def __iter__(self) -> Iterator[float]:
        return (getattr(self, name) for name in FEATURE_NAMES)

    def __len__(self) -> int:
        return len(FEATURE_NAMES)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(self)

    @classmethod
    def of(cls, values) -> "FeatureVector":
        values = list(values)
        if len(values) != len(FEATURE_NAMES):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {len(values)}")
        return cls(*values)


def is_impossible_travel(last_seen: Optional[tuple[Geo, int]], geo: Optional[Geo], timestamp: int,
                         max_speed_kmh: float = IMPOSSIBLE_SPEED_KMH) -> bool:
    if last_seen is None or geo is None:
        return False
    prev_geo, prev_ts = last_seen
    distance = haversine_km(prev_geo, geo)
    dt = timestamp - prev_ts
    if dt <= 0:
        return distance > 0
    return distance / (dt / 3600.0) > max_speed_kmh


def extract_features(ctx: TransactionContext, last_seen: Optional[tuple[Geo, int]] = None,
                     max_speed_kmh: float = IMPOSSIBLE_SPEED_KMH, tal_max: int = TAL_MAX) -> FeatureVector:
    if last_seen is not None and last_seen[1] > ctx.timestamp:
        raise ValueError("last_seen is later than the transaction")
    deficit = 1.0 - min(max(ctx.tal, 0), tal_max) / tal_max
    return FeatureVector(
        ip_reputation=ctx.ip_reputation,
        impossible_travel=1.0 if is_impossible_travel(last_seen, ctx.geo, ctx.timestamp, max_speed_kmh) else 0.0,
        unknown_device=0.0 if ctx.device_known else 1.0,
        nids_malicious=1.0 if ctx.nids_malicious else 0.0,
        trust_deficit=deficit,
    )
