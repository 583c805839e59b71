"""Deployment configuration: JSON file, validated, with defaults."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from radaa.engine.scoring import DEFAULT_THRESHOLDS, DEFAULT_WEIGHTS, Posture

ENV_VAR = "RADAA_CONFIG"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Lifetimes:
    tal0_access: int = 300
    tal1_access: int = 900
    refresh: int = 28800
    par: int = 60
    code: int = 60
    step_up: int = 300

    def access_for(self, tal: int) -> int:
        return self.tal1_access if tal >= 1 else self.tal0_access


@dataclass
class RiskConfig:
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    posture: str = "NORMAL"
    classifier: str = "rule"
    travel_speed_kmh: float = 1000.0
    tal_max: int = 1


@dataclass
class KnnConfig:
    k: int = 5
    capacity: int = 10000


@dataclass
class ResourceConfig:
    path: str
    required_scope: str
    payload: str = ""


@dataclass
class ResourceServerConfig:
    rs_id: str
    base_url: str
    scopes: list[str] = field(default_factory=list)
    resources: list[ResourceConfig] = field(default_factory=list)
    public_key_b64: Optional[str] = None
    sealing_key_b64: Optional[str] = None


@dataclass
class ClientConfig:
    client_id: str
    redirect_uris: list[str]
    scopes: list[str]
    display_name: str = ""
    public_key_b64: Optional[str] = None


@dataclass
class Config:
    issuer_id: str
    as_base_url: str = "https://as.radaa.test"
    as_listen: str = "127.0.0.1:8440"
    rs_listen: str = "127.0.0.1:8441"
    lifetimes: Lifetimes = field(default_factory=Lifetimes)
    risk: RiskConfig = field(default_factory=RiskConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    ip_reputation: dict[str, float] = field(default_factory=dict)
    nids_flagged: list[str] = field(default_factory=list)
    idps: dict[str, dict[str, dict[str, str]]] = field(default_factory=dict)
    clients: list[ClientConfig] = field(default_factory=list)
    resource_servers: list[ResourceServerConfig] = field(default_factory=list)
    known_devices: dict[str, list[str]] = field(default_factory=dict)
    rate_limits: dict[str, int] = field(default_factory=lambda: {"par_per_minute": 20})
    trust_forwarded_for: bool = True
    default_audience: Optional[str] = None
    audit_log: Optional[str] = None
    store_dir: Optional[str] = None
    signing_key_file: Optional[str] = None

    def validate(self) -> "Config":
        if not self.issuer_id:
            raise ConfigError("issuer_id", "must be non-empty")
        w = tuple(float(x) for x in self.risk.weights)
        if len(w) != 5 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError("weights", f"must be five non-negative values summing to 1.0, got {list(w)}")
        self.risk.weights = w
        t = tuple(float(x) for x in self.risk.thresholds)
        if len(t) != 2 or not 0.0 < t[0] < t[1] < 1.0:
            raise ConfigError("thresholds", f"must satisfy 0 < low < high < 1, got {list(t)}")
        self.risk.thresholds = t
        if self.risk.posture not in Posture.__members__:
            raise ConfigError("posture", f"unknown level {self.risk.posture!r}")
        if self.risk.classifier not in ("rule", "knn"):
            raise ConfigError("classifier", "must be 'rule' or 'knn'")
        if self.risk.tal_max < 1:
            raise ConfigError("tal_max", "must be at least 1")
        if self.knn.k < 1 or self.knn.k % 2 == 0:
            raise ConfigError("knn.k", "must be an odd positive integer")
        if self.knn.capacity < 1:
            raise ConfigError("knn.capacity", "must be positive")
        for name in ("tal0_access", "tal1_access", "refresh", "par", "code", "step_up"):
            if getattr(self.lifetimes, name) <= 0:
                raise ConfigError(f"lifetimes.{name}", "must be positive")
        for ip, rep in self.ip_reputation.items():
            if not 0.0 <= float(rep) <= 1.0:
                raise ConfigError("ip_reputation", f"{ip} reputation {rep} outside [0, 1]")
        if self.rate_limits.get("par_per_minute", 1) < 1:
            raise ConfigError("rate_limits", "par_per_minute must be positive")
        rs_ids = [rs.rs_id for rs in self.resource_servers]
        if self.default_audience is not None and self.default_audience not in rs_ids:
            raise ConfigError("default_audience", f"{self.default_audience!r} is not a resource server")
        return self

    @property
    def posture(self) -> Posture:
        return Posture[self.risk.posture]

    @property
    def audience(self) -> Optional[str]:
        if self.default_audience:
            return self.default_audience
        return self.resource_servers[0].rs_id if self.resource_servers else None

    def to_json(self) -> dict:
        return asdict(self)


def _build(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(where, "expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}" if where else sorted(unknown)[0], "unknown field")
    nested = {
        "lifetimes": Lifetimes, "risk": RiskConfig, "knn": KnnConfig,
    }
    kwargs = {}
    for name, value in doc.items():
        path = f"{where}.{name}" if where else name
        if name in nested and cls is Config:
            kwargs[name] = _build(nested[name], value, path)
        elif cls is Config and name == "clients":
            kwargs[name] = [_build(ClientConfig, c, f"{path}[{i}]") for i, c in enumerate(value)]
        elif cls is Config and name == "resource_servers":
            kwargs[name] = [_build(ResourceServerConfig, c, f"{path}[{i}]") for i, c in enumerate(value)]
        elif cls is ResourceServerConfig and name == "resources":
            kwargs[name] = [_build(ResourceConfig, c, f"{path}[{i}]") for i, c in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(where or "config", str(exc)) from None


def config_from_dict(doc: dict) -> Config:
    return _build(Config, doc, "").validate()


def load_config(path: "str | Path | None" = None) -> Config:
    path = path or os.environ.get(ENV_VAR)
    if not path:
        raise ConfigError("config", f"no path given and {ENV_VAR} unset")
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)
