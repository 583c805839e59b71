"""Resource server: token and sender-proof validation with risk-gated scopes."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from radaa.authserver import AuthorizationServer
from radaa.context import Evidence
from radaa.engine import Action, Stage, is_elevated
from radaa.tokens import (
    ProofError,
    ReplayCache,
    SealError,
    TokenClaims,
    TokenError,
    b64url_decode,
    unseal_claims,
    verify_sender_proof,
    verify_token,
)


class Outcome(enum.Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"


@dataclass(frozen=True)
class ResourceDescriptor:
    path: str
    required_scope: str
    payload: bytes = b""

    def __post_init__(self):
        if not self.required_scope:
            raise ValueError("required_scope must be non-empty")

    @property
    def elevated(self) -> bool:
        return is_elevated(self.required_scope)


@dataclass(frozen=True)
class AccessDecision:
    outcome: Outcome
    status: int
    reason: str = ""
    effective_scopes: frozenset[str] = field(default_factory=frozenset)
    payload: Optional[bytes] = None
    detail: str = ""

    @property
    def allowed(self) -> bool:
        return self.outcome is Outcome.ALLOW


class ResourceServer:
    def __init__(self, rs_id: str, base_url: str, auth_server: AuthorizationServer,
                 resources: Iterable[ResourceDescriptor] = (), sealing_key: Optional[bytes] = None,
                 clock: Callable[[], float] = time.time, faults: Iterable[str] = ()):
        self.rs_id = rs_id
        self.base_url = base_url.rstrip("/")
        self.auth_server = auth_server
        self.engine = auth_server.engine
        self.signals = auth_server.signals
        self.audit = auth_server.audit
        self.resources = {r.path: r for r in resources}
        self.sealing_key = sealing_key
        self.clock = clock
        self.faults = frozenset(faults)
        self.replay = ReplayCache()

    def now(self) -> int:
        return int(self.clock())

    def resource_uri(self, path: str) -> str:
        return f"{self.base_url}/resource/{path.lstrip('/')}"

    def _unwrap(self, presented: str) -> str:
        if presented.count(".") == 2 or self.sealing_key is None:
            return presented
        try:
            return unseal_claims(b64url_decode(presented), self.sealing_key)
        except (SealError, TokenError, UnicodeDecodeError):
            return presented

    def _deny(self, status: int, reason: str, detail: str, actor: str, risk=None,
              effective: Iterable[str] = ()) -> AccessDecision:
        self._record(actor, reason, risk)
        return AccessDecision(Outcome.DENY, status, reason, frozenset(effective), detail=detail)

    def _record(self, actor: str, outcome: str, risk) -> None:
        self.audit.append({"ts": self.now(), "actor": actor, "action": f"resource:{self.rs_id}",
                           "risk": risk, "outcome": outcome})

    def access_resource(self, token_wire: Optional[str], proof: Optional[str], method: str, uri: str,
                        resource: ResourceDescriptor, evidence: Evidence = Evidence(),
                        scheme: Optional[str] = None) -> AccessDecision:
        if not token_wire:
            return self._deny(401, "invalid_token", "no access token presented", "anonymous")
        try:
            claims: TokenClaims = verify_token(self._unwrap(token_wire), self.auth_server.verification_keys)
        except TokenError as exc:
            return self._deny(401, "invalid_token", f"token rejected: {exc.code}", "anonymous")
        actor = claims.client_id
        if self.now() >= claims.exp:
            return self._deny(401, "invalid_token", "token expired", actor)
        if "audience-check" not in self.faults and claims.aud != self.rs_id:
            return self._deny(401, "invalid_token", "audience mismatch", actor)
        if self.auth_server.is_revoked(claims):
            return self._deny(401, "invalid_token", "token revoked", actor)
        if claims.cnf_thumbprint and "sender-proof" not in self.faults:
            if scheme is not None and scheme.lower() != "pop":
                return self._deny(401, "invalid_token", "sender-constrained token presented as bearer", actor)
            if not proof:
                return self._deny(401, "invalid_token", "sender proof required", actor)
            cache = None if "replay-cache" in self.faults else self.replay
            try:
                verify_sender_proof(proof, method, uri, token_wire, claims.cnf_thumbprint, cache, self.now())
            except ProofError as exc:
                return self._deny(401, "invalid_token", exc.code, actor)
        ctx = self.signals.context(evidence, claims.sub, claims.client_id, claims.tal, self.now())
        assessment = self.engine.assess(ctx)
        risk = {"score": round(assessment.score, 6), "class": assessment.risk_class.name}
        decision = self.engine.decide(assessment, Stage.RESOURCE_ACCESS, claims.scope)
        if decision.action is Action.DENY_AND_REVOKE:
            self.auth_server.revoke(claims.jti, actor=f"rs:{self.rs_id}")
            return self._deny(403, "risk_denied", "high-risk request; token revoked", actor, risk)
        effective = set(claims.scope) - set(decision.stripped_scopes)
        if resource.required_scope not in claims.scope:
            return self._deny(403, "insufficient_scope", f"requires {resource.required_scope}", actor, risk,
                              effective)
        if resource.required_scope not in effective:
            return self._deny(403, "risk_denied", "scope withheld at current risk level", actor, risk,
                              effective)
        self._record(actor, "allow", risk)
        return AccessDecision(Outcome.ALLOW, 200, "", frozenset(effective), payload=resource.payload)
