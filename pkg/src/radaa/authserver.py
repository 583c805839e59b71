"""Authorization server: client registry, PAR, federated owner login,
risk-gated issuance, refresh rotation, revocation, introspection, step-up
and cross-audience token exchange.

All single-use records (PAR, codes, step-up challenges, refresh tokens)
are consumed with a versioned check-and-set so concurrent double spends
admit at most one winner.
"""
from __future__ import annotations

import logging
import re
import secrets
import threading
import time
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence
from urllib.parse import urlsplit

from radaa.config import ClientConfig, Config, Lifetimes
from radaa.context import Evidence, Signals
from radaa.engine import AdaptiveEngine, Action, RiskAssessment, Stage, is_elevated
from radaa.errors import OAuthError
from radaa.federation import Federation, FederationError
from radaa.store import ABSENT, AuditLog, Store, StoreConflict
from radaa.tokens import (
    KeyPair,
    PkceChallenge,
    PkceError,
    ProofError,
    SenderProof,
    TokenClaims,
    TokenError,
    b64url_decode,
    b64url_encode,
    derive_thumbprint,
    ed25519_verify,
    random_id,
    ReplayCache,
    seal_claims,
    sign_token,
    verify_pkce,
    verify_sender_proof,
    verify_token,
)

log = logging.getLogger(__name__)

REQUEST_URI_PREFIX = "urn:radaa:request:"
_UNSAFE = re.compile(r"[<>\"'`\\]|javascript:", re.IGNORECASE)


@dataclass(frozen=True)
class ClientRecord:
    client_id: str
    display_name: str
    registered_redirect_uris: tuple[str, ...]
    registered_scopes: tuple[str, ...]
    public_key: Optional[bytes] = None
    tal: int = 0
    sealing_key: Optional[bytes] = None

    @property
    def thumbprint(self) -> Optional[str]:
        return derive_thumbprint(self.public_key) if self.public_key else None

    def to_json(self) -> dict:
        return {
            "client_id": self.client_id,
            "display_name": self.display_name,
            "registered_redirect_uris": list(self.registered_redirect_uris),
            "registered_scopes": list(self.registered_scopes),
            "public_key": b64url_encode(self.public_key) if self.public_key else None,
            "tal": self.tal,
            "sealing_key": b64url_encode(self.sealing_key) if self.sealing_key else None,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ClientRecord":
        return cls(
            client_id=doc["client_id"],
            display_name=doc["display_name"],
            registered_redirect_uris=tuple(doc["registered_redirect_uris"]),
            registered_scopes=tuple(doc["registered_scopes"]),
            public_key=b64url_decode(doc["public_key"]) if doc.get("public_key") else None,
            tal=doc["tal"],
            sealing_key=b64url_decode(doc["sealing_key"]) if doc.get("sealing_key") else None,
        )


@dataclass(frozen=True)
class AudienceRecord:
    """A registered resource server: token audience and introspection caller."""

    aud_id: str
    base_url: str
    scopes: tuple[str, ...]
    public_key: Optional[bytes] = None
    sealing_key: Optional[bytes] = None

    def to_json(self) -> dict:
        return {
            "aud_id": self.aud_id, "base_url": self.base_url, "scopes": list(self.scopes),
            "public_key": b64url_encode(self.public_key) if self.public_key else None,
            "sealing_key": b64url_encode(self.sealing_key) if self.sealing_key else None,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "AudienceRecord":
        return cls(
            doc["aud_id"], doc["base_url"], tuple(doc["scopes"]),
            b64url_decode(doc["public_key"]) if doc.get("public_key") else None,
            b64url_decode(doc["sealing_key"]) if doc.get("sealing_key") else None,
        )


@dataclass(frozen=True)
class TokenResponse:
    access_token: str
    token_type: str
    expires_in: int
    granted_scopes: tuple[str, ...]
    refresh_token: Optional[str] = None
    sealed: bool = False

    def to_json(self) -> dict:
        doc = {
            "access_token": self.access_token,
            "token_type": self.token_type,
            "expires_in": self.expires_in,
            "granted_scopes": list(self.granted_scopes),
        }
        if self.refresh_token is not None:
            doc["refresh_token"] = self.refresh_token
        if self.sealed:
            doc["sealed"] = True
        return doc


def check_redirect_uri(uri: str) -> None:
    parts = urlsplit(uri)
    if not parts.scheme or not parts.netloc or parts.fragment or "#" in uri:
        raise OAuthError("invalid_redirect", f"redirect URI must be absolute without fragment: {uri!r}")


def check_params(params: Mapping[str, object]) -> None:
    """Input validation: no script-bearing values in any string parameter."""
    for name, value in params.items():
        values = value if isinstance(value, (list, tuple, set, frozenset)) else [value]
        for v in values:
            if isinstance(v, str) and _UNSAFE.search(v):
                raise OAuthError("invalid_request", f"parameter {name!r} contains disallowed characters")


def normalize_scopes(scopes: "str | Iterable[str] | None") -> tuple[str, ...]:
    if scopes is None:
        return ()
    if isinstance(scopes, str):
        scopes = scopes.split()
    out: list[str] = []
    for s in scopes:
        if not isinstance(s, str) or not s:
            raise OAuthError("invalid_scope", "scopes must be non-empty strings")
        if s not in out:
            out.append(s)
    return tuple(out)


class RateLimiter:
    def __init__(self, limit: int, window: int = 60):
        self.limit = limit
        self.window = window
        self._hits: dict[str, deque] = defaultdict(deque)
        self._lock = threading.Lock()

    def allow(self, identity: str, now: float) -> bool:
        with self._lock:
            hits = self._hits[identity]
            while hits and now - hits[0] >= self.window:
                hits.popleft()
            if len(hits) >= self.limit:
                return False
            hits.append(now)
            return True


class AuthorizationServer:
    def __init__(self, config: Config, store: Store, engine: AdaptiveEngine, signals: Signals,
                 audit: AuditLog, federation: Federation, signing_key: Optional[KeyPair] = None,
                 clock: Callable[[], float] = time.time, faults: Iterable[str] = ()):
        self.config = config
        self.issuer = config.issuer_id
        self.base_url = config.as_base_url.rstrip("/")
        self.lifetimes: Lifetimes = config.lifetimes
        self.store = store
        self.engine = engine
        self.signals = signals
        self.audit = audit
        self.federation = federation
        self.signing_key = signing_key or KeyPair.generate("as-signing-1")
        self.clock = clock
        self.faults = frozenset(faults)
        self.replay = ReplayCache()
        self.rate_limiter = RateLimiter(config.rate_limits.get("par_per_minute", 20))
        # stub out-of-band channel for step-up one-time codes: subject -> (challenge_id, code)
        self.step_up_outbox: dict[str, tuple[str, str]] = {}
        self._nonces: dict[str, int] = {}
        self._grant_lock = threading.RLock()

    # --- plumbing ------------------------------------------------------------

    def now(self) -> int:
        return int(self.clock())

    def url(self, path: str) -> str:
        return self.base_url + path

    @property
    def verification_keys(self) -> dict[str, KeyPair]:
        return {self.signing_key.key_id: self.signing_key.public_only()}

    @contextmanager
    def _audited(self, action: str, actor: str):
        entry: dict = {"actor": actor, "risk": None, "outcome": "allow"}
        try:
            yield entry
        except OAuthError as exc:
            entry["outcome"] = exc.error
            raise
        finally:
            self.audit.append({
                "ts": self.now(), "actor": entry["actor"], "action": action,
                "risk": entry["risk"], "outcome": entry["outcome"],
            })

    def _assess(self, entry: dict, evidence: Evidence, subject: str, client: ClientRecord,
                stage: Stage, scopes: Iterable[str] = ()) -> tuple[RiskAssessment, Action]:
        ctx = self.signals.context(evidence, subject, client.client_id, client.tal, self.now())
        assessment = self.engine.assess(ctx)
        decision = self.engine.decide(assessment, stage, scopes)
        entry["risk"] = {"score": round(assessment.score, 6), "class": assessment.risk_class.name}
        return assessment, decision.action

    # --- registry ------------------------------------------------------------

    def registration_nonce(self) -> str:
        nonce = random_id(128)
        self._nonces[nonce] = self.now()
        return nonce

    def register_client(self, client_id: str, redirect_uris: Sequence[str], scopes: Sequence[str],
                        display_name: str = "", public_key: Optional[bytes] = None,
                        nonce: Optional[str] = None, nonce_signature: Optional[bytes] = None,
                        sealing_key: Optional[bytes] = None) -> ClientRecord:
        with self._audited("register_client", client_id) as entry:
            if not redirect_uris:
                raise OAuthError("invalid_redirect", "at least one redirect URI is required")
            for uri in redirect_uris:
                check_redirect_uri(uri)
            scopes = normalize_scopes(scopes)
            if not scopes:
                raise OAuthError("invalid_scope", "at least one scope is required")
            check_params({"client_id": client_id, "display_name": display_name, "scope": list(scopes)})
            tal = 0
            if public_key is not None:
                issued = self._nonces.pop(nonce, None) if nonce else None
                fresh = issued is not None and self.now() - issued <= 300
                if (fresh and nonce_signature is not None and len(public_key) == 32
                        and ed25519_verify(public_key, nonce_signature, nonce.encode("ascii"))):
                    tal = 1
                else:
                    log.warning("client %s: key possession proof failed, registering at TAL 0", client_id)
                    entry["outcome"] = "allow_tal0"
                    public_key = None
            record = ClientRecord(client_id, display_name or client_id, tuple(redirect_uris), scopes,
                                  public_key, tal, sealing_key)
            self._put_client(record)
            return record

    def provision_client(self, seed: ClientConfig) -> ClientRecord:
        """Operator-provisioned client; a configured key is trusted without a nonce proof."""
        key = b64url_decode(seed.public_key_b64) if seed.public_key_b64 else None
        for uri in seed.redirect_uris:
            check_redirect_uri(uri)
        record = ClientRecord(seed.client_id, seed.display_name or seed.client_id, tuple(seed.redirect_uris),
                              normalize_scopes(seed.scopes), key, 1 if key else 0)
        self._put_client(record)
        return record

    def _put_client(self, record: ClientRecord) -> None:
        try:
            self.store.checked_put("clients", record.client_id, ABSENT, record.to_json())
        except StoreConflict:
            raise OAuthError("invalid_client_metadata", f"client {record.client_id!r} already registered") from None

    def register_audience(self, record: AudienceRecord) -> AudienceRecord:
        self.store.put("audiences", record.aud_id, record.to_json())
        return record

    def get_client(self, client_id: str) -> ClientRecord:
        doc = self.store.get("clients", client_id) if isinstance(client_id, str) else None
        if doc is None:
            raise OAuthError("invalid_client", f"unknown client {client_id!r}")
        return ClientRecord.from_json(doc)

    def get_audience(self, aud_id: str) -> Optional[AudienceRecord]:
        doc = self.store.get("audiences", aud_id)
        return AudienceRecord.from_json(doc) if doc else None

    def authenticate_client(self, client_id: str, proof: "SenderProof | str | None", method: str,
                            path: str, token_wire: Optional[str] = None) -> tuple[ClientRecord, Optional[str]]:
        """Returns the client and the thumbprint of the key it proved (None for TAL0)."""
        client = self.get_client(client_id)
        if client.tal == 0:
            return client, None
        if not proof:
            raise OAuthError("invalid_client", "sender proof required for a TAL 1 client")
        try:
            parsed = SenderProof.parse(proof) if isinstance(proof, str) else proof
            expected = parsed.thumbprint if "binding" in self.faults else client.thumbprint
            verify_sender_proof(parsed, method, self.url(path), token_wire, expected, self.replay, self.now())
        except ProofError as exc:
            if exc.code == "proof_binding":
                raise OAuthError("binding_mismatch", "proof key is not the client's registered key") from None
            raise OAuthError("invalid_client", f"client authentication failed: {exc.code}") from None
        return client, parsed.thumbprint

    # --- federation ----------------------------------------------------------

    def authenticate_owner(self, idp_id: str, credentials: Mapping[str, str]) -> str:
        try:
            return self.federation.authenticate(idp_id, credentials)
        except FederationError as exc:
            if exc.reason == "unknown_idp":
                raise OAuthError("federation_error", str(exc)) from None
            raise OAuthError("access_denied", "resource owner authentication failed") from None

    # --- pushed authorization requests ---------------------------------------

    def par(self, client_id: str, proof: "SenderProof | str | None", scopes, redirect_uri: str,
            code_challenge: str, code_challenge_method: str = "S256", state: Optional[str] = None,
            resource: Optional[str] = None, evidence: Evidence = Evidence(),
            extra: Optional[Mapping[str, object]] = None) -> dict:
        with self._audited("par", str(client_id)) as entry:
            now = self.now()
            if "rate-limit" not in self.faults and not self.rate_limiter.allow(str(client_id), now):
                if self.signals.flag_client(str(client_id)):
                    posture = self.engine.escalate()
                    log.warning("PAR rate limit breached by %s; posture now %s", client_id, posture.name)
                raise OAuthError("rate_limited", "PAR rate limit exceeded")
            extra = dict(extra or {})
            if "request_uri" in extra or "request" in extra:
                raise OAuthError("invalid_request_uri", "request_uri references are not accepted at /par")
            scopes = normalize_scopes(scopes)
            check_params({"client_id": client_id, "scope": list(scopes), "redirect_uri": redirect_uri,
                          "state": state or "", "resource": resource or "", **extra})
            client, _ = self.authenticate_client(client_id, proof, "POST", "/par")
            if redirect_uri not in client.registered_redirect_uris:
                raise OAuthError("invalid_redirect", "redirect_uri is not registered for this client")
            if not scopes or not set(scopes) <= set(client.registered_scopes):
                raise OAuthError("invalid_scope", "requested scopes exceed the client's registration")
            try:
                pkce = PkceChallenge(code_challenge, code_challenge_method)
            except PkceError as exc:
                raise OAuthError("invalid_request", str(exc)) from None
            audience = resource or self.config.audience
            if audience is None or self.get_audience(audience) is None:
                raise OAuthError("invalid_target", f"unknown resource {audience!r}")
            _, action = self._assess(entry, evidence, client.client_id, client, Stage.AUTHN, scopes)
            if action is Action.DENY:
                raise OAuthError("risk_denied", "transaction rejected by the adaptive engine")
            request_uri = REQUEST_URI_PREFIX + random_id(128)
            self.store.checked_put("par", request_uri, ABSENT, {
                "client_id": client.client_id, "pkce": {"method": pkce.method, "challenge": pkce.challenge},
                "redirect_uri": redirect_uri, "scopes": list(scopes), "state": state, "resource": audience,
                "created": now, "expires_in": self.lifetimes.par, "used": False,
            })
            return {"request_uri": request_uri, "expires_in": self.lifetimes.par}

    # --- step-up -------------------------------------------------------------

    def _issue_step_up(self, subject: str) -> str:
        challenge_id = random_id(128)
        answer = f"{secrets.randbelow(10 ** 6):06d}"
        self.store.checked_put("step-up", challenge_id, ABSENT, {
            "subject": subject, "expected_answer": answer,
            "expires": self.now() + self.lifetimes.step_up, "state": "pending",
        })
        self.step_up_outbox[subject] = (challenge_id, answer)
        return challenge_id

    def _require_step_up(self, subject: str, step_up_id: Optional[str]) -> None:
        """Consume a satisfied challenge for ``subject`` or raise step_up_required."""
        if step_up_id:
            version, rec = self.store.get_versioned("step-up", step_up_id)
            if rec is not None and rec["subject"] == subject:
                if rec["state"] == "satisfied":
                    try:
                        self.store.checked_put("step-up", step_up_id, version, {**rec, "state": "consumed"})
                        return
                    except StoreConflict:
                        pass
                elif rec["state"] == "pending" and self.now() < rec["expires"]:
                    raise OAuthError("step_up_required", "step-up challenge not yet satisfied",
                                     challenge_id=step_up_id)
        raise OAuthError("step_up_required", "additional verification required",
                         challenge_id=self._issue_step_up(subject))

    def complete_step_up(self, challenge_id: str, answer: str) -> bool:
        with self._audited("step_up", "unknown") as entry:
            version, rec = self.store.get_versioned("step-up", challenge_id)
            if rec is None:
                raise OAuthError("invalid_challenge", "unknown challenge")
            entry["actor"] = rec["subject"]
            if rec["state"] != "pending":
                raise OAuthError("invalid_challenge", f"challenge is {rec['state']}")
            if self.now() >= rec["expires"]:
                raise OAuthError("expired_challenge", "challenge expired")
            ok = secrets.compare_digest(str(answer), rec["expected_answer"])
            try:
                self.store.checked_put("step-up", challenge_id, version,
                                       {**rec, "state": "satisfied" if ok else "voided"})
            except StoreConflict:
                raise OAuthError("invalid_challenge", "challenge already answered") from None
            entry["outcome"] = "pass" if ok else "fail"
            return ok

    # --- authorization -------------------------------------------------------

    def authorize(self, request_uri: str, idp_id: str, credentials: Mapping[str, str], consent,
                  client_id: Optional[str] = None, step_up_id: Optional[str] = None,
                  evidence: Evidence = Evidence()) -> dict:
        with self._audited("authorize", str(client_id or "unknown")) as entry:
            if not isinstance(request_uri, str) or not request_uri.startswith(REQUEST_URI_PREFIX):
                raise OAuthError("invalid_request_uri", "request_uri must come from this server's /par")
            version, rec = self.store.get_versioned("par", request_uri)
            if rec is None:
                raise OAuthError("invalid_request_uri", "unknown request_uri")
            if client_id is not None and client_id != rec["client_id"]:
                raise OAuthError("invalid_request", "client_id does not match the pushed request")
            if rec["used"]:
                raise OAuthError("one_time_use", "request_uri already used")
            if self.now() >= rec["created"] + rec["expires_in"]:
                raise OAuthError("invalid_request_uri", "request_uri expired")
            client = self.get_client(rec["client_id"])
            subject = self.authenticate_owner(idp_id, credentials)
            entry["actor"] = subject
            consent = normalize_scopes(consent)
            check_params({"consent": list(consent)})
            if not consent:
                raise OAuthError("access_denied", "resource owner approved no scopes")
            if not set(consent) <= set(rec["scopes"]):
                raise OAuthError("invalid_scope", "consent exceeds the requested scopes")
            _, action = self._assess(entry, evidence, subject, client, Stage.AUTHN, consent)
            if action is Action.DENY:
                raise OAuthError("risk_denied", "authentication rejected by the adaptive engine")
            stepped_up = False
            if action is Action.STEP_UP:
                self._require_step_up(subject, step_up_id)
                stepped_up = True
            try:
                self.store.checked_put("par", request_uri, version, {**rec, "used": True})
            except StoreConflict:
                raise OAuthError("one_time_use", "request_uri already used") from None
            code = random_id(128)
            self.store.checked_put("codes", code, ABSENT, {
                "par_ref": request_uri, "subject": subject, "issued": self.now(),
                "ttl": self.lifetimes.code, "redeemed": False, "consent": list(consent),
                "step_up": stepped_up,
            })
            return {"code": code, "iss": self.issuer, "state": rec["state"]}

    # --- issuance ------------------------------------------------------------

    def _mint(self, grant_id: str, client: ClientRecord, subject: str, audience: str,
              scopes: Sequence[str], cnf: Optional[str], risk_class: str,
              exp_cap: Optional[int] = None) -> tuple[str, TokenClaims]:
        now = self.now()
        exp = now + self.lifetimes.access_for(client.tal)
        if exp_cap is not None:
            exp = min(exp, exp_cap)
        claims = TokenClaims(
            iss=self.issuer, sub=subject, aud=audience, client_id=client.client_id, scope=tuple(scopes),
            iat=now, exp=exp, jti=random_id(128), tal=client.tal, risk_class=risk_class,
            cnf_thumbprint=cnf,
        )
        wire = sign_token(claims, self.signing_key).wire
        with self._grant_lock:
            self.store.checked_put("tokens", claims.jti, ABSENT,
                                   {"grant_id": grant_id, "exp": claims.exp, "client_id": client.client_id})
            grant = self.store.get("grants", grant_id)
            grant["jtis"].append(claims.jti)
            self.store.put("grants", grant_id, grant)
        return wire, claims

    def _new_refresh(self, grant_id: str, client_id: str) -> str:
        refresh_id = random_id(128)
        self.store.checked_put("tokens", "refresh:" + refresh_id, ABSENT, {
            "grant_id": grant_id, "client_id": client_id, "state": "active",
            "exp": self.now() + self.lifetimes.refresh,
        })
        with self._grant_lock:
            grant = self.store.get("grants", grant_id)
            grant["refresh_ids"].append(refresh_id)
            self.store.put("grants", grant_id, grant)
        return refresh_id

    def token(self, code: str, code_verifier: str, client_id: str, proof: "SenderProof | str | None" = None,
              step_up_id: Optional[str] = None, evidence: Evidence = Evidence()) -> TokenResponse:
        with self._audited("token", str(client_id)) as entry:
            client, proven = self.authenticate_client(client_id, proof, "POST", "/token")
            version, rec = self.store.get_versioned("codes", code) if isinstance(code, str) else (0, None)
            if rec is None:
                raise OAuthError("invalid_grant", "unknown authorization code")
            if rec["redeemed"]:
                raise OAuthError("invalid_grant", "authorization code already redeemed")
            if self.now() >= rec["issued"] + rec["ttl"]:
                raise OAuthError("invalid_grant", "authorization code expired")
            par = self.store.get("par", rec["par_ref"])
            if par["client_id"] != client.client_id:
                raise OAuthError("invalid_grant", "code was issued to another client")
            if "pkce" not in self.faults:
                challenge = PkceChallenge(par["pkce"]["challenge"], par["pkce"]["method"])
                if not verify_pkce(code_verifier or "", challenge):
                    raise OAuthError("invalid_grant", "PKCE verification failed")
            subject = rec["subject"]
            entry["actor"] = subject
            scopes = list(rec["consent"])
            if client.tal == 0:
                scopes = [s for s in scopes if not is_elevated(s)]
                if not scopes:
                    raise OAuthError("invalid_scope", "TAL 0 clients cannot hold elevated scopes")
            assessment, action = self._assess(entry, evidence, subject, client, Stage.TOKEN_ISSUE, scopes)
            if action is Action.DENY:
                raise OAuthError("risk_denied", "issuance rejected by the adaptive engine")
            if action is Action.STEP_UP and not rec.get("step_up"):
                self._require_step_up(subject, step_up_id)
            try:
                self.store.checked_put("codes", code, version, {**rec, "redeemed": True})
            except StoreConflict:
                raise OAuthError("invalid_grant", "authorization code already redeemed") from None
            grant_id = random_id(128)
            self.store.checked_put("grants", grant_id, ABSENT, {
                "client_id": client.client_id, "sub": subject, "aud": par["resource"], "scopes": scopes,
                "cnf": proven, "jtis": [], "refresh_ids": [], "revoked": False,
            })
            wire, claims = self._mint(grant_id, client, subject, par["resource"], scopes, proven,
                                      assessment.risk_class.name)
            refresh = self._new_refresh(grant_id, client.client_id) if client.tal >= 1 else None
            self.signals.remember_device(subject, evidence.device_id)
            self.signals.remember_device(client.client_id, evidence.device_id)
            return TokenResponse(wire, "radaa-pop" if proven else "bearer", claims.exp - claims.iat,
                                 tuple(scopes), refresh)

    def refresh(self, refresh_token: str, client_id: str, proof: "SenderProof | str | None" = None,
                step_up_id: Optional[str] = None, evidence: Evidence = Evidence()) -> TokenResponse:
        with self._audited("refresh", str(client_id)) as entry:
            client, proven = self.authenticate_client(client_id, proof, "POST", "/refresh")
            key = "refresh:" + str(refresh_token)
            version, rec = self.store.get_versioned("tokens", key)
            if rec is None or rec["client_id"] != client.client_id:
                raise OAuthError("invalid_grant", "unknown refresh token")
            grant = self.store.get("grants", rec["grant_id"])
            if grant["revoked"] or rec["state"] == "revoked":
                raise OAuthError("invalid_grant", "grant revoked")
            if rec["state"] == "rotated":
                self._revoke_grant(rec["grant_id"])
                raise OAuthError("invalid_grant", "refresh token reuse detected; grant revoked")
            if self.now() >= rec["exp"]:
                raise OAuthError("invalid_grant", "refresh token expired")
            if "binding" not in self.faults and proven != grant["cnf"]:
                raise OAuthError("binding_mismatch", "proof key is not bound to this grant")
            entry["actor"] = grant["sub"]
            assessment, action = self._assess(entry, evidence, grant["sub"], client, Stage.TOKEN_ISSUE,
                                              grant["scopes"])
            if action is Action.DENY:
                raise OAuthError("risk_denied", "refresh rejected by the adaptive engine")
            if action is Action.STEP_UP:
                self._require_step_up(grant["sub"], step_up_id)
            try:
                self.store.checked_put("tokens", key, version, {**rec, "state": "rotated"})
            except StoreConflict:
                self._revoke_grant(rec["grant_id"])
                raise OAuthError("invalid_grant", "refresh token reuse detected; grant revoked") from None
            wire, claims = self._mint(rec["grant_id"], client, grant["sub"], grant["aud"], grant["scopes"],
                                      proven, assessment.risk_class.name)
            new_refresh = self._new_refresh(rec["grant_id"], client.client_id)
            return TokenResponse(wire, "radaa-pop", claims.exp - claims.iat, tuple(grant["scopes"]), new_refresh)

    # --- revocation and introspection ----------------------------------------

    def _revoke_jti(self, jti: str, exp: Optional[int]) -> None:
        self.store.put("revocations", jti, {"exp": exp, "at": self.now()})

    def _revoke_grant(self, grant_id: str) -> None:
        with self._grant_lock:
            grant = self.store.get("grants", grant_id)
            if grant is None:
                return
            self.store.put("grants", grant_id, {**grant, "revoked": True})
            for jti in grant["jtis"]:
                tok = self.store.get("tokens", jti) or {}
                self._revoke_jti(jti, tok.get("exp"))
            for refresh_id in grant["refresh_ids"]:
                key = "refresh:" + refresh_id
                rec = self.store.get("tokens", key)
                if rec is not None:
                    self.store.put("tokens", key, {**rec, "state": "revoked"})

    def token_owner(self, token_reference: str) -> Optional[str]:
        """client_id a token or refresh reference was issued to, if known."""
        if token_reference.count(".") == 2:
            try:
                return verify_token(token_reference, self.verification_keys).client_id
            except TokenError:
                return None
        rec = self.store.get("tokens", "refresh:" + token_reference) or self.store.get("tokens", token_reference)
        return rec["client_id"] if rec else None

    def _revoke_reference(self, ref: str) -> bool:
        if ref.count(".") == 2:
            try:
                claims = verify_token(ref, self.verification_keys)
            except TokenError:
                return False
            self._revoke_jti(claims.jti, claims.exp)
            return True
        rec = self.store.get("tokens", "refresh:" + ref)
        if rec is not None:
            self._revoke_grant(rec["grant_id"])
            return True
        rec = self.store.get("tokens", ref)
        if rec is not None:
            self._revoke_jti(ref, rec.get("exp"))
            return True
        return False

    def revoke(self, token_reference: str, actor: str = "unknown") -> None:
        """Idempotent; unknown references are acknowledged silently."""
        with self._audited("revoke", actor) as entry:
            if not self._revoke_reference(str(token_reference)):
                entry["outcome"] = "ack_unknown"

    def revoke_request(self, token_reference: str, client_id: str,
                       proof: "SenderProof | str | None" = None) -> None:
        """Revocation on behalf of an authenticated client, limited to its own tokens."""
        with self._audited("revoke", str(client_id)) as entry:
            client, _ = self.authenticate_client(client_id, proof, "POST", "/revoke")
            ref = str(token_reference)
            if self.token_owner(ref) != client.client_id or not self._revoke_reference(ref):
                entry["outcome"] = "ack_unknown"

    def is_revoked(self, claims: TokenClaims) -> bool:
        if self.store.get("revocations", claims.jti) is not None:
            return True
        tok = self.store.get("tokens", claims.jti)
        if tok is not None:
            grant = self.store.get("grants", tok["grant_id"])
            return bool(grant and grant["revoked"])
        return False

    def is_active(self, claims: TokenClaims) -> bool:
        return self.now() < claims.exp and not self.is_revoked(claims)

    def introspect(self, token_wire: str, caller_id: str, caller_proof: "SenderProof | str | None") -> dict:
        with self._audited("introspect", str(caller_id)) as entry:
            caller = self.get_audience(caller_id) if isinstance(caller_id, str) else None
            if caller is None or caller.public_key is None or not caller_proof:
                raise OAuthError("invalid_client", "introspection requires an authenticated resource server")
            try:
                verify_sender_proof(caller_proof, "POST", self.url("/introspect"), str(token_wire),
                                    derive_thumbprint(caller.public_key), self.replay, self.now())
            except ProofError as exc:
                raise OAuthError("invalid_client", f"caller proof rejected: {exc.code}") from None
            try:
                claims = verify_token(str(token_wire), self.verification_keys)
            except TokenError:
                entry["outcome"] = "inactive"
                return {"active": False}
            if not self.is_active(claims):
                entry["outcome"] = "inactive"
                return {"active": False}
            return {"active": True, **claims.to_json()}

    # --- cross-ecosystem exchange --------------------------------------------

    def exchange_token(self, incoming_token: str, incoming_proof: "SenderProof | str | None",
                       target_audience: str, evidence: Evidence = Evidence()) -> TokenResponse:
        with self._audited("exchange", "unknown") as entry:
            try:
                claims = verify_token(str(incoming_token), self.verification_keys)
            except TokenError as exc:
                raise OAuthError("invalid_grant", f"incoming token invalid: {exc.code}") from None
            entry["actor"] = claims.sub
            if not self.is_active(claims):
                raise OAuthError("invalid_grant", "incoming token is not active")
            if not claims.cnf_thumbprint:
                raise OAuthError("invalid_grant", "incoming token is not sender-constrained")
            if not incoming_proof:
                raise OAuthError("invalid_client", "sender proof required")
            try:
                verify_sender_proof(incoming_proof, "POST", self.url("/exchange"), str(incoming_token),
                                    claims.cnf_thumbprint, self.replay, self.now())
            except ProofError as exc:
                raise OAuthError("invalid_client", f"sender proof rejected: {exc.code}") from None
            target = self.get_audience(target_audience) if isinstance(target_audience, str) else None
            if target is None:
                raise OAuthError("invalid_target", f"unknown audience {target_audience!r}")
            scopes = [s for s in claims.scope if s in target.scopes]
            if not scopes:
                raise OAuthError("invalid_scope", "no scope of the incoming token is valid at the target")
            client = self.get_client(claims.client_id)
            assessment, action = self._assess(entry, evidence, claims.sub, client, Stage.TOKEN_ISSUE, scopes)
            if action is Action.DENY:
                raise OAuthError("risk_denied", "exchange rejected by the adaptive engine")
            if action is Action.STEP_UP:
                raise OAuthError("step_up_required", "exchange requires a LOW-risk context")
            tok = self.store.get("tokens", claims.jti)
            wire, new = self._mint(tok["grant_id"], client, claims.sub, target.aud_id, scopes,
                                   claims.cnf_thumbprint, assessment.risk_class.name, exp_cap=claims.exp)
            sealed = target.sealing_key is not None
            if sealed:
                wire = b64url_encode(seal_claims(wire, target.sealing_key))
            return TokenResponse(wire, "radaa-pop", new.exp - new.iat, tuple(scopes), sealed=sealed)
