"""Claim envelopes, sealing, PKCE, sender proofs and replay detection.

Every other module consumes these primitives. The envelope format is a
three-segment padding-free base64url string ``header.claims.signature``
with compact JSON segments.
"""
from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import hmac
import json
import os
import re
import secrets
import threading
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional
from urllib.parse import urlsplit, urlunsplit

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

TOKEN_TYP = "radaa+token"
PROOF_TYP = "radaa+proof"
PROOF_FRESHNESS_S = 60
REPLAY_WINDOW_S = 300
REPLAY_CAPACITY = 65536
RISK_CLASSES = ("LOW", "MEDIUM", "HIGH")

_PKCE_VERIFIER = re.compile(r"^[A-Za-z0-9\-._~]{43,128}$")


class TokenError(Exception):
    """Base class for token-core failures. ``code`` is a stable error code."""

    code = "invalid_token"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message or self.code)
        if code is not None:
            self.code = code


class MalformedToken(TokenError):
    code = "malformed_token"


class UnknownKey(TokenError):
    code = "unknown_kid"


class SignatureMismatch(TokenError):
    code = "signature_mismatch"


class InvalidClaims(TokenError):
    code = "invalid_claims"


class UnsupportedAlgorithm(TokenError):
    code = "unsupported_algorithm"


class InvalidKey(TokenError):
    code = "invalid_key"


class SealError(TokenError):
    code = "seal_failure"


class PkceError(TokenError):
    code = "invalid_pkce"


class ProofError(TokenError):
    """Sender-proof rejection; ``code`` distinguishes the failing check."""

    code = "invalid_proof"


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not isinstance(text, str) or not re.fullmatch(r"[A-Za-z0-9_-]*", text):
        raise MalformedToken("segment is not base64url")
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise MalformedToken(f"bad base64url: {exc}") from None


def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def random_id(nbits: int = 128) -> str:
    return b64url_encode(secrets.token_bytes(nbits // 8))


class Algorithm(str, enum.Enum):
    ED25519 = "EdDSA"
    HMAC_SHA256 = "HS256"


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    public_key: bytes
    private_key: bytes
    algorithm: Algorithm = Algorithm.ED25519

    def __post_init__(self):
        if self.algorithm is Algorithm.ED25519:
            if len(self.public_key) != 32:
                raise InvalidKey("Ed25519 public key must be 32 bytes")
            if self.private_key and len(self.private_key) != 32:
                raise InvalidKey("Ed25519 private key must be 32 bytes")
        elif self.algorithm is Algorithm.HMAC_SHA256:
            if len(self.private_key) < 32 or self.public_key != self.private_key:
                raise InvalidKey("HMAC keys are symmetric and at least 32 bytes")
        else:  # pragma: no cover - enum exhausts
            raise UnsupportedAlgorithm(str(self.algorithm))

    @classmethod
    def generate(cls, key_id: str | None = None,
                 algorithm: Algorithm = Algorithm.ED25519) -> "KeyPair":
        key_id = key_id or random_id(64)
        if algorithm is Algorithm.HMAC_SHA256:
            secret = secrets.token_bytes(32)
            return cls(key_id, secret, secret, algorithm)
        sk = Ed25519PrivateKey.generate()
        return cls(
            key_id,
            sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw),
            sk.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                             serialization.NoEncryption()),
            algorithm,
        )

    @property
    def thumbprint(self) -> str:
        return derive_thumbprint(self.public_key)

    def public_only(self) -> "KeyPair":
        """Verification-only copy; HMAC keys cannot be split and are returned as is."""
        if self.algorithm is Algorithm.HMAC_SHA256:
            return self
        return KeyPair(self.key_id, self.public_key, b"", self.algorithm)

    def sign(self, message: bytes) -> bytes:
        if not self.private_key:
            raise InvalidKey(f"key {self.key_id!r} has no private part")
        if self.algorithm is Algorithm.HMAC_SHA256:
            return hmac.new(self.private_key, message, hashlib.sha256).digest()
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(message)

    def verify(self, signature: bytes, message: bytes) -> bool:
        if self.algorithm is Algorithm.HMAC_SHA256:
            expected = hmac.new(self.private_key, message, hashlib.sha256).digest()
            return hmac.compare_digest(expected, signature)
        return ed25519_verify(self.public_key, signature, message)

    def to_json(self) -> dict:
        return {
            "key_id": self.key_id,
            "algorithm": self.algorithm.name,
            "public_key_b64": b64url_encode(self.public_key),
            "private_key_b64": b64url_encode(self.private_key),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "KeyPair":
        return cls(
            doc["key_id"],
            b64url_decode(doc["public_key_b64"]),
            b64url_decode(doc.get("private_key_b64", "")),
            Algorithm[doc["algorithm"]],
        )


def ed25519_verify(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def derive_thumbprint(public_key: bytes, algorithm: Algorithm = Algorithm.ED25519) -> str:
    """base64url SHA-256 over the raw public key bytes."""
    if algorithm is Algorithm.ED25519 and len(public_key) != 32:
        raise InvalidKey(f"Ed25519 public key must be 32 bytes, got {len(public_key)}")
    if algorithm is Algorithm.HMAC_SHA256 and len(public_key) < 32:
        raise InvalidKey("HMAC key shorter than 32 bytes")
    return b64url_encode(hashlib.sha256(public_key).digest())


def token_hash(token_wire: str) -> str:
    return b64url_encode(hashlib.sha256(token_wire.encode("ascii")).digest())


# --- claims and envelopes ----------------------------------------------------

@dataclass(frozen=True)
class TokenClaims:
    iss: str
    sub: str
    aud: str
    client_id: str
    scope: tuple[str, ...]
    iat: int
    exp: int
    jti: str
    tal: int = 0
    risk_class: str = "LOW"
    cnf_thumbprint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))

    def validate(self) -> None:
        if self.exp <= self.iat:
            raise InvalidClaims("exp must be greater than iat")
        if not self.scope:
            raise InvalidClaims("scope must be non-empty")
        if len(set(self.scope)) != len(self.scope):
            raise InvalidClaims("scope contains duplicates")
        if self.tal >= 1 and not self.cnf_thumbprint:
            raise InvalidClaims("cnf_thumbprint required when tal >= 1")
        if self.risk_class not in RISK_CLASSES:
            raise InvalidClaims(f"unknown risk_class {self.risk_class!r}")
        for name in ("iss", "sub", "aud", "client_id", "jti"):
            if not getattr(self, name):
                raise InvalidClaims(f"{name} must be non-empty")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["scope"] = list(self.scope)
        if self.cnf_thumbprint is None:
            del doc["cnf_thumbprint"]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "TokenClaims":
        try:
            claims = cls(
                iss=doc["iss"], sub=doc["sub"], aud=doc["aud"], client_id=doc["client_id"],
                scope=tuple(doc["scope"]), iat=int(doc["iat"]), exp=int(doc["exp"]),
                jti=doc["jti"], tal=int(doc["tal"]), risk_class=doc["risk_class"],
                cnf_thumbprint=doc.get("cnf_thumbprint"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedToken(f"claims missing or mistyped: {exc}") from None
        return claims


@dataclass(frozen=True)
class SignedToken:
    wire: str

    def __str__(self) -> str:
        return self.wire

    @property
    def header(self) -> dict:
        return _decode_segment(self.wire.split(".")[0])

    @property
    def unverified_claims(self) -> TokenClaims:
        return TokenClaims.from_json(_decode_segment(self.wire.split(".")[1]))


def _decode_segment(segment: str) -> dict:
    raw = b64url_decode(segment)
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedToken(f"segment is not UTF-8 JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedToken("segment is not a JSON object")
    return doc


def _encode_envelope(header: dict, payload: dict, key: KeyPair) -> str:
    signing_input = b64url_encode(_canonical_json(header)) + "." + b64url_encode(_canonical_json(payload))
    return signing_input + "." + b64url_encode(key.sign(signing_input.encode("ascii")))


def _sign_unchecked(claims: TokenClaims, key: KeyPair) -> SignedToken:
    header = {"alg": key.algorithm.value, "typ": TOKEN_TYP, "kid": key.key_id}
    return SignedToken(_encode_envelope(header, claims.to_json(), key))


def sign_token(claims: TokenClaims, key: KeyPair) -> SignedToken:
    claims.validate()
    if not isinstance(key.algorithm, Algorithm):
        raise UnsupportedAlgorithm(str(key.algorithm))
    return _sign_unchecked(claims, key)


def verify_token(wire: str, keys: Mapping[str, KeyPair]) -> TokenClaims:
    """Return the claims iff the signature verifies under the key named by ``kid``.

    Expiry is deliberately not checked here.
    """
    if not isinstance(wire, str) or wire.count(".") != 2:
        raise MalformedToken("expected three dot-separated segments")
    try:
        wire.encode("ascii")
    except UnicodeEncodeError:
        raise MalformedToken("token is not ASCII") from None
    head_seg, claims_seg, sig_seg = wire.split(".")
    header = _decode_segment(head_seg)
    if header.get("typ") != TOKEN_TYP:
        raise MalformedToken(f"unexpected typ {header.get('typ')!r}")
    kid = header.get("kid")
    key = keys.get(kid) if isinstance(kid, str) else None
    if key is None:
        raise UnknownKey(f"unknown kid {kid!r}")
    if header.get("alg") != key.algorithm.value:
        raise SignatureMismatch("header alg does not match key algorithm")
    signature = b64url_decode(sig_seg)
    if not key.verify(signature, f"{head_seg}.{claims_seg}".encode("ascii")):
        raise SignatureMismatch("signature does not verify")
    return TokenClaims.from_json(_decode_segment(claims_seg))


# --- confidentiality ---------------------------------------------------------

_SEAL_AAD = b"radaa-sealed-envelope"


def seal_claims(envelope: str | SignedToken, audience_secret: bytes) -> bytes:
    """AES-256-GCM over an already signed envelope; nonce is prepended."""
    if len(audience_secret) != 32:
        raise SealError("sealing key must be 32 bytes")
    nonce = os.urandom(12)
    return nonce + AESGCM(audience_secret).encrypt(nonce, str(envelope).encode("ascii"), _SEAL_AAD)


def unseal_claims(sealed: bytes, audience_secret: bytes) -> str:
    if len(audience_secret) != 32:
        raise SealError("sealing key must be 32 bytes")
    if len(sealed) < 12 + 16:
        raise SealError("sealed payload truncated")
    try:
        plain = AESGCM(audience_secret).decrypt(sealed[:12], sealed[12:], _SEAL_AAD)
    except InvalidTag:
        raise SealError("authentication tag mismatch") from None
    return plain.decode("ascii")


# --- PKCE --------------------------------------------------------------------

@dataclass(frozen=True)
class PkceChallenge:
    challenge: str
    method: str = "S256"

    def __post_init__(self):
        if self.method != "S256":
            raise PkceError(f"PKCE method {self.method!r} not accepted; only S256")
        if not re.fullmatch(r"[A-Za-z0-9_-]{43}", self.challenge or ""):
            raise PkceError("S256 challenge must be 43 base64url characters")


def _s256(verifier: str) -> str:
    return b64url_encode(hashlib.sha256(verifier.encode("ascii")).digest())


def make_pkce_challenge(verifier: str) -> PkceChallenge:
    if not _PKCE_VERIFIER.fullmatch(verifier):
        raise PkceError("verifier must be 43-128 unreserved characters")
    return PkceChallenge(_s256(verifier))


def verify_pkce(verifier: str, challenge: PkceChallenge) -> bool:
    if challenge.method != "S256":
        raise PkceError("only S256 is accepted")
    if not isinstance(verifier, str) or not _PKCE_VERIFIER.fullmatch(verifier):
        return False
    return hmac.compare_digest(_s256(verifier), challenge.challenge)


def new_pkce_verifier() -> str:
    return secrets.token_urlsafe(48)[:64]


# --- replay cache ------------------------------------------------------------

@dataclass
class ReplayCache:
    """Remembers (scope-key, jti) pairs; eviction is by age or capacity, oldest first."""

    window: int = REPLAY_WINDOW_S
    capacity: int = REPLAY_CAPACITY
    _seen: "OrderedDict[tuple[str, str], float]" = field(default_factory=OrderedDict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _evict(self, now: float) -> None:
        while self._seen:
            key, inserted = next(iter(self._seen.items()))
            if now - inserted < self.window and len(self._seen) <= self.capacity:
                break
            self._seen.popitem(last=False)

    def check_and_add(self, scope_key: str, jti: str, now: float) -> bool:
        """Atomically record ``jti``; False if it was already present."""
        with self._lock:
            self._evict(now)
            if (scope_key, jti) in self._seen:
                return False
            self._seen[(scope_key, jti)] = now
            self._evict(now)
            return True

    def __contains__(self, item: tuple[str, str]) -> bool:
        with self._lock:
            return item in self._seen

    def __len__(self) -> int:
        return len(self._seen)


# --- sender proofs -----------------------------------------------------------

def normalize_htu(uri: str) -> str:
    parts = urlsplit(uri)
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path or "/", "", ""))


@dataclass(frozen=True)
class SenderProof:
    htm: str
    htu: str
    iat: int
    jti: str
    public_key: bytes
    signature: bytes
    ath: Optional[str] = None
    wire: str = ""

    @property
    def thumbprint(self) -> str:
        return derive_thumbprint(self.public_key)

    @classmethod
    def parse(cls, wire: str) -> "SenderProof":
        if not isinstance(wire, str) or wire.count(".") != 2:
            raise ProofError("proof is not a three-segment envelope", code="malformed_proof")
        head_seg, body_seg, sig_seg = wire.split(".")
        try:
            header, body = _decode_segment(head_seg), _decode_segment(body_seg)
            if header.get("typ") != PROOF_TYP or header.get("alg") != Algorithm.ED25519.value:
                raise MalformedToken("bad proof header")
            return cls(
                htm=str(body["htm"]), htu=str(body["htu"]), iat=int(body["iat"]),
                jti=str(body["jti"]), ath=body.get("ath"),
                public_key=b64url_decode(header["pub"]), signature=b64url_decode(sig_seg),
                wire=wire,
            )
        except (MalformedToken, KeyError, TypeError, ValueError) as exc:
            raise ProofError(f"malformed proof: {exc}", code="malformed_proof") from None


def make_sender_proof(method: str, uri: str, token_wire: str | None, key: KeyPair,
                      now: int | None = None, jti: str | None = None) -> SenderProof:
    if key.algorithm is not Algorithm.ED25519:
        raise UnsupportedAlgorithm("sender proofs require an Ed25519 key")
    header = {"alg": key.algorithm.value, "typ": PROOF_TYP, "pub": b64url_encode(key.public_key)}
    body = {
        "htm": method.upper(),
        "htu": normalize_htu(uri),
        "iat": int(time.time() if now is None else now),
        "jti": jti or random_id(96),
    }
    if token_wire is not None:
        body["ath"] = token_hash(token_wire)
    return SenderProof.parse(_encode_envelope(header, body, key))


def verify_sender_proof(proof: SenderProof | str, method: str, uri: str,
                        token_wire: str | None, cnf_thumbprint: str,
                        cache: ReplayCache | None, now: int | None = None) -> SenderProof:
    """Accept (return the parsed proof) or raise ``ProofError`` naming the failed check.

    ``cache=None`` disables replay detection.
    """
    if isinstance(proof, str):
        proof = SenderProof.parse(proof)
    now = int(time.time() if now is None else now)
    head_seg, body_seg, _ = proof.wire.split(".")
    if len(proof.public_key) != 32 or not ed25519_verify(
            proof.public_key, proof.signature, f"{head_seg}.{body_seg}".encode("ascii")):
        raise ProofError("proof signature invalid", code="proof_signature")
    if not hmac.compare_digest(proof.thumbprint, cnf_thumbprint or ""):
        raise ProofError("proof key does not match bound key", code="proof_binding")
    if proof.htm != method.upper() or proof.htu != normalize_htu(uri):
        raise ProofError("proof htm/htu mismatch", code="proof_method_uri")
    if token_wire is not None:
        if proof.ath is None or not hmac.compare_digest(proof.ath, token_hash(token_wire)):
            raise ProofError("proof ath does not match token", code="proof_token_hash")
    if abs(now - proof.iat) > PROOF_FRESHNESS_S:
        raise ProofError("proof outside freshness window", code="proof_stale")
    if cache is not None and not cache.check_and_add(proof.thumbprint, proof.jti, now):
        raise ProofError("proof jti already seen", code="proof_replay")
    return proof
