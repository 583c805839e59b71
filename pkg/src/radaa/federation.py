"""Federated owner authentication behind a pluggable identity-provider interface."""
from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from typing import Mapping, Protocol


class FederationError(Exception):
    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class IdentityProvider(Protocol):
    idp_id: str

    def authenticate(self, credentials: Mapping[str, str]) -> str:
        """Return the provider's external identity for valid credentials."""
        ...


@dataclass
class StubIdentityProvider:
    """Static username/secret table."""

    idp_id: str
    secrets: dict[str, str] = field(default_factory=dict)

    def authenticate(self, credentials: Mapping[str, str]) -> str:
        username = credentials.get("username", "")
        secret = credentials.get("secret", "")
        expected = self.secrets.get(username)
        if expected is None or not hmac.compare_digest(expected.encode(), str(secret).encode()):
            raise FederationError("bad_credentials", f"{self.idp_id} rejected {username!r}")
        return f"{username}@{self.idp_id}"


@dataclass
class IdentityProviderBinding:
    idp_id: str
    subjects: dict[str, str] = field(default_factory=dict)


class Federation:
    def __init__(self):
        self._providers: dict[str, IdentityProvider] = {}
        self._bindings: dict[str, IdentityProviderBinding] = {}

    def register(self, provider: IdentityProvider, subjects: Mapping[str, str]) -> None:
        local = list(subjects.values())
        if len(local) != len(set(local)):
            raise ValueError(f"{provider.idp_id}: a local subject is bound to two identities")
        self._providers[provider.idp_id] = provider
        self._bindings[provider.idp_id] = IdentityProviderBinding(provider.idp_id, dict(subjects))

    def unregister(self, idp_id: str) -> None:
        self._providers.pop(idp_id, None)
        self._bindings.pop(idp_id, None)

    def __contains__(self, idp_id: str) -> bool:
        return idp_id in self._providers

    def authenticate(self, idp_id: str, credentials: Mapping[str, str]) -> str:
        provider = self._providers.get(idp_id)
        if provider is None:
            raise FederationError("unknown_idp", f"identity provider {idp_id!r} is not federated")
        external = provider.authenticate(credentials)
        try:
            return self._bindings[idp_id].subjects[external]
        except KeyError:
            raise FederationError("unbound_identity", f"{external} has no local subject") from None

    @classmethod
    def from_config(cls, idps: Mapping[str, Mapping[str, Mapping[str, str]]]) -> "Federation":
        """``{idp_id: {username: {"secret": ..., "subject": ...}}}``."""
        fed = cls()
        for idp_id, users in idps.items():
            provider = StubIdentityProvider(idp_id, {u: rec["secret"] for u, rec in users.items()})
            fed.register(provider, {f"{u}@{idp_id}": rec["subject"] for u, rec in users.items()})
        return fed
