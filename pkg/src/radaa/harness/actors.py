"""Scripted protocol participants: client applications and resource owners."""
from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from radaa.harness.network import Network, Profile
from radaa.http import PROOF_HEADER
from radaa.tokens import KeyPair, make_pkce_challenge, make_sender_proof, new_pkce_verifier


class FlowError(Exception):
    """A protocol step did not succeed; ``code`` is what the client observed."""

    def __init__(self, step: str, code: str):
        super().__init__(f"{step}: {code}")
        self.step = step
        self.code = code


def observed(response: httpx.Response) -> str:
    if response.status_code < 300:
        return f"{response.status_code}"
    try:
        body = response.json()
    except ValueError:
        return f"{response.status_code}"
    text = f"{response.status_code} {body.get('error', '')}".strip()
    if response.status_code == 401 and body.get("error") == "invalid_token" and body.get("error_description"):
        text += f" ({body['error_description']})"
    return text


@dataclass
class Owner:
    idp: str
    username: str
    secret: str
    profile: Profile
    subject: str = ""


@dataclass
class Session:
    verifier: str
    state: str
    expected_issuer: str
    token_endpoint: str
    request_uri: Optional[str] = None


@dataclass
class ClientApp:
    net: Network
    clock: Callable[[], float]
    client_id: str
    redirect_uri: str
    profile: Profile
    as_url: str
    issuer: str
    key: Optional[KeyPair] = None
    check_iss: bool = True
    sessions: list[Session] = field(default_factory=list)

    def proof(self, method: str, url: str, token: Optional[str] = None) -> dict[str, str]:
        if self.key is None:
            return {}
        p = make_sender_proof(method, url, token, self.key, now=int(self.clock()))
        return {PROOF_HEADER: p.wire}

    def post(self, url: str, body: dict, token: Optional[str] = None) -> httpx.Response:
        return self.net.request("POST", url, self.profile, headers=self.proof("POST", url, token), json=body)

    def begin(self, scopes: list[str], resource: Optional[str] = None, expected_issuer: Optional[str] = None,
              token_endpoint: Optional[str] = None, **extra) -> tuple[Session, httpx.Response]:
        session = Session(
            verifier=new_pkce_verifier(), state=secrets.token_urlsafe(16),
            expected_issuer=expected_issuer or self.issuer,
            token_endpoint=token_endpoint or f"{self.as_url}/token",
        )
        body = {
            "client_id": self.client_id, "scope": scopes, "redirect_uri": self.redirect_uri,
            "code_challenge": make_pkce_challenge(session.verifier).challenge,
            "code_challenge_method": "S256", "state": session.state, **extra,
        }
        if resource:
            body["resource"] = resource
        response = self.post(f"{self.as_url}/par", body)
        if response.status_code == 201:
            session.request_uri = response.json()["request_uri"]
        self.sessions.append(session)
        return session, response

    def callback(self, session: Session, auth_response: dict) -> httpx.Response:
        """Handle an authorization response: validate ``iss`` then redeem the code."""
        if self.check_iss and auth_response.get("iss") != session.expected_issuer:
            raise FlowError("callback", "iss_mismatch")
        body = {"client_id": self.client_id, "code": auth_response["code"], "code_verifier": session.verifier}
        return self.post(session.token_endpoint, body)

    def fetch(self, url: str, token_response: dict) -> httpx.Response:
        token = token_response["access_token"]
        scheme = "PoP" if token_response.get("token_type") == "radaa-pop" else "Bearer"
        headers = {"Authorization": f"{scheme} {token}"}
        if scheme == "PoP":
            headers.update(self.proof("GET", url, token))
        return self.net.request("GET", url, self.profile, headers=headers)

    def refresh(self, refresh_token: str) -> httpx.Response:
        return self.post(f"{self.as_url}/refresh", {"client_id": self.client_id, "refresh_token": refresh_token})


def authorize(net: Network, as_url: str, owner: Owner, request_uri: str, consent: list[str],
              client_id: Optional[str] = None, step_up_id: Optional[str] = None) -> httpx.Response:
    body = {"request_uri": request_uri, "idp": owner.idp, "username": owner.username,
            "secret": owner.secret, "consent": consent}
    if client_id:
        body["client_id"] = client_id
    if step_up_id:
        body["step_up_id"] = step_up_id
    return net.request("POST", f"{as_url}/authorize", owner.profile, json=body)


def login(client: ClientApp, owner: Owner, scopes: list[str], resource: Optional[str] = None,
          outbox: Optional[dict] = None) -> dict:
    """Full PAR -> authorize -> token flow; answers one step-up from ``outbox`` when asked."""
    session, r = client.begin(scopes, resource=resource)
    if r.status_code != 201:
        raise FlowError("par", observed(r))
    r = authorize(client.net, client.as_url, owner, session.request_uri, scopes, client.client_id)
    if r.status_code == 401 and r.json().get("error") == "step_up_required" and outbox is not None:
        challenge_id = r.json()["challenge_id"]
        _, answer = outbox[owner.subject or owner.username]
        client.net.request("POST", f"{client.as_url}/step-up", owner.profile,
                           json={"challenge_id": challenge_id, "answer": answer})
        r = authorize(client.net, client.as_url, owner, session.request_uri, scopes, client.client_id,
                      step_up_id=challenge_id)
    if r.status_code != 200:
        raise FlowError("authorize", observed(r))
    r = client.callback(session, r.json())
    if r.status_code != 200:
        raise FlowError("token", observed(r))
    return r.json()
