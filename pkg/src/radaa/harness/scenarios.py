"""Honest and adversarial scripts run against a fresh deployment each.

Each attack scenario defines the attacker's success condition; the row is
``blocked`` when that condition is never reached. HONEST_FLOW is the
benign baseline and is expected to complete.
"""
from __future__ import annotations

import enum
import json
import secrets
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from radaa.config import Config, config_from_dict
from radaa.context import Evidence
from radaa.deployment import Deployment, ManualClock
from radaa.engine import RiskClass
from radaa.harness.actors import ClientApp, FlowError, Owner, authorize, login, observed
from radaa.harness.network import Network, Profile, attacker_as_app
from radaa.tokens import KeyPair, b64url_encode
from radaa.http import CSP_HEADER, CSP_VALUE, PROOF_HEADER

AS_URL = "https://as.radaa.test"
RS_URL = "https://rs.radaa.test"
PARTNER_URL = "https://partner.radaa.test"
ATTACKER_AS_URL = "https://attacker-as.test"
EVIL_ORIGIN = "https://evil.example"

HONEST_SCOPES = ["profile:read", "records:read"]
FLOOD_SIZE = 200


class Scenario(enum.Enum):
    HONEST_FLOW = "HONEST_FLOW"
    CLIENT_IMPERSONATION = "CLIENT_IMPERSONATION"
    CSRF = "CSRF"
    MIXUP = "MIXUP"
    CORS_PROBE = "CORS_PROBE"
    XSS_HEADER = "XSS_HEADER"
    DDOS_PAR = "DDOS_PAR"
    TOKEN_INJECTION = "TOKEN_INJECTION"
    TOKEN_REPLAY = "TOKEN_REPLAY"

    @property
    def expected_blocked(self) -> bool:
        return self is not Scenario.HONEST_FLOW

    @property
    def description(self) -> str:
        return DESCRIPTIONS[self]


DESCRIPTIONS = {
    Scenario.HONEST_FLOW: "legitimate TAL1 client completes PAR, login, token, refresh and resource access",
    Scenario.CLIENT_IMPERSONATION: "attacker presents the honest client_id without the client's key",
    Scenario.CSRF: "attacker's authorization code injected into the victim's session",
    Scenario.MIXUP: "attacker-operated issuer poses as the authorization server for a session",
    Scenario.CORS_PROBE: "cross-origin calls to introspection/revocation with forged Origin headers",
    Scenario.XSS_HEADER: "responses lacking CSP or reflecting script-bearing parameters",
    Scenario.DDOS_PAR: "concurrent PAR flood with external request_uri references",
    Scenario.TOKEN_INJECTION: "leaked access tokens injected into other clients and audiences",
    Scenario.TOKEN_REPLAY: "captured resource request and proof replayed verbatim",
}

# fault name -> the row that mitigation protects
FAULT_ROWS = {
    "pkce": Scenario.CSRF,
    "iss-check": Scenario.MIXUP,
    "sender-proof": Scenario.TOKEN_REPLAY,
    "replay-cache": Scenario.TOKEN_REPLAY,
    "audience-check": Scenario.TOKEN_INJECTION,
    "rate-limit": Scenario.DDOS_PAR,
    "csp-header": Scenario.XSS_HEADER,
    "binding": Scenario.CLIENT_IMPERSONATION,
}


@dataclass
class ScenarioResult:
    id: Scenario
    attempted: int
    blocked: bool
    evidence: list[tuple[str, str]] = field(default_factory=list)

    @property
    def expected_blocked(self) -> bool:
        return self.id.expected_blocked

    @property
    def passed(self) -> bool:
        return self.blocked == self.expected_blocked

    def to_json(self) -> dict:
        return {"id": self.id.value, "attempted": self.attempted, "expected_blocked": self.expected_blocked,
                "blocked": self.blocked, "pass": self.passed, "evidence": [list(e) for e in self.evidence]}


class IncompleteMatrix(ValueError):
    pass


@dataclass
class ResilienceMatrix:
    results: list[ScenarioResult]

    @property
    def pass_(self) -> bool:
        return self.complete and all(r.passed for r in self.results)

    @property
    def complete(self) -> bool:
        ids = [r.id for r in self.results]
        return len(ids) == len(Scenario) and set(ids) == set(Scenario)

    def __getitem__(self, scenario: "Scenario | str") -> ScenarioResult:
        scenario = Scenario(scenario) if isinstance(scenario, str) else scenario
        for r in self.results:
            if r.id is scenario:
                return r
        raise KeyError(scenario)

    def to_json(self) -> dict:
        ordered = sorted(self.results, key=lambda r: list(Scenario).index(r.id))
        return {"pass": self.pass_, "results": [r.to_json() for r in ordered]}


# --- deployment fixture ------------------------------------------------------

def harness_config() -> Config:
    """Seeded desk-scale deployment used by every scenario."""
    return config_from_dict({
        "issuer_id": AS_URL,
        "as_base_url": AS_URL,
        "ip_reputation": {"198.51.100.7": 0.0, "203.0.113.66": 1.0},
        "idps": {
            "idp-corp": {"alice": {"secret": "alice-pw", "subject": "alice"},
                         "mallory": {"secret": "mallory-pw", "subject": "mallory"}},
            "idp-social": {"alice.s": {"secret": "alice-social-pw", "subject": "alice"}},
        },
        "known_devices": {"alice": ["alice-laptop"], "honest-app": ["alice-laptop"],
                          "lite-app": ["alice-laptop"]},
        "resource_servers": [
            {"rs_id": "rs-main", "base_url": RS_URL,
             "scopes": ["profile:read", "records:read", "records:write:elevated"],
             "resources": [
                 {"path": "profile", "required_scope": "profile:read", "payload": "alice-profile"},
                 {"path": "records", "required_scope": "records:read", "payload": "alice-records"},
                 {"path": "admin", "required_scope": "records:write:elevated", "payload": "admin-console"},
             ]},
            {"rs_id": "rs-partner", "base_url": PARTNER_URL, "scopes": ["profile:read"],
             "sealing_key_b64": b64url_encode(secrets.token_bytes(32)),
             "resources": [{"path": "profile", "required_scope": "profile:read", "payload": "partner-profile"}]},
        ],
        "default_audience": "rs-main",
    })


HONEST_PROFILE = Profile("alice-browser", "198.51.100.7", "alice-laptop", (51.5074, -0.1278))
# a careful attacker: clean residential IP, so only the mitigation under test stands in the way
STEALTH_PROFILE = Profile("attacker-proxy", "192.0.2.10", "attacker-box")
FLOOD_PROFILE = Profile("botnet", "203.0.113.66", "bot")


class World:
    """A fresh deployment plus the seeded actors that drive it."""

    def __init__(self, deployment: Deployment):
        self.deployment = deployment
        self.clock = deployment.clock
        self.server = deployment.auth_server
        self.net = Network(deployment.apps())
        self.attacker_received: list[dict] = []
        self.net.add_host(ATTACKER_AS_URL, attacker_as_app(self.attacker_received))
        self.honest_key = KeyPair.generate("honest-app-key")
        self.honest = self._client("honest-app", "https://honest.example/cb", HONEST_PROFILE, self.honest_key,
                                   ["profile:read", "records:read", "records:write:elevated"])
        self.lite = self._client("lite-app", "https://lite.example/cb", HONEST_PROFILE, None, ["profile:read"])
        self.mallory_app = self._client("mallory-app", "https://mallory.example/cb", FLOOD_PROFILE, None,
                                        ["profile:read"])
        self.alice = Owner("idp-corp", "alice", "alice-pw", HONEST_PROFILE, "alice")
        self.mallory = Owner("idp-corp", "mallory", "mallory-pw", STEALTH_PROFILE, "mallory")
        self.attack_contexts: list[tuple[Profile, str, str, int]] = []
        self.honest_contexts: list[tuple[Profile, str, str, int]] = []

    def _client(self, client_id, redirect, profile, key, scopes) -> ClientApp:
        if self.server.store.get("clients", client_id) is None:
            kwargs = {}
            if key is not None:
                nonce = self.server.registration_nonce()
                kwargs = {"public_key": key.public_key, "nonce": nonce, "nonce_signature": key.sign(nonce.encode())}
            self.server.register_client(client_id, [redirect], scopes, **kwargs)
        return ClientApp(self.net, self.clock, client_id, redirect, profile, AS_URL, AS_URL, key,
                         check_iss="iss-check" not in self.deployment.faults)

    def impostor(self, client_id: str, key: Optional[KeyPair], profile: Profile = STEALTH_PROFILE,
                 redirect: str = "https://honest.example/cb") -> ClientApp:
        return ClientApp(self.net, self.clock, client_id, redirect, profile, AS_URL, AS_URL, key)

    def note_attack(self, profile: Profile, subject: str, client_id: str, tal: int) -> None:
        self.attack_contexts.append((profile, subject, client_id, tal))

    def note_honest(self, profile: Profile, subject: str, client_id: str, tal: int) -> None:
        self.honest_contexts.append((profile, subject, client_id, tal))

    def honest_login(self, scopes=HONEST_SCOPES, resource: Optional[str] = None) -> dict:
        self.note_honest(HONEST_PROFILE, "alice", "honest-app", 1)
        return login(self.honest, self.alice, list(scopes), resource, self.server.step_up_outbox)

    def learn(self, blocked: bool, honest_ok: bool) -> None:
        """Label this run's contexts and feed them to the incremental classifier."""
        engine, signals = self.deployment.engine, self.deployment.signals
        now = int(self.clock())

        def features(entry):
            profile, subject, client_id, tal = entry
            ev = Evidence(profile.ip, profile.device_id, None)
            return engine.features(signals.context(ev, subject, client_id, tal, now))

        if blocked:
            for entry in self.attack_contexts:
                engine.observe(features(entry), RiskClass.HIGH)
        if honest_ok:
            for entry in self.honest_contexts:
                engine.observe(features(entry), RiskClass.LOW)


# --- scenario scripts --------------------------------------------------------

def _honest_flow(w: World) -> ScenarioResult:
    evidence = []
    ok = False
    try:
        tokens = w.honest_login()
        evidence.append(("login", "200"))
        r = w.honest.fetch(f"{RS_URL}/resource/profile", tokens)
        evidence.append(("resource:profile", observed(r)))
        first = r.status_code == 200 and r.content == b"alice-profile"
        r = w.honest.refresh(tokens["refresh_token"])
        evidence.append(("refresh", observed(r)))
        refreshed = r.json() if r.status_code == 200 else None
        second = False
        if refreshed:
            r = w.honest.fetch(f"{RS_URL}/resource/records", refreshed)
            evidence.append(("resource:records", observed(r)))
            second = r.status_code == 200 and r.content == b"alice-records"
        ok = first and second
    except FlowError as exc:
        evidence.append((exc.step, exc.code))
    w.learn(blocked=False, honest_ok=ok)
    return ScenarioResult(Scenario.HONEST_FLOW, 1, not ok, evidence)


def _client_impersonation(w: World) -> ScenarioResult:
    evidence = []
    success = False
    attempts = [("par:foreign-key", w.impostor("honest-app", KeyPair.generate("attacker-key"))),
                ("par:no-proof", w.impostor("honest-app", None))]
    for step, impostor in attempts:
        w.note_attack(STEALTH_PROFILE, "honest-app", "honest-app", 1)
        session, r = impostor.begin(HONEST_SCOPES)
        evidence.append((step, observed(r)))
        if r.status_code != 201:
            continue
        # the victim trusts the genuine client name and approves
        r = authorize(w.net, AS_URL, w.alice, session.request_uri, HONEST_SCOPES, "honest-app")
        evidence.append((f"{step}:authorize", observed(r)))
        if r.status_code != 200:
            continue
        r = impostor.callback(session, r.json())
        evidence.append((f"{step}:token", observed(r)))
        success = success or r.status_code == 200
    w.learn(blocked=not success, honest_ok=False)
    return ScenarioResult(Scenario.CLIENT_IMPERSONATION, len(attempts), not success, evidence)


def _csrf(w: World) -> ScenarioResult:
    evidence = []
    # attacker logs in through the honest client and keeps the resulting code
    attacker_session, r = w.honest.begin(["profile:read"])
    evidence.append(("attacker:par", observed(r)))
    r = authorize(w.net, AS_URL, w.mallory, attacker_session.request_uri, ["profile:read"], "honest-app")
    evidence.append(("attacker:authorize", observed(r)))
    planted = r.json()
    w.note_attack(STEALTH_PROFILE, "mallory", "honest-app", 1)
    # victim starts a login; the forged callback delivers the attacker's code into it
    victim_session, r = w.honest.begin(["profile:read"])
    evidence.append(("victim:par", observed(r)))
    r = w.honest.callback(victim_session, {"code": planted["code"], "iss": planted["iss"],
                                           "state": victim_session.state})
    evidence.append(("victim:token", observed(r)))
    success = r.status_code == 200
    w.learn(blocked=not success, honest_ok=False)
    return ScenarioResult(Scenario.CSRF, 1, not success, evidence)


def _mixup(w: World) -> ScenarioResult:
    evidence = []
    # the client believes this session belongs to the attacker's issuer
    session, r = w.honest.begin(HONEST_SCOPES, expected_issuer=ATTACKER_AS_URL,
                                token_endpoint=f"{ATTACKER_AS_URL}/token")
    evidence.append(("par", observed(r)))
    r = authorize(w.net, AS_URL, w.alice, session.request_uri, HONEST_SCOPES, "honest-app")
    evidence.append(("authorize", observed(r)))
    w.note_attack(STEALTH_PROFILE, "alice", "honest-app", 1)
    try:
        r = w.honest.callback(session, r.json())
        evidence.append(("callback", observed(r)))
    except FlowError as exc:
        evidence.append((exc.step, exc.code))
    success = any(body.get("code") for body in w.attacker_received)
    evidence.append(("attacker:harvested", "code" if success else "nothing"))
    w.learn(blocked=not success, honest_ok=False)
    return ScenarioResult(Scenario.MIXUP, 1, not success, evidence)


def _cors_probe(w: World) -> ScenarioResult:
    evidence = []
    tokens = w.honest_login()
    victim = tokens["access_token"]
    leaks = []

    def probe(step, method, path, origin_header, body=None, extra=None):
        headers = {"Origin": origin_header, **(extra or {})}
        r = w.net.request(method, f"{AS_URL}{path}", STEALTH_PROFILE, headers=headers, json=body)
        evidence.append((step, observed(r)))
        cors = [h for h in r.headers if h.lower().startswith("access-control-allow")]
        if cors:
            leaks.append(step)
        return r

    w.note_attack(STEALTH_PROFILE, "alice", "honest-app", 1)
    for path in ("/introspect", "/revoke"):
        probe(f"preflight{path}", "OPTIONS", path, EVIL_ORIGIN,
              extra={"Access-Control-Request-Method": "POST", "Access-Control-Request-Headers": PROOF_HEADER})
    r = probe("introspect:forged-origin", "POST", "/introspect", RS_URL, {"token": victim, "caller_id": "rs-main"})
    if r.status_code == 200 and r.json().get("active"):
        leaks.append("introspect")
    probe("revoke:forged-origin", "POST", "/revoke", AS_URL, {"token": victim, "client_id": "honest-app"})
    probe("revoke:foreign-client", "POST", "/revoke", EVIL_ORIGIN, {"token": victim, "client_id": "mallory-app"})
    r = w.honest.fetch(f"{RS_URL}/resource/profile", tokens)
    evidence.append(("victim:still-valid", observed(r)))
    if r.status_code != 200:
        leaks.append("revoked")
    success = bool(leaks)
    w.learn(blocked=not success, honest_ok=not success)
    return ScenarioResult(Scenario.CORS_PROBE, 5, not success, evidence)


def _xss_header(w: World) -> ScenarioResult:
    evidence = []
    start = len(w.net.log)
    tokens = w.honest_login()
    w.honest.fetch(f"{RS_URL}/resource/profile", tokens)
    w.net.request("GET", f"{AS_URL}/nowhere", STEALTH_PROFILE)
    w.net.request("GET", f"{RS_URL}/resource/missing", STEALTH_PROFILE)
    w.net.request("GET", f"{RS_URL}/resource/profile", STEALTH_PROFILE)
    w.net.request("OPTIONS", f"{AS_URL}/token", STEALTH_PROFILE)
    script = "<script>alert(document.cookie)</script>"
    w.note_attack(STEALTH_PROFILE, "lite-app", "lite-app", 0)
    _, r = w.lite.begin(["profile:read"], state=script)
    evidence.append(("par:script-state", observed(r)))
    reflected = script in r.text
    accepted = r.status_code == 201
    _, r = w.lite.begin(["profile:read"], redirect_hint="javascript:alert(1)")
    evidence.append(("par:script-param", observed(r)))
    reflected = reflected or "javascript:" in r.text
    accepted = accepted or r.status_code == 201
    responses = [resp for resp in w.net.log[start:] if resp.request.url.host != "attacker-as.test"]
    missing = sum(1 for resp in responses if resp.headers.get(CSP_HEADER) != CSP_VALUE)
    evidence.append(("csp:responses-checked", str(len(responses) >= 10)))
    evidence.append(("csp:missing", "none" if missing == 0 else "some"))
    success = missing > 0 or accepted or reflected
    w.learn(blocked=not success, honest_ok=False)
    return ScenarioResult(Scenario.XSS_HEADER, 2, not success, evidence)


def _ddos_par(w: World) -> ScenarioResult:
    evidence = []
    external = FLOOD_SIZE // 4
    plain = FLOOD_SIZE - external
    w.note_attack(FLOOD_PROFILE, "mallory-app", "mallory-app", 0)

    def flood(i: int, ref: bool):
        extra = {"request_uri": f"https://evil.example/requests/{i}"} if ref else {}
        _, r = w.mallory_app.begin(["profile:read"], **extra)
        return r.status_code, observed(r)

    honest_ok = False
    with ThreadPoolExecutor(max_workers=16) as pool:
        ref_results = list(pool.map(lambda i: flood(i, True), range(external)))
        honest_future = pool.submit(w.honest_login)
        plain_results = list(pool.map(lambda i: flood(i, False), range(plain)))
        try:
            tokens = honest_future.result()
            honest_ok = w.honest.fetch(f"{RS_URL}/resource/profile", tokens).status_code == 200
        except FlowError as exc:
            evidence.append((f"honest:{exc.step}", exc.code))
    ref_accepted = sum(1 for status, _ in ref_results if status == 201)
    accepted = sum(1 for status, _ in plain_results if status == 201) + ref_accepted
    for label, results in (("flood:external-ref", ref_results), ("flood:plain", plain_results)):
        for code in sorted({code for _, code in results}):
            evidence.append((label, code))
    # once the window has passed the escalated engine keeps refusing the flooding client
    w.clock.advance(61)
    _, r = w.mallory_app.begin(["profile:read"])
    evidence.append(("post-flood:par", observed(r)))
    accepted += r.status_code == 201
    evidence.append(("honest:completed", str(honest_ok)))
    limit = w.deployment.config.rate_limits.get("par_per_minute", 20)
    success = ref_accepted > 0 or accepted > limit or not honest_ok
    w.learn(blocked=not success, honest_ok=honest_ok)
    return ScenarioResult(Scenario.DDOS_PAR, FLOOD_SIZE + 1, not success, evidence)


def _token_injection(w: World) -> ScenarioResult:
    evidence = []
    leaked = w.honest_login()
    successes = 0
    # (a) leaked TAL1 token injected into the legitimate TAL0 client, which uses it as a bearer token
    r = w.lite.fetch(f"{RS_URL}/resource/profile", {"access_token": leaked["access_token"], "token_type": "bearer"})
    evidence.append(("inject:lite-app", observed(r)))
    successes += r.status_code == 200
    # (b) the attacker wraps it in a proof from its own key
    impostor = w.impostor("honest-app", KeyPair.generate("attacker-key"))
    r = impostor.fetch(f"{RS_URL}/resource/profile", leaked)
    evidence.append(("inject:attacker-proof", observed(r)))
    successes += r.status_code == 200
    w.note_attack(STEALTH_PROFILE, "alice", "honest-app", 1)
    # (c) a bearer token issued for the partner audience is replayed at the main resource server
    partner = login(w.lite, w.alice, ["profile:read"], resource="rs-partner", outbox=w.server.step_up_outbox)
    insider = w.impostor("lite-app", None)
    r = insider.fetch(f"{RS_URL}/resource/profile", partner)
    evidence.append(("inject:foreign-audience", observed(r)))
    successes += r.status_code == 200
    w.note_attack(STEALTH_PROFILE, "alice", "lite-app", 0)
    w.learn(blocked=successes == 0, honest_ok=False)
    return ScenarioResult(Scenario.TOKEN_INJECTION, 3, successes == 0, evidence)


def _token_replay(w: World) -> ScenarioResult:
    evidence = []
    tokens = w.honest_login()
    url = f"{RS_URL}/resource/records"
    r = w.honest.fetch(url, tokens)
    evidence.append(("honest:fetch", observed(r)))
    captured = dict(r.request.headers)
    replay_headers = {"Authorization": captured["authorization"], PROOF_HEADER: captured[PROOF_HEADER.lower()]}
    w.clock.advance(5)
    r = w.net.request("GET", url, STEALTH_PROFILE, headers=replay_headers)
    evidence.append(("replay:verbatim", observed(r)))
    w.note_attack(STEALTH_PROFILE, "alice", "honest-app", 1)
    success = r.status_code == 200
    w.learn(blocked=not success, honest_ok=False)
    return ScenarioResult(Scenario.TOKEN_REPLAY, 1, not success, evidence)


SCRIPTS: dict[Scenario, Callable[[World], ScenarioResult]] = {
    Scenario.HONEST_FLOW: _honest_flow,
    Scenario.CLIENT_IMPERSONATION: _client_impersonation,
    Scenario.CSRF: _csrf,
    Scenario.MIXUP: _mixup,
    Scenario.CORS_PROBE: _cors_probe,
    Scenario.XSS_HEADER: _xss_header,
    Scenario.DDOS_PAR: _ddos_par,
    Scenario.TOKEN_INJECTION: _token_injection,
    Scenario.TOKEN_REPLAY: _token_replay,
}


def new_deployment(faults: Iterable[str] = (), config: Optional[Config] = None) -> Deployment:
    return Deployment(config or harness_config(), faults=faults, clock=ManualClock())


def run_scenario(scenario: "Scenario | str", deployment: Deployment) -> ScenarioResult:
    scenario = Scenario(scenario) if isinstance(scenario, str) else scenario
    return SCRIPTS[scenario](World(deployment))


def run_all(faults: Iterable[str] = (), scenarios: Optional[Sequence["Scenario | str"]] = None,
            config_factory: Callable[[], Config] = harness_config) -> ResilienceMatrix:
    """Every scenario against its own fresh deployment."""
    chosen = [Scenario(s) if isinstance(s, str) else s for s in (scenarios or list(Scenario))]
    return ResilienceMatrix([
        run_scenario(s, Deployment(config_factory(), faults=faults, clock=ManualClock())) for s in chosen
    ])


def render_matrix(matrix: ResilienceMatrix) -> str:
    if not matrix.complete:
        raise IncompleteMatrix("matrix must cover all nine scenarios exactly once")
    rows = sorted(matrix.results, key=lambda r: list(Scenario).index(r.id))
    header = f"{'threat vector':<22}{'expected':<12}{'observed':<12}result"
    lines = [header, "-" * len(header)]
    for r in rows:
        expected = "blocked" if r.expected_blocked else "completes"
        seen = "blocked" if r.blocked else "completes"
        lines.append(f"{r.id.value:<22}{expected:<12}{seen:<12}{'PASS' if r.passed else 'FAIL'}")
    lines.append("-" * len(header))
    lines.append(f"matrix: {'PASS' if matrix.pass_ else 'FAIL'}")
    return "\n".join(lines) + "\n"


def render_json(matrix: ResilienceMatrix) -> str:
    return json.dumps(matrix.to_json(), indent=2, sort_keys=True) + "\n"
