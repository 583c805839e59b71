"""Acceptance suite: one group of tests per criterion, summarized at the end of the run."""
import random
import threading
import time

import pytest

from radaa.cli import main
from radaa.config import Lifetimes
from radaa.context import Evidence
from radaa.deployment import FAULTS, Deployment, ManualClock
from radaa.engine import (
    FeatureVector,
    KnnModel,
    Posture,
    RiskClass,
    Source,
    TransactionContext,
    classify,
    extract_features,
    haversine_km,
    rule_score,
)
from radaa.errors import OAuthError
from radaa.federation import StubIdentityProvider
from radaa.harness import FAULT_ROWS, Scenario, harness_config, run_all
from radaa.store import AuditLog, Store
from radaa.tokens import (
    KeyPair,
    MalformedToken,
    ProofError,
    ReplayCache,
    SignatureMismatch,
    TokenClaims,
    UnknownKey,
    b64url_decode,
    b64url_encode,
    make_pkce_challenge,
    make_sender_proof,
    random_id,
    seal_claims,
    sign_token,
    unseal_claims,
    verify_pkce,
    verify_sender_proof,
    verify_token,
)
from starlette.testclient import TestClient

from helpers import AS, GOOD, RS, Driver

c1 = pytest.mark.criterion(1)
c2 = pytest.mark.criterion(2)
c3 = pytest.mark.criterion(3)
c4 = pytest.mark.criterion(4)
c5 = pytest.mark.criterion(5)
c6 = pytest.mark.criterion(6)
c7 = pytest.mark.criterion(7)
c8 = pytest.mark.criterion(8)


def fresh():
    return Driver(Deployment(harness_config(), clock=ManualClock(), store=Store(), audit=AuditLog()))


# --- 1 -----------------------------------------------------------------------

@c1
def test_resilience_matrix_reproduction(tmp_path, capsys):
    report = tmp_path / "matrix.json"
    start = time.perf_counter()
    code = main(["simulate", "--scenario", "all", "--report", str(report)])
    elapsed = time.perf_counter() - start
    assert code == 0 and elapsed < 60
    import json

    rows = {r["id"]: r for r in json.loads(report.read_text())["results"]}
    assert len(rows) == 9
    assert rows["HONEST_FLOW"]["blocked"] is False
    assert all(rows[s.value]["blocked"] for s in Scenario if s is not Scenario.HONEST_FLOW)


# --- 2 -----------------------------------------------------------------------

@c2
@pytest.mark.parametrize("fault", sorted(FAULTS))
def test_fault_injection_soundness(fault):
    matrix = run_all([fault])
    assert not matrix[FAULT_ROWS[fault]].passed and not matrix.pass_


# --- 3 -----------------------------------------------------------------------

@c3
def test_authentication_required():
    drv = fresh()
    par, _ = drv.par()
    with pytest.raises(OAuthError) as exc:
        drv.authorize(par["request_uri"], credentials={"username": "alice", "secret": "guess"})
    assert exc.value.error == "access_denied"


@c3
def test_adaptive_engine_alters_outcomes_by_class():
    outcomes = {}
    for label, evidence, prep in [
        ("LOW", GOOD, None),
        ("MEDIUM", Evidence("198.51.100.7", "new-phone", (51.5074, -0.1278)), "escalate"),
        ("HIGH", Evidence("203.0.113.66", "bot", (-33.8688, 151.2093)), "nids"),
    ]:
        drv = fresh()
        if prep == "escalate":
            drv.d.engine.escalate()
        if prep == "nids":
            drv.d.signals.nids_flagged.add("203.0.113.66")
        try:
            par, _ = drv.par("tal0-app", evidence=evidence)
            drv.authorize(par["request_uri"], "tal0-app", evidence=evidence)
            outcomes[label] = "code"
        except OAuthError as exc:
            outcomes[label] = exc.error
    assert outcomes == {"LOW": "code", "MEDIUM": "step_up_required", "HIGH": "risk_denied"}


@c3
def test_federated_authentication_two_idps_one_subject():
    subjects = set()
    for idp, creds in [("idp-corp", {"username": "alice", "secret": "alice-pw"}),
                       ("idp-social", {"username": "alice.s", "secret": "alice-social-pw"})]:
        drv = fresh()
        par, v = drv.par()
        code = drv.authorize(par["request_uri"], idp=idp, credentials=creds)["code"]
        subjects.add(verify_token(drv.token(code, v).access_token, drv.server.verification_keys).sub)
    assert subjects == {"alice"}


@c3
def test_delegated_authorization_scoped_tokens():
    drv = fresh()
    par, v = drv.par(scopes=("profile:read", "records:read"))
    code = drv.authorize(par["request_uri"], consent=("profile:read",))["code"]
    tok = drv.token(code, v)
    assert verify_token(tok.access_token, drv.server.verification_keys).scope == ("profile:read",)
    rs = drv.d.resource_servers["rs-main"]
    proof = make_sender_proof("GET", rs.resource_uri("records"), tok.access_token, drv.key, now=drv.now()).wire
    d = rs.access_resource(tok.access_token, proof, "GET", rs.resource_uri("records"), rs.resources["records"],
                           GOOD, "PoP")
    assert d.reason == "insufficient_scope"


@c3
def test_decoupled_authn_and_authz_idp_swap():
    drv = fresh()
    before = drv.login()
    drv.server.federation.unregister("idp-corp")
    drv.server.federation.register(StubIdentityProvider("idp-new", {"alice2": "pw2"}), {"alice2@idp-new": "alice"})
    par, v = drv.par()
    code = drv.authorize(par["request_uri"], idp="idp-new", credentials={"username": "alice2", "secret": "pw2"})["code"]
    after = drv.token(code, v)
    keys = drv.server.verification_keys
    a, b = verify_token(before.access_token, keys), verify_token(after.access_token, keys)
    assert (a.sub, a.aud, a.scope, after.expires_in) == (b.sub, b.aud, b.scope, before.expires_in)


@c3
def test_confidentiality_and_non_repudiation():
    drv = fresh()
    wire = drv.login().access_token
    secret = bytes(range(32))
    sealed = seal_claims(wire, secret)
    assert b"alice" not in sealed and unseal_claims(sealed, secret) == wire
    head, body, sig = wire.split(".")
    forged = head + "." + b64url_encode(b64url_decode(body).replace(b"alice", b"mallo")) + "." + sig
    with pytest.raises(SignatureMismatch):
        verify_token(forged, drv.server.verification_keys)


@c3
def test_audience_binding_denial():
    drv = fresh()
    tok = drv.login("tal0-app", resource="rs-partner")
    rs = drv.d.resource_servers["rs-main"]
    d = rs.access_resource(tok.access_token, None, "GET", rs.resource_uri("profile"), rs.resources["profile"],
                           GOOD, "Bearer")
    assert (d.status, d.detail) == (401, "audience mismatch")


@c3
def test_trust_relationship_levels():
    drv = fresh()
    t1, t0 = drv.login(), drv.login("tal0-app")
    assert (t1.expires_in, t1.token_type, bool(t1.refresh_token)) == (900, "radaa-pop", True)
    assert (t0.expires_in, t0.token_type, t0.refresh_token) == (300, "bearer", None)


@c3
def test_time_limited_validity():
    drv = fresh()
    wire = drv.login().access_token
    rs = drv.d.resource_servers["rs-main"]
    exp = verify_token(wire, drv.server.verification_keys).exp
    drv.clock.t = exp + 1
    proof = make_sender_proof("GET", rs.resource_uri("profile"), wire, drv.key, now=drv.now()).wire
    d = rs.access_resource(wire, proof, "GET", rs.resource_uri("profile"), rs.resources["profile"], GOOD, "PoP")
    assert (d.status, d.detail) == (401, "token expired")


@c3
def test_revocation_denial():
    drv = fresh()
    wire = drv.login().access_token
    rs = drv.d.resource_servers["rs-main"]

    def access():
        proof = make_sender_proof("GET", rs.resource_uri("profile"), wire, drv.key, now=drv.now()).wire
        return rs.access_resource(wire, proof, "GET", rs.resource_uri("profile"), rs.resources["profile"], GOOD, "PoP")

    assert access().allowed
    drv.server.revoke(wire)
    assert access().detail == "token revoked"


@c3
def test_rest_json_endpoints_respond():
    drv = fresh()
    as_client = TestClient(drv.d.as_app(), base_url=AS)
    rs_client = TestClient(drv.d.rs_app("rs-main"), base_url=RS)
    for path in ["/par", "/authorize", "/token", "/refresh", "/revoke", "/introspect", "/exchange", "/step-up"]:
        r = as_client.post(path, json={})
        assert r.headers["content-type"] == "application/json" and "error" in r.json()
    assert rs_client.get("/resource/profile").json()["error"] == "invalid_token"


@c3
def test_ml_classifier_selectable_via_config():
    cfg = harness_config()
    cfg.risk.classifier = "knn"
    d = Deployment(cfg, clock=ManualClock(), store=Store(), audit=AuditLog())
    d.engine.observe(FeatureVector.of([0, 0, 0, 0, 0]), RiskClass.LOW)
    ctx = TransactionContext(subject="alice", client_id="c", tal=1)
    assert d.engine.assess(ctx, record=False).source is Source.KNN


# --- 4 -----------------------------------------------------------------------

@c4
def test_token_core_property_suites():
    rng = random.Random(2024)
    key = KeyPair.generate("acc")
    keys = {"acc": key.public_only()}
    start = time.perf_counter()
    failures = 0

    for i in range(1000):
        iat = rng.randrange(2 ** 31)
        tal = rng.randint(0, 1)
        c = TokenClaims(
            iss=random_id(), sub=random_id(), aud=random_id(), client_id=random_id(),
            scope=tuple(f"s{j}:{rng.random():.4f}" for j in range(rng.randint(1, 4))), iat=iat,
            exp=iat + rng.randint(1, 10 ** 6), jti=random_id(), tal=tal,
            risk_class=rng.choice(["LOW", "MEDIUM", "HIGH"]), cnf_thumbprint=key.thumbprint if tal else None)
        failures += verify_token(sign_token(c, key).wire, keys) != c

        wire = sign_token(c, key).wire
        segs = wire.split(".")
        idx = rng.randint(0, 1)
        raw = bytearray(b64url_decode(segs[idx]))
        raw[rng.randrange(len(raw))] ^= rng.randint(1, 255)
        segs[idx] = b64url_encode(bytes(raw))
        try:
            verify_token(".".join(segs), keys)
            failures += 1
        except (SignatureMismatch, MalformedToken, UnknownKey):
            pass

    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
    for _ in range(1000):
        v = "".join(rng.choice(alphabet) for _ in range(rng.randint(43, 128)))
        w = "".join(rng.choice(alphabet) for _ in range(rng.randint(43, 128)))
        ch = make_pkce_challenge(v)
        failures += not verify_pkce(v, ch)
        failures += verify_pkce(w, ch) != (make_pkce_challenge(w).challenge == ch.challenge)

    sender = KeyPair.generate()
    for _ in range(200):
        cache = ReplayCache()
        t0 = 1_700_000_000
        p = make_sender_proof("GET", "https://rs/x", "t.o.k", sender, now=t0)
        verify_sender_proof(p, "GET", "https://rs/x", "t.o.k", sender.thumbprint, cache, now=t0)
        for off in sorted(rng.sample(range(1, 60), 5)):
            try:
                verify_sender_proof(p, "GET", "https://rs/x", "t.o.k", sender.thumbprint, cache, now=t0 + off)
                failures += 1
            except ProofError as exc:
                failures += exc.code != "proof_replay"

    elapsed = time.perf_counter() - start
    assert failures == 0 and elapsed < 30


# --- 5 -----------------------------------------------------------------------

@c5
def test_engine_numerics():
    assert abs(rule_score(FeatureVector.of([0.8, 1, 0, 0, 0])) - 0.45) <= 1e-9
    assert abs(haversine_km((40.7128, -74.0060), (51.5074, -0.1278)) - 5570) <= 10
    assert classify(0.35) is RiskClass.MEDIUM and classify(0.35 - 1e-12) is RiskClass.LOW
    assert classify(0.70) is RiskClass.HIGH and classify(0.70 - 1e-12) is RiskClass.MEDIUM


# --- 6 -----------------------------------------------------------------------

@c6
@pytest.mark.parametrize("seed", range(5))
def test_classifier_agreement(seed):
    rng = random.Random(seed)
    data = []
    for _ in range(500):
        last = ((rng.uniform(-90, 90), rng.uniform(-180, 180)), 0)
        ctx = TransactionContext(
            subject="s", client_id="c", ip_reputation=rng.random(),
            geo=(rng.uniform(-90, 90), rng.uniform(-180, 180)), timestamp=rng.randint(0, 86400),
            device_id="d", device_known=rng.random() < 0.5, nids_malicious=rng.random() < 0.5,
            tal=rng.randint(0, 1))
        f = extract_features(ctx, last)
        data.append((f, classify(rule_score(f))))
    rng.shuffle(data)
    model = KnnModel(k=5, samples=data[:400])
    agree = sum(model.classify(f) is label for f, label in data[400:]) / 100
    assert agree >= 0.90


# --- 7 -----------------------------------------------------------------------

@c7
def test_monotonicity():
    rng = random.Random(99)
    for _ in range(1000):
        f = FeatureVector.of([rng.random() for _ in range(5)])
        classes = [classify(rule_score(f, p)) for p in Posture]
        assert classes == sorted(classes)
        i = rng.randrange(5)
        raised = list(f)
        raised[i] = rng.uniform(raised[i], 1.0)
        posture = rng.choice(list(Posture))
        assert rule_score(FeatureVector.of(raised), posture) >= rule_score(f, posture)


# --- 8 -----------------------------------------------------------------------

def race(fn, n=16):
    barrier = threading.Barrier(n)
    wins = []
    lock = threading.Lock()

    def go():
        barrier.wait()
        try:
            result = fn()
        except OAuthError:
            return
        with lock:
            wins.append(result)

    threads = [threading.Thread(target=go) for _ in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return len(wins)


@c8
@pytest.mark.parametrize("kind", ["code", "par", "refresh"])
def test_single_use_under_concurrency(kind):
    drv = fresh()
    violations = 0
    for _ in range(50):
        drv.clock.advance(61)  # keep the PAR rate limit window fresh
        if kind == "code":
            code, verifier = drv.code("tal0-app")
            wins = race(lambda: drv.token(code, verifier, "tal0-app"))
        elif kind == "par":
            par, _ = drv.par()
            wins = race(lambda: drv.authorize(par["request_uri"]))
        else:
            tok = drv.login()
            wins = race(lambda: drv.refresh(tok.refresh_token))
        violations += wins != 1
    assert violations == 0
