import threading

import pytest
from hypothesis import given, settings, strategies as st

from radaa.tokens import (
    Algorithm,
    InvalidClaims,
    InvalidKey,
    KeyPair,
    MalformedToken,
    PkceChallenge,
    PkceError,
    ProofError,
    ReplayCache,
    SealError,
    SignatureMismatch,
    SignedToken,
    TokenClaims,
    UnknownKey,
    _sign_unchecked,
    b64url_decode,
    b64url_encode,
    derive_thumbprint,
    make_pkce_challenge,
    make_sender_proof,
    new_pkce_verifier,
    random_id,
    seal_claims,
    sign_token,
    unseal_claims,
    verify_pkce,
    verify_sender_proof,
    verify_token,
)

NOW = 1_700_000_000
ED = KeyPair.generate("k-ed")
HS = KeyPair.generate("k-hs", Algorithm.HMAC_SHA256)
KEYS = {ED.key_id: ED.public_only(), HS.key_id: HS}


def claims(**kw):
    base = dict(iss="https://as.test", sub="alice", aud="rs-main", client_id="app", scope=("profile:read",),
                iat=NOW, exp=NOW + 300, jti=random_id(), tal=0)
    base.update(kw)
    return TokenClaims(**base)


scope_st = st.lists(st.from_regex(r"[a-z]{1,8}(:[a-z]{1,8}){0,2}", fullmatch=True), min_size=1, max_size=4,
                    unique=True)
text_st = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=24)


@st.composite
def claims_st(draw):
    iat = draw(st.integers(0, 2 ** 40))
    tal = draw(st.integers(0, 1))
    cnf = derive_thumbprint(draw(st.binary(min_size=32, max_size=32))) if tal else draw(
        st.one_of(st.none(), st.just(ED.thumbprint)))
    return TokenClaims(
        iss=draw(text_st), sub=draw(text_st), aud=draw(text_st), client_id=draw(text_st),
        scope=tuple(draw(scope_st)), iat=iat, exp=iat + draw(st.integers(1, 10 ** 6)), jti=random_id(),
        tal=tal, risk_class=draw(st.sampled_from(["LOW", "MEDIUM", "HIGH"])), cnf_thumbprint=cnf,
    )


# --- thumbprints -------------------------------------------------------------

def test_thumbprint_of_zero_key_matches_external_sha256():
    # openssl dgst -sha256 over 32 zero bytes, base64url without padding
    assert derive_thumbprint(bytes(32)) == "Zmh6rfhivXdsj8GLjp-OIAiXFIVu4jOzkCpZHQ1fKSU"


def test_thumbprint_deterministic_and_sensitive_to_one_byte():
    key = bytearray(ED.public_key)
    assert derive_thumbprint(bytes(key)) == derive_thumbprint(bytes(key))
    key[7] ^= 1
    assert derive_thumbprint(bytes(key)) != ED.thumbprint


def test_thumbprint_rejects_bad_key_length():
    with pytest.raises(InvalidKey):
        derive_thumbprint(b"short")


def test_keypair_invariants():
    with pytest.raises(InvalidKey):
        KeyPair("x", b"\0" * 31, b"", Algorithm.ED25519)
    with pytest.raises(InvalidKey):
        KeyPair("x", b"k" * 16, b"k" * 16, Algorithm.HMAC_SHA256)


def test_keypair_json_roundtrip():
    doc = ED.to_json()
    assert set(doc) == {"key_id", "algorithm", "public_key_b64", "private_key_b64"}
    assert KeyPair.from_json(doc) == ED


# --- signing -----------------------------------------------------------------

@pytest.mark.parametrize("key", [ED, HS], ids=["ed25519", "hmac"])
def test_sign_verify_roundtrip(key):
    c = claims(tal=1, cnf_thumbprint=ED.thumbprint)
    assert verify_token(sign_token(c, key).wire, KEYS) == c


def test_header_shape():
    tok = sign_token(claims(), ED)
    assert tok.header == {"alg": "EdDSA", "typ": "radaa+token", "kid": "k-ed"}
    assert tok.wire.count(".") == 2 and "=" not in tok.wire


def test_key_separation():
    other = KeyPair.generate("k-ed")
    c = claims()
    a, b = sign_token(c, ED), sign_token(c, other)
    assert a.wire != b.wire
    assert verify_token(a.wire, {"k-ed": ED}) == c
    with pytest.raises(SignatureMismatch):
        verify_token(a.wire, {"k-ed": other})
    with pytest.raises(SignatureMismatch):
        verify_token(b.wire, {"k-ed": ED})


@pytest.mark.parametrize("bad", [
    dict(exp=NOW - 1), dict(exp=NOW), dict(scope=()), dict(scope=("a", "a")), dict(tal=1), dict(risk_class="X"),
    dict(sub=""),
])
def test_invalid_claims_rejected_before_signing(bad):
    with pytest.raises(InvalidClaims):
        sign_token(claims(**bad), ED)


def test_expired_token_still_verifies():
    c = claims(exp=NOW - 1)
    wire = _sign_unchecked(c, ED).wire
    got = verify_token(wire, KEYS)
    assert got == c and got.exp < got.iat


def test_unknown_kid_and_malformed():
    with pytest.raises(UnknownKey):
        verify_token(sign_token(claims(), KeyPair.generate("nobody")).wire, KEYS)
    for junk in ["", "a.b", "a.b.c.d", "!!.??.**", "é.é.é"]:
        with pytest.raises(MalformedToken):
            verify_token(junk, KEYS)


def test_alg_confusion_rejected():
    # HMAC keyed with the public Ed25519 key, presented under the Ed25519 kid
    forged = KeyPair("k-ed", ED.public_key, ED.public_key, Algorithm.HMAC_SHA256)
    wire = sign_token(claims(), forged).wire
    with pytest.raises(SignatureMismatch):
        verify_token(wire, KEYS)


@settings(max_examples=1000, deadline=None)
@given(claims_st())
def test_roundtrip_property(c):
    assert verify_token(sign_token(c, ED).wire, KEYS) == c


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_byte_flip_tamper_property(data):
    wire = sign_token(claims(scope=("a", "b")), ED).wire
    head, body, sig = wire.split(".")
    seg_index = data.draw(st.sampled_from([0, 1]))
    raw = bytearray(b64url_decode([head, body][seg_index]))
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= data.draw(st.integers(1, 255))
    segs = [head, body]
    segs[seg_index] = b64url_encode(bytes(raw))
    with pytest.raises((SignatureMismatch, MalformedToken, UnknownKey)):
        verify_token(".".join(segs + [sig]), KEYS)


def test_signed_token_unverified_view():
    c = claims()
    tok = SignedToken(sign_token(c, ED).wire)
    assert tok.unverified_claims.sub == "alice"


# --- sealing -----------------------------------------------------------------

SECRET = bytes(range(32))


def test_seal_roundtrip_byte_identical():
    wire = sign_token(claims(), ED).wire
    assert unseal_claims(seal_claims(wire, SECRET), SECRET) == wire


def test_unseal_wrong_key_or_truncated():
    sealed = seal_claims(sign_token(claims(), ED).wire, SECRET)
    with pytest.raises(SealError):
        unseal_claims(sealed, bytes(32))
    with pytest.raises(SealError):
        unseal_claims(sealed[:20], SECRET)
    with pytest.raises(SealError):
        seal_claims("x", b"short")


def test_sealed_differs_from_plaintext_randomized():
    for _ in range(100):
        wire = sign_token(claims(sub=random_id(), scope=(random_id(32),)), ED).wire.encode()
        sealed = seal_claims(wire.decode(), SECRET)
        assert sealed != wire
        assert not any(wire[i:i + 16] in sealed for i in range(len(wire) - 15))


def test_sealing_is_randomized():
    wire = sign_token(claims(), ED).wire
    assert seal_claims(wire, SECRET) != seal_claims(wire, SECRET)


# --- PKCE --------------------------------------------------------------------

def test_pkce_rfc7636_appendix_b_vector():
    ch = make_pkce_challenge("dBjftJeZ4CVP-mB92K27uhbUJU1p1r_wW1gFWFOEjXk")
    assert ch.challenge == "E9Melhoa2OwvFrEMTJguCHaoeK1t8URWbuGJSstw-cM"
    assert ch.method == "S256"


def test_pkce_plain_rejected():
    with pytest.raises(PkceError):
        PkceChallenge("E9Melhoa2OwvFrEMTJguCHaoeK1t8URWbuGJSstw-cM", "plain")


@pytest.mark.parametrize("verifier", ["a" * 42, "a" * 129, "a" * 42 + "!", "é" * 43])
def test_pkce_verifier_bounds(verifier):
    with pytest.raises(PkceError):
        make_pkce_challenge(verifier)


def test_pkce_verifier_bounds_accepted():
    for n in (43, 128):
        v = "A" * n
        assert verify_pkce(v, make_pkce_challenge(v))


verifier_st = st.text(st.sampled_from("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"),
                      min_size=43, max_size=128)


@settings(max_examples=300, deadline=None)
@given(verifier_st, verifier_st)
def test_pkce_soundness(v, w):
    ch = make_pkce_challenge(v)
    assert verify_pkce(v, ch)
    assert verify_pkce(w, ch) == (make_pkce_challenge(w).challenge == ch.challenge)


def test_new_verifier_is_valid():
    v = new_pkce_verifier()
    assert 43 <= len(v) <= 128 and verify_pkce(v, make_pkce_challenge(v))


# --- sender proofs -----------------------------------------------------------

URL = "https://rs.test/resource/profile"


def _proof(key=ED, method="GET", url=URL, token="tok.en.wire", now=NOW, jti=None):
    return make_sender_proof(method, url, token, key, now=now, jti=jti)


def test_fresh_proof_accepted_then_replay_rejected():
    cache = ReplayCache()
    p = _proof()
    assert verify_sender_proof(p.wire, "GET", URL, "tok.en.wire", ED.thumbprint, cache, now=NOW).jti == p.jti
    with pytest.raises(ProofError) as exc:
        verify_sender_proof(p.wire, "GET", URL, "tok.en.wire", ED.thumbprint, cache, now=NOW + 1)
    assert exc.value.code == "proof_replay"


@pytest.mark.parametrize("kwargs,code", [
    (dict(cnf="other"), "proof_binding"),
    (dict(method="POST"), "proof_method_uri"),
    (dict(url="https://rs.test/resource/records"), "proof_method_uri"),
    (dict(token="another.token.wire"), "proof_token_hash"),
    (dict(now=NOW + 61), "proof_stale"),
    (dict(now=NOW - 61), "proof_stale"),
])
def test_proof_rejections_have_distinct_codes(kwargs, code):
    p = _proof()
    with pytest.raises(ProofError) as exc:
        verify_sender_proof(p, kwargs.get("method", "GET"), kwargs.get("url", URL),
                            kwargs.get("token", "tok.en.wire"),
                            ED.thumbprint if "cnf" not in kwargs else KeyPair.generate().thumbprint,
                            ReplayCache(), now=kwargs.get("now", NOW))
    assert exc.value.code == code


def test_proof_foreign_key_is_binding_error():
    attacker = KeyPair.generate()
    with pytest.raises(ProofError) as exc:
        verify_sender_proof(_proof(key=attacker), "GET", URL, "tok.en.wire", ED.thumbprint, ReplayCache(), now=NOW)
    assert exc.value.code == "proof_binding"


def test_proof_signature_error_on_tamper():
    p = _proof()
    head, body, sig = p.wire.split(".")
    raw = bytearray(b64url_decode(sig))
    raw[0] ^= 1
    with pytest.raises(ProofError) as exc:
        verify_sender_proof(f"{head}.{body}.{b64url_encode(bytes(raw))}", "GET", URL, "tok.en.wire",
                            ED.thumbprint, ReplayCache(), now=NOW)
    assert exc.value.code == "proof_signature"


def test_malformed_proof():
    with pytest.raises(ProofError) as exc:
        verify_sender_proof("nonsense", "GET", URL, None, ED.thumbprint, ReplayCache(), now=NOW)
    assert exc.value.code == "malformed_proof"


def test_proof_query_string_ignored_and_freshness_boundary():
    p = _proof(url=URL + "?x=1")
    verify_sender_proof(p, "get", URL, "tok.en.wire", ED.thumbprint, ReplayCache(), now=NOW + 60)


def test_proof_requires_ed25519():
    with pytest.raises(Exception):
        _proof(key=HS)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 299), min_size=1, max_size=20))
def test_replay_monotone(offsets):
    cache = ReplayCache()
    assert cache.check_and_add("k", "j", NOW)
    for off in sorted(offsets):
        assert not cache.check_and_add("k", "j", NOW + off)


def test_replay_window_expiry_and_capacity():
    cache = ReplayCache(window=300, capacity=3)
    assert cache.check_and_add("k", "a", NOW)
    assert cache.check_and_add("k", "a", NOW + 300)
    for j in "bcd":
        cache.check_and_add("k", j, NOW + 301)
    assert ("k", "a") not in cache and len(cache) == 3
    assert cache.check_and_add("other", "b", NOW + 301)


def test_replay_cache_atomic_under_concurrency():
    for _ in range(20):
        cache = ReplayCache()
        barrier = threading.Barrier(16)
        results = []

        def go():
            barrier.wait()
            results.append(cache.check_and_add("k", "same", NOW))

        threads = [threading.Thread(target=go) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results.count(True) == 1
