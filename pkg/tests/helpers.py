"""Shared drivers for exercising a deployment through the Python API."""
from radaa.context import Evidence
from radaa.tokens import KeyPair, make_pkce_challenge, make_sender_proof, new_pkce_verifier

AS = "https://as.radaa.test"
RS = "https://rs.radaa.test"
GOOD = Evidence("198.51.100.7", "alice-laptop", (51.5074, -0.1278))
ALICE = {"username": "alice", "secret": "alice-pw"}


class Driver:
    def __init__(self, deployment):
        self.d = deployment
        self.server = deployment.auth_server
        self.clock = deployment.clock
        self.key = KeyPair.generate("honest-key")
        nonce = self.server.registration_nonce()
        self.tal1 = self.server.register_client(
            "tal1-app", ["https://app.example/cb"], ["profile:read", "records:read", "records:write:elevated"],
            public_key=self.key.public_key, nonce=nonce, nonce_signature=self.key.sign(nonce.encode()))
        self.tal0 = self.server.register_client("tal0-app", ["https://lite.example/cb"],
                                                ["profile:read", "records:write:elevated"])
        self.server.signals.remember_device("tal1-app", "alice-laptop")
        self.server.signals.remember_device("tal0-app", "alice-laptop")

    def now(self):
        return int(self.clock())

    def proof(self, path, token=None, key=None, method="POST", base=AS):
        return make_sender_proof(method, base + path, token, key or self.key, now=self.now()).wire

    def client_proof(self, client_id, path, key=None):
        return self.proof(path, key=key) if client_id == "tal1-app" else None

    def par(self, client_id="tal1-app", scopes=("profile:read",), verifier=None, evidence=GOOD, key=None, **kw):
        verifier = verifier or new_pkce_verifier()
        redirect = "https://app.example/cb" if client_id == "tal1-app" else "https://lite.example/cb"
        args = dict(client_id=client_id, proof=self.client_proof(client_id, "/par", key), scopes=list(scopes),
                    redirect_uri=redirect, code_challenge=make_pkce_challenge(verifier).challenge,
                    state="st", evidence=evidence)
        args.update(kw)
        return self.server.par(**args), verifier

    def authorize(self, request_uri, client_id="tal1-app", consent=("profile:read",), idp="idp-corp",
                  credentials=ALICE, evidence=GOOD, step_up_id=None):
        return self.server.authorize(request_uri, idp, credentials, list(consent), client_id=client_id,
                                     step_up_id=step_up_id, evidence=evidence)

    def code(self, client_id="tal1-app", scopes=("profile:read",), **kw):
        par, verifier = self.par(client_id, scopes, **kw)
        return self.authorize(par["request_uri"], client_id, scopes)["code"], verifier

    def token(self, code, verifier, client_id="tal1-app", key=None, evidence=GOOD):
        return self.server.token(code, verifier, client_id, self.client_proof(client_id, "/token", key),
                                 evidence=evidence)

    def login(self, client_id="tal1-app", scopes=("profile:read",), **kw):
        code, verifier = self.code(client_id, scopes, **kw)
        return self.token(code, verifier, client_id)

    def refresh(self, refresh_token, key=None, client_id="tal1-app"):
        return self.server.refresh(refresh_token, client_id, self.proof("/refresh", key=key), evidence=GOOD)
