"""REST+JSON surface for the authorization and resource servers.

Every response carries ``Content-Security-Policy: default-src 'none'``.
No CORS middleware is installed, so no permissive cross-origin headers
are ever emitted; ``Origin`` confers no authority.
"""
from __future__ import annotations

from typing import Any, Iterable, Optional

from fastapi import Body, FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from starlette.exceptions import HTTPException as StarletteHTTPException

from radaa.authserver import AuthorizationServer
from radaa.context import Evidence
from radaa.errors import OAuthError
from radaa.resource import ResourceServer

CSP_HEADER = "Content-Security-Policy"
CSP_VALUE = "default-src 'none'"
PROOF_HEADER = "Sender-Proof"


def _install_common(app: FastAPI, faults: frozenset[str]) -> None:
    @app.middleware("http")
    async def security_headers(request: Request, call_next):
        response = await call_next(request)
        if "csp-header" not in faults:
            response.headers[CSP_HEADER] = CSP_VALUE
        response.headers["X-Content-Type-Options"] = "nosniff"
        response.headers["Cache-Control"] = "no-store"
        return response

    @app.exception_handler(OAuthError)
    async def oauth_error(request: Request, exc: OAuthError):
        headers = {}
        if exc.status == 401:
            headers["WWW-Authenticate"] = f'PoP error="{exc.error}"'
        return JSONResponse(exc.to_json(), status_code=exc.status, headers=headers)

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse({"error": "invalid_request", "error_description": "malformed request body"},
                            status_code=400)

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        code = {404: "not_found", 405: "method_not_allowed"}.get(exc.status_code, "invalid_request")
        return JSONResponse({"error": code, "error_description": str(exc.detail)},
                            status_code=exc.status_code)


def _evidence(request: Request, trust_forwarded: bool) -> Evidence:
    peer = request.client.host if request.client else None
    return Evidence.from_headers(request.headers, peer, trust_forwarded)


def _str(body: dict, name: str, required: bool = True) -> Optional[str]:
    value = body.get(name)
    if value is None:
        if required:
            raise OAuthError("invalid_request", f"missing parameter {name!r}")
        return None
    if not isinstance(value, str):
        raise OAuthError("invalid_request", f"parameter {name!r} must be a string")
    return value


def create_as_app(server: AuthorizationServer, faults: Iterable[str] = ()) -> FastAPI:
    faults = frozenset(faults)
    trust_forwarded = server.config.trust_forwarded_for
    app = FastAPI(title="radaa authorization server", docs_url=None, redoc_url=None, openapi_url=None)
    _install_common(app, faults)

    @app.post("/par", status_code=201)
    def par(request: Request, body: dict[str, Any] = Body(...),
            sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        known = {"client_id", "scope", "redirect_uri", "code_challenge", "code_challenge_method",
                 "state", "resource"}
        extra = {k: v for k, v in body.items() if k not in known}
        return server.par(
            client_id=_str(body, "client_id"), proof=sender_proof, scopes=body.get("scope"),
            redirect_uri=_str(body, "redirect_uri"), code_challenge=_str(body, "code_challenge"),
            code_challenge_method=_str(body, "code_challenge_method", False) or "S256",
            state=_str(body, "state", False), resource=_str(body, "resource", False),
            evidence=_evidence(request, trust_forwarded), extra=extra,
        )

    def _authorize(request: Request, params: dict) -> dict:
        credentials = {"username": _str(params, "username"), "secret": _str(params, "secret")}
        return server.authorize(
            request_uri=_str(params, "request_uri"), idp_id=_str(params, "idp"), credentials=credentials,
            consent=params.get("consent"), client_id=_str(params, "client_id", False),
            step_up_id=_str(params, "step_up_id", False), evidence=_evidence(request, trust_forwarded),
        )

    @app.get("/authorize")
    def authorize_get(request: Request):
        return _authorize(request, dict(request.query_params))

    @app.post("/authorize")
    def authorize_post(request: Request, body: dict[str, Any] = Body(...)):
        return _authorize(request, body)

    @app.post("/token")
    def token(request: Request, body: dict[str, Any] = Body(...),
              sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        return server.token(
            code=_str(body, "code"), code_verifier=_str(body, "code_verifier"),
            client_id=_str(body, "client_id"), proof=sender_proof,
            step_up_id=_str(body, "step_up_id", False), evidence=_evidence(request, trust_forwarded),
        ).to_json()

    @app.post("/refresh")
    def refresh(request: Request, body: dict[str, Any] = Body(...),
                sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        return server.refresh(
            refresh_token=_str(body, "refresh_token"), client_id=_str(body, "client_id"), proof=sender_proof,
            step_up_id=_str(body, "step_up_id", False), evidence=_evidence(request, trust_forwarded),
        ).to_json()

    @app.post("/revoke")
    def revoke(body: dict[str, Any] = Body(...),
               sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        server.revoke_request(_str(body, "token"), _str(body, "client_id"), sender_proof)
        return {"revoked": True}

    @app.post("/introspect")
    def introspect(body: dict[str, Any] = Body(...),
                   sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        return server.introspect(_str(body, "token"), _str(body, "caller_id"), sender_proof)

    @app.post("/exchange")
    def exchange(request: Request, body: dict[str, Any] = Body(...),
                 sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        return server.exchange_token(
            _str(body, "subject_token"), sender_proof, _str(body, "audience"),
            evidence=_evidence(request, trust_forwarded),
        ).to_json()

    @app.post("/step-up")
    def step_up(body: dict[str, Any] = Body(...)):
        passed = server.complete_step_up(_str(body, "challenge_id"), _str(body, "answer"))
        return {"passed": passed}

    return app


def create_rs_app(rs: ResourceServer, faults: Iterable[str] = ()) -> FastAPI:
    faults = frozenset(faults)
    trust_forwarded = rs.auth_server.config.trust_forwarded_for
    app = FastAPI(title=f"radaa resource server {rs.rs_id}", docs_url=None, redoc_url=None, openapi_url=None)
    _install_common(app, faults)

    @app.get("/resource/{path:path}")
    def get_resource(path: str, request: Request, authorization: Optional[str] = Header(None),
                     sender_proof: Optional[str] = Header(None, alias=PROOF_HEADER)):
        resource = rs.resources.get(path)
        if resource is None:
            raise OAuthError("not_found", f"no resource at {path!r}")
        scheme, token = None, None
        if authorization:
            scheme, _, token = authorization.partition(" ")
            if scheme.lower() not in ("pop", "bearer"):
                raise OAuthError("invalid_token", "unsupported authorization scheme")
        decision = rs.access_resource(token, sender_proof, "GET", rs.resource_uri(path), resource,
                                      _evidence(request, trust_forwarded), scheme)
        if not decision.allowed:
            headers = {"WWW-Authenticate": f'PoP error="{decision.reason}"'} if decision.status == 401 else {}
            return JSONResponse({"error": decision.reason, "error_description": decision.detail,
                                 "effective_scopes": sorted(decision.effective_scopes)},
                                status_code=decision.status, headers=headers)
        return Response(decision.payload, media_type="application/octet-stream")

    return app
