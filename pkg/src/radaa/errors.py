from __future__ import annotations

STATUS = {
    "invalid_request": 400,
    "invalid_request_uri": 400,
    "one_time_use": 400,
    "invalid_redirect": 400,
    "invalid_scope": 400,
    "invalid_grant": 400,
    "invalid_target": 400,
    "invalid_challenge": 400,
    "expired_challenge": 400,
    "invalid_client_metadata": 400,
    "federation_error": 400,
    "invalid_client": 401,
    "binding_mismatch": 401,
    "access_denied": 403,
    "step_up_required": 401,
    "risk_denied": 403,
    "rate_limited": 429,
    "invalid_token": 401,
    "insufficient_scope": 403,
    "not_found": 404,
}


class OAuthError(Exception):
    """Protocol error rendered as ``{"error": ..., "error_description": ...}``."""

    def __init__(self, error: str, description: str = "", status: int | None = None, **extra):
        super().__init__(f"{error}: {description}" if description else error)
        self.error = error
        self.description = description
        self.status = status or STATUS.get(error, 400)
        self.extra = extra

    def to_json(self) -> dict:
        return {"error": self.error, "error_description": self.description, **self.extra}
