"""In-process HTTP routing between simulated hosts."""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlsplit

import httpx
from fastapi import FastAPI, Request

with warnings.catch_warnings():
    # starlette nudges towards httpx2; the bundled client still works with httpx
    warnings.simplefilter("ignore", DeprecationWarning)
    from starlette.testclient import TestClient


@dataclass(frozen=True)
class Profile:
    """Where a simulated party connects from."""

    name: str
    ip: str
    device_id: str
    geo: Optional[tuple[float, float]] = None

    def headers(self) -> dict[str, str]:
        out = {"X-Forwarded-For": self.ip, "X-Device-Id": self.device_id}
        if self.geo is not None:
            out["X-Geo"] = f"{self.geo[0]},{self.geo[1]}"
        return out


class Network:
    def __init__(self, apps: dict[str, object]):
        self._clients = {}
        for base, app in apps.items():
            self.add_host(base, app)
        self.log: list[httpx.Response] = []
        self._lock = threading.Lock()

    def add_host(self, base_url: str, app) -> None:
        self._clients[urlsplit(base_url).netloc] = TestClient(app, base_url=base_url)

    def request(self, method: str, url: str, profile: Optional[Profile] = None,
                headers: Optional[dict] = None, **kwargs) -> httpx.Response:
        host = urlsplit(url).netloc
        client = self._clients.get(host)
        if client is None:
            raise ConnectionError(f"no route to {host}")
        merged = dict(profile.headers() if profile else {})
        merged.update(headers or {})
        response = client.request(method, url, headers=merged, **kwargs)
        with self._lock:
            self.log.append(response)
        return response


def attacker_as_app(received: list) -> FastAPI:
    """Attacker-operated authorization server that harvests whatever it is sent."""
    app = FastAPI()
    lock = threading.Lock()

    @app.post("/token")
    async def token(request: Request):
        body = await request.json()
        with lock:
            received.append(body)
        return {"access_token": "attacker-controlled", "token_type": "bearer", "expires_in": 60}

    return app
