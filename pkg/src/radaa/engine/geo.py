"""Great-circle distance."""
from __future__ import annotations

import math

EARTH_RADIUS_KM = 6371.0

Geo = tuple[float, float]


def check_geo(p: Geo) -> None:
    lat, lon = p
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: {p!r}")


def haversine_km(p1: Geo, p2: Geo) -> float:
    check_geo(p1)
    check_geo(p2)
    lat1, lon1 = map(math.radians, p1)
    lat2, lon2 = map(math.radians, p2)
    a = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))
