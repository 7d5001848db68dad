"""
Great-Circle Distances
Haversine distance between coordinates, scalar and vectorised
"""

from math import atan2, cos, radians, sin, sqrt

import numpy as np

from services.exceptions import DomainError

EARTH_RADIUS_KM = 6371.0


def check_coordinate(lat: float, lon: float):
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise DomainError(f"Invalid coordinate ({lat}, {lon})")


def haversine_km(a, b) -> float:
    """Distance in km between two (lat, lon) points given in degrees"""
    lat1, lon1 = float(a[0]), float(a[1])
    lat2, lon2 = float(b[0]), float(b[1])
    check_coordinate(lat1, lon1)
    check_coordinate(lat2, lon2)
    lat1, lon1, lat2, lon2 = map(radians, (lat1, lon1, lat2, lon2))
    h = sin((lat2 - lat1) / 2) ** 2 + cos(lat1) * cos(lat2) * sin((lon2 - lon1) / 2) ** 2
    h = min(max(h, 0.0), 1.0)
    return EARTH_RADIUS_KM * 2 * atan2(sqrt(h), sqrt(1 - h))


def haversine_km_vectorized(origin, points: np.ndarray) -> np.ndarray:
    """Distances in km from one (lat, lon) origin to every row of an (n, 2) array"""
    check_coordinate(float(origin[0]), float(origin[1]))
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    lat1, lon1 = np.radians(float(origin[0])), np.radians(float(origin[1]))
    lat2, lon2 = np.radians(points[:, 0]), np.radians(points[:, 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    h = np.clip(h, 0.0, 1.0)
    return EARTH_RADIUS_KM * 2 * np.arctan2(np.sqrt(h), np.sqrt(1 - h))
