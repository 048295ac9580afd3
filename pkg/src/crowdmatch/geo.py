"""Spherical geometry helpers (mean Earth radius, degrees in, meters out)."""

from __future__ import annotations

import math

EARTH_RADIUS_M = 6_371_000.0

_RAD = math.pi / 180.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two lat/lon points."""
    p1 = lat1 * _RAD
    p2 = lat2 * _RAD
    dp = p2 - p1
    dl = (lon2 - lon1) * _RAD
    a = math.sin(dp * 0.5) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl * 0.5) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _meridian_min_angle(sin_p: float, cos_p: float, dlon: float, lat_lo: float, lat_hi: float) -> float:
    # Central angle from the query point to the nearest point of a meridian
    # segment at longitude offset dlon spanning [lat_lo, lat_hi] (radians).
    # cos(angle) = A sin(lat) + B cos(lat) = C cos(lat - phi0); maximize it.
    a = sin_p
    b = cos_p * math.cos(dlon)
    phi0 = math.atan2(a, b)
    if lat_lo <= phi0 <= lat_hi:
        best = math.hypot(a, b)
    else:
        best = max(a * math.sin(lat_lo) + b * math.cos(lat_lo), a * math.sin(lat_hi) + b * math.cos(lat_hi))
    return math.acos(max(-1.0, min(1.0, best)))


def min_distance_to_box_m(
    lat: float, lon: float, lat_min: float, lat_max: float, lon_min: float, lon_max: float
) -> float:
    """Exact great-circle distance from a point to a lat/lon rectangle.

    Zero when the point is inside. Callers needing a guaranteed lower
    bound on ``haversine_m`` should use :func:`box_distance_lower_bound_m`,
    which absorbs floating-point disagreement between the two formulas.
    """
    if lon_min <= lon <= lon_max:
        if lat < lat_min:
            return (lat_min - lat) * _RAD * EARTH_RADIUS_M
        if lat > lat_max:
            return (lat - lat_max) * _RAD * EARTH_RADIUS_M
        return 0.0
    # Outside the longitude span: moving toward the query's meridian always
    # shortens the distance, so the nearest point is on an east/west edge.
    p = lat * _RAD
    sin_p, cos_p = math.sin(p), math.cos(p)
    lo, hi = lat_min * _RAD, lat_max * _RAD
    ang = min(
        _meridian_min_angle(sin_p, cos_p, (lon_min - lon) * _RAD, lo, hi),
        _meridian_min_angle(sin_p, cos_p, (lon_max - lon) * _RAD, lo, hi),
    )
    return ang * EARTH_RADIUS_M


def box_distance_lower_bound_m(
    lat: float, lon: float, lat_min: float, lat_max: float, lon_min: float, lon_max: float
) -> float:
    d = min_distance_to_box_m(lat, lon, lat_min, lat_max, lon_min, lon_max)
    if d == 0.0:
        return 0.0
    # Slack covers asin/acos rounding near antipodes (centimeters at worst).
    return max(0.0, d * (1.0 - 1e-7) - 1e-3)


def meters_to_degrees(dist_m: float) -> float:
    return dist_m / (EARTH_RADIUS_M * _RAD)
