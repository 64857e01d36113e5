"""Flat-earth geometry helpers shared across the package.

All distances use the equirectangular approximation with a cos-latitude
correction, which is accurate to well under a percent at basin scale:
one degree of latitude is 60 nm (111.12 km), one degree of longitude is
60 * cos(lat) nm. Headings and bearings are degrees clockwise from true
north.
"""

import math

NM_PER_DEG = 60.0
KM_PER_DEG = 111.12
MS_PER_KT = 0.514444


def wrap_360(angle_deg: float) -> float:
    """Wrap an angle to [0, 360)."""
    return angle_deg % 360.0


def wrap_signed(angle_deg: float) -> float:
    """Wrap an angle to [-180, 180)."""
    return (angle_deg + 180.0) % 360.0 - 180.0


def distance_nm(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Equirectangular distance in nautical miles (cos of the mean latitude)."""
    mean_lat = math.radians(0.5 * (lat1 + lat2))
    dlat = (lat2 - lat1) * NM_PER_DEG
    dlon = (lon2 - lon1) * NM_PER_DEG * math.cos(mean_lat)
    return math.hypot(dlat, dlon)


def distance_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    return distance_nm(lat1, lon1, lat2, lon2) * KM_PER_DEG / NM_PER_DEG


def distance_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Degree-scaled distance: latitude degrees with cos-lat corrected longitude."""
    return distance_nm(lat1, lon1, lat2, lon2) / NM_PER_DEG


def bearing_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Initial bearing from point 1 to point 2, degrees clockwise from north."""
    mean_lat = math.radians(0.5 * (lat1 + lat2))
    east = (lon2 - lon1) * math.cos(mean_lat)
    north = lat2 - lat1
    if east == 0.0 and north == 0.0:
        return 0.0
    return wrap_360(math.degrees(math.atan2(east, north)))


def displace(lat: float, lon: float, heading_deg: float, dist_nm: float):
    """Move ``dist_nm`` along ``heading_deg`` from (lat, lon).

    Longitude displacement uses the cosine of the departure latitude.
    """
    h = math.radians(heading_deg)
    lat2 = lat + dist_nm * math.cos(h) / NM_PER_DEG
    lon2 = lon + dist_nm * math.sin(h) / (NM_PER_DEG * math.cos(math.radians(lat)))
    return lat2, lon2
