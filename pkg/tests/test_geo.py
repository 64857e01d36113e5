import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pierlab import geo


@pytest.mark.parametrize(
    "deg,expected",
    [(0, 0), (360, 0), (-90, 270), (450, 90), (719.5, 359.5)],
)
def test_wrap_360(deg, expected):
    assert geo.wrap_360(deg) == pytest.approx(expected)


@pytest.mark.parametrize(
    "deg,expected",
    [(0, 0), (180, -180), (-180, -180), (190, -170), (-190, 170), (359, -1)],
)
def test_wrap_signed(deg, expected):
    assert geo.wrap_signed(deg) == pytest.approx(expected)


@given(st.floats(-1000, 1000))
def test_wrap_signed_range(deg):
    w = geo.wrap_signed(deg)
    assert -180.0 <= w < 180.0
    assert abs(math.sin(math.radians(w - deg))) < 1e-9


def test_distance_zero_and_symmetry():
    assert geo.distance_nm(27.0, -91.0, 27.0, -91.0) == 0.0
    d1 = geo.distance_nm(26.3, -92.1, 27.9, -89.4)
    d2 = geo.distance_nm(27.9, -89.4, 26.3, -92.1)
    assert d1 == pytest.approx(d2)
    assert d1 > 0


def test_distance_one_degree_latitude():
    assert geo.distance_nm(26.0, -91.0, 27.0, -91.0) == pytest.approx(60.0)
    assert geo.distance_km(26.0, -91.0, 27.0, -91.0) == pytest.approx(111.12)


def test_distance_longitude_shrinks_with_latitude():
    d_equator_side = geo.distance_nm(26.0, -91.0, 26.0, -90.0)
    d_north = geo.distance_nm(28.7, -91.0, 28.7, -90.0)
    assert d_north < d_equator_side
    assert d_equator_side == pytest.approx(60.0 * math.cos(math.radians(26.0)))


@pytest.mark.parametrize(
    "dlat,dlon,expected",
    [(1, 0, 0.0), (0, 1, 90.0), (-1, 0, 180.0), (0, -1, 270.0)],
)
def test_bearing_cardinals(dlat, dlon, expected):
    b = geo.bearing_deg(27.0, -91.0, 27.0 + dlat * 0.01, -91.0 + dlon * 0.01)
    assert b == pytest.approx(expected, abs=1e-6)


def test_bearing_coincident_points_is_zero():
    assert geo.bearing_deg(27.0, -91.0, 27.0, -91.0) == 0.0


@given(
    st.floats(26.2, 28.5),
    st.floats(-92.8, -88.8),
    st.floats(0, 360),
    st.floats(0.1, 30.0),
)
def test_displace_distance_roundtrip(lat, lon, heading, d_nm):
    """Displacing by d and measuring back recovers d to first order."""
    lat2, lon2 = geo.displace(lat, lon, heading, d_nm)
    back = geo.distance_nm(lat, lon, lat2, lon2)
    assert back == pytest.approx(d_nm, rel=2e-3, abs=1e-6)
