"""Vessel speed-loss response and fuel/CO2 accounting.

The speed modification in knots is a linear response to four drivers:
directional wave steepness, squared wave height, along-track current, and
along-track wind. Two coefficient conventions are supported:

* ``ground_truth``: delta_u = -a * (hs/tp) * max(0, cos mu)^1.5
  + b * hs^2 + c * C_tail + d * V_tail, the basin's true dynamics, where
  ``a`` is a positive drag magnitude.
* ``calibrated``: delta_u = a * (hs/tp) * max(0, cos mu)^1.5 + b * hs^2
  + c * C_tail + d * V_tail + e, the sign-carrying form produced by the
  regression in :mod:`pierlab.synthais` (``a`` comes out negative).

``mu`` is the encounter angle between heading and the direction waves come
from, wrapped to [0, 180] with 0 meaning head seas. ``C_tail`` / ``V_tail``
are the current and wind components along the heading (m/s, positive aft).
"""

import math
from dataclasses import dataclass

from . import geo
from .errors import ConfigError
from .envfields import MetoceanSample

GROUND_TRUTH_MODE = "ground_truth"
CALIBRATED_MODE = "calibrated"
MIN_SPEED_KTS = 0.5


@dataclass(frozen=True)
class PhysicsCoefficients:
    a: float
    b: float
    c: float
    d: float
    e: float = 0.0

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "e": self.e}


GROUND_TRUTH_COEFFS = PhysicsCoefficients(a=0.5, b=0.005, c=0.7, d=0.03)
# Reference values from a fleet-scale calibration; regenerated by fit-physics.
CALIBRATED_COEFFS = PhysicsCoefficients(a=-0.377, b=0.002, c=0.837, d=0.029, e=0.139)


def encounter_angle(heading_deg: float, wave_dir_from_deg: float) -> float:
    """Encounter angle in [0, 180]; 0 = head seas, 180 = following seas."""
    return abs(geo.wrap_signed(heading_deg - wave_dir_from_deg))


def directional_wave_factor(mu_deg: float) -> float:
    """max(0, cos(mu))^1.5 directional attenuation of the wave drag."""
    c = math.cos(math.radians(mu_deg))
    return c**1.5 if c > 0.0 else 0.0


def along_track(heading_deg: float, u: float, v: float) -> float:
    """Project an (east, north) vector onto the heading unit vector."""
    h = math.radians(heading_deg)
    return u * math.sin(h) + v * math.cos(h)


@dataclass(frozen=True)
class SpeedLossInput:
    met: MetoceanSample
    heading_deg: float
    base_speed_kts: float


def speed_loss(coeffs: PhysicsCoefficients, inp: SpeedLossInput, mode: str = GROUND_TRUTH_MODE) -> float:
    """Speed modification delta_u in knots for one metocean sample."""
    met = inp.met
    mu = encounter_angle(inp.heading_deg, met.wave_dir_from)
    steepness_term = (met.hs / met.tp) * directional_wave_factor(mu)
    c_tail = along_track(inp.heading_deg, met.current_u, met.current_v)
    v_tail = along_track(inp.heading_deg, met.wind_u, met.wind_v)
    if mode == GROUND_TRUTH_MODE:
        return -coeffs.a * steepness_term + coeffs.b * met.hs**2 + coeffs.c * c_tail + coeffs.d * v_tail
    if mode == CALIBRATED_MODE:
        return (
            coeffs.a * steepness_term
            + coeffs.b * met.hs**2
            + coeffs.c * c_tail
            + coeffs.d * v_tail
            + coeffs.e
        )
    raise ConfigError(f"unknown speed-loss mode {mode!r}")


def effective_speed(
    coeffs: PhysicsCoefficients,
    inp: SpeedLossInput,
    mode: str = GROUND_TRUTH_MODE,
    floor_kts: float = MIN_SPEED_KTS,
) -> float:
    """Base speed plus the speed modification, floored at steerage way."""
    return max(floor_kts, inp.base_speed_kts + speed_loss(coeffs, inp, mode))


def fuel_proxy_step(speed_kts: float, dt_h: float) -> float:
    """Cubic-speed fuel proxy increment V^3 * dt / 1000 for one step."""
    return speed_kts**3 * dt_h / 1000.0


@dataclass(frozen=True)
class VesselFuelModel:
    """Admiralty-style fuel calibration for a vessel class.

    fuel_kg = proxy * SFOC * C_adm with C_adm = P_MCR / V_service^3, which
    reproduces the vessel's nameplate consumption at service speed.
    """

    name: str
    p_mcr_kw: float
    v_service_kts: float
    sfoc_g_per_kwh: float
    co2_t_per_t_fuel: float = 3.151

    def __post_init__(self):
        if min(self.p_mcr_kw, self.v_service_kts, self.sfoc_g_per_kwh, self.co2_t_per_t_fuel) <= 0:
            raise ConfigError("vessel fuel parameters must be positive")

    @property
    def c_adm(self) -> float:
        return self.p_mcr_kw / self.v_service_kts**3

    @property
    def k_fuel(self) -> float:
        """kg of fuel per unit of proxy."""
        return self.sfoc_g_per_kwh * self.c_adm


def fuel_and_co2(proxy: float, vessel: VesselFuelModel) -> tuple[float, float]:
    """(fuel_t, co2_t) for an accumulated fuel proxy."""
    fuel_t = proxy * vessel.k_fuel / 1000.0
    return fuel_t, fuel_t * vessel.co2_t_per_t_fuel


# IMO-convention carbon factors, tCO2 per t fuel.
FUEL_CO2_FACTORS = {"vlsfo": 3.151, "hfo": 3.114, "mgo": 3.206}

VESSEL_PRESETS = {
    "panamax": VesselFuelModel("panamax", 10000.0, 14.0, 170.0),
    "handymax": VesselFuelModel("handymax", 7500.0, 13.0, 170.0),
    "mr_tanker": VesselFuelModel("mr_tanker", 9000.0, 14.5, 170.0),
}


def vessel_preset(name: str, fuel_type: str = "vlsfo") -> VesselFuelModel:
    try:
        base = VESSEL_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown vessel preset {name!r}; choose from {sorted(VESSEL_PRESETS)}")
    try:
        factor = FUEL_CO2_FACTORS[fuel_type]
    except KeyError:
        raise ConfigError(f"unknown fuel type {fuel_type!r}; choose from {sorted(FUEL_CO2_FACTORS)}")
    return VesselFuelModel(base.name, base.p_mcr_kw, base.v_service_kts, base.sfoc_g_per_kwh, factor)
