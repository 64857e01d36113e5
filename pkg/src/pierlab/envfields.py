"""Analytic metocean fields on a small gridded ocean basin.

The basin couples three closed-form fields on a regular lat/lon grid:

* significant wave height from a Gaussian storm cell with a sinusoidal
  time modulation: ``hs = hs_base + hs_storm * exp(-d^2 / (2 sigma^2))
  * (1 + A * sin(2 pi t / T))`` with ``d`` the distance to the storm
  center in km,
* a zonal jet current ``u = u_max * sech^2((y - y_jet) / L_jet)`` (v = 0),
* a spatially constant wind vector.

Wave period and wave direction are constants of the wave field. Queries
evaluate the analytic expressions exactly at the requested point and time;
only the land mask and the forecast-noise multipliers (see planners) are
cell-quantized. Out-of-bounds queries raise ``DomainError``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from . import geo


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid; cell (0, 0) is the southwest corner."""

    lat_min: float = 26.0
    lon_min: float = -93.0
    resolution: float = 0.1
    n_rows: int = 28
    n_cols: int = 46

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError("grid resolution must be positive")
        if self.n_rows < 2 or self.n_cols < 2:
            raise ConfigError("grid must be at least 2 x 2 cells")

    @property
    def lat_max(self) -> float:
        return self.lat_min + self.n_rows * self.resolution

    @property
    def lon_max(self) -> float:
        return self.lon_min + self.n_cols * self.resolution

    def in_domain(self, lat: float, lon: float) -> bool:
        return (self.lat_min <= lat <= self.lat_max) and (self.lon_min <= lon <= self.lon_max)

    def cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        """Cell (row, col) containing a point; the far edges fold into the last cell."""
        if not self.in_domain(lat, lon):
            raise DomainError(f"point ({lat:.4f}, {lon:.4f}) outside grid bounds")
        row = min(int((lat - self.lat_min) / self.resolution), self.n_rows - 1)
        col = min(int((lon - self.lon_min) / self.resolution), self.n_cols - 1)
        return row, col

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.lat_min + (row + 0.5) * self.resolution,
            self.lon_min + (col + 0.5) * self.resolution,
        )

    def lat_centers(self) -> np.ndarray:
        return self.lat_min + (np.arange(self.n_rows) + 0.5) * self.resolution

    def lon_centers(self) -> np.ndarray:
        return self.lon_min + (np.arange(self.n_cols) + 0.5) * self.resolution


@dataclass(frozen=True)
class WaveFieldParams:
    hs_base: float = 1.0
    hs_storm: float = 4.5
    storm_lat: float = 28.1
    storm_lon: float = -89.55
    sigma_km: float = 80.0
    period_h: float = 48.0
    amplitude: float = 0.3
    tp_s: float = 8.0
    dir_from_deg: float = 45.0

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ConfigError("wave amplitude must be in [0, 1) so hs stays positive")
        if self.hs_base <= 0 or self.sigma_km <= 0 or self.period_h <= 0 or self.tp_s <= 0:
            raise ConfigError("wave field scales must be positive")


@dataclass(frozen=True)
class CurrentFieldParams:
    u_max: float = 1.5
    jet_lat: float = 27.85
    jet_halfwidth_km: float = 40.0

    def __post_init__(self):
        if self.jet_halfwidth_km <= 0:
            raise ConfigError("jet halfwidth must be positive")


@dataclass(frozen=True)
class WindFieldParams:
    u: float = -3.0
    v: float = -4.0


@dataclass(frozen=True)
class Rect:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


@dataclass(frozen=True)
class Disc:
    lat: float
    lon: float
    radius_deg: float

    def contains(self, lat: float, lon: float) -> bool:
        return math.hypot(lat - self.lat, lon - self.lon) <= self.radius_deg


@dataclass(frozen=True)
class LandGeometry:
    """Land mask as union(rects, discs) minus union(carves).

    Carve rectangles cut water back out of land features, e.g. the pocket
    and entrance channel of a sheltered bay.
    """

    rects: tuple = ()
    discs: tuple = ()
    carves: tuple = ()


def default_land_geometry() -> LandGeometry:
    """Default coastline: a peninsula off the north coast, a three-island
    chain below its tip, and a sheltered bay on the southern shore."""
    peninsula = Rect(28.0, 28.8, -91.6, -91.3)
    bay_outer = Rect(26.0, 26.5, -90.0, -89.2)
    bay_pocket = Rect(26.0, 26.3, -89.8, -89.4)
    bay_channel = Rect(26.3, 26.5, -89.7, -89.5)
    islands = (
        Disc(27.65, -91.45, 0.16),
        Disc(27.65, -90.85, 0.16),
        Disc(27.65, -90.15, 0.16),
    )
    return LandGeometry(
        rects=(peninsula, bay_outer),
        discs=islands,
        carves=(bay_pocket, bay_channel),
    )


@dataclass(frozen=True)
class Route:
    name: str
    start: tuple[float, float]
    goal: tuple[float, float]
    label: str = ""


DEFAULT_ROUTES = (
    Route("open_water", (26.25, -92.75), (27.25, -88.45), "long southern crossing"),
    Route("corridor", (27.85, -92.75), (27.85, -90.75), "jet-aligned leg toward the peninsula"),
    Route("storm_crossing", (26.15, -91.55), (28.05, -88.45), "diagonal through the storm flank"),
)


@dataclass(frozen=True)
class MetoceanSample:
    hs: float
    tp: float
    wave_dir_from: float
    current_u: float
    current_v: float
    wind_u: float
    wind_v: float
    e_hf: float


def _storm_pulse(w: "WaveFieldParams", t_h: float) -> float:
    # Phase-normalized so the field is exactly periodic: t and t + period
    # give bit-identical samples, which planner memoization relies on.
    return 1.0 + w.amplitude * math.sin(2.0 * math.pi * (t_h % w.period_h) / w.period_h)


def _encounter_factor(heading_deg: float, wave_dir_from_deg: float) -> float:
    # max(0, cos(mu))^1.5 with mu the heading/wave-direction offset in [0, 180].
    mu = abs(geo.wrap_signed(heading_deg - wave_dir_from_deg))
    c = math.cos(math.radians(mu))
    return c**1.5 if c > 0.0 else 0.0


class EnvironmentFields:
    """Immutable bundle of grid, land mask, and analytic field samplers."""

    def __init__(
        self,
        grid: GridSpec,
        wave: WaveFieldParams,
        current: CurrentFieldParams,
        wind: WindFieldParams,
        land_mask: np.ndarray,
        hf_p95: float,
    ):
        self.grid = grid
        self.wave = wave
        self.current = current
        self.wind = wind
        self.land_mask = land_mask
        self.land_mask.setflags(write=False)
        # Normalizer for the hull-fatigue state feature; guarded so an
        # all-calm configuration cannot divide by zero.
        self.hf_p95 = hf_p95 if hf_p95 > 0 else 1.0

    # -- field samplers ----------------------------------------------------

    def _check_domain(self, lat: float, lon: float) -> None:
        if not self.grid.in_domain(lat, lon):
            raise DomainError(f"query at ({lat:.4f}, {lon:.4f}) outside basin")

    def storm_factor(self, lat: float, lon: float) -> float:
        """Spatial Gaussian of the storm cell, in [0, 1]."""
        d_km = geo.distance_km(lat, lon, self.wave.storm_lat, self.wave.storm_lon)
        return math.exp(-(d_km**2) / (2.0 * self.wave.sigma_km**2))

    def sample_wave(self, lat: float, lon: float, t_h: float) -> tuple[float, float, float]:
        """(hs_m, tp_s, wave_dir_from_deg) at a point and time."""
        self._check_domain(lat, lon)
        w = self.wave
        hs = w.hs_base + w.hs_storm * self.storm_factor(lat, lon) * _storm_pulse(w, t_h)
        return hs, w.tp_s, w.dir_from_deg

    def sample_current(self, lat: float, lon: float, t_h: float) -> tuple[float, float]:
        """(u, v) in m/s; a zonal jet, independent of time."""
        self._check_domain(lat, lon)
        offset_km = (lat - self.current.jet_lat) * geo.KM_PER_DEG
        u = self.current.u_max / math.cosh(offset_km / self.current.jet_halfwidth_km) ** 2
        return u, 0.0

    def sample_wind(self, lat: float, lon: float, t_h: float) -> tuple[float, float]:
        self._check_domain(lat, lon)
        return self.wind.u, self.wind.v

    def hf_exposure(self, lat: float, lon: float, t_h: float, heading_deg: float) -> float:
        """Hull-fatigue exposure rate (hs / tp) * max(0, cos(mu))^1.5."""
        hs, tp, wave_dir = self.sample_wave(lat, lon, t_h)
        return (hs / tp) * _encounter_factor(heading_deg, wave_dir)

    def sample(self, lat: float, lon: float, t_h: float, heading_deg: float) -> MetoceanSample:
        hs, tp, wave_dir = self.sample_wave(lat, lon, t_h)
        cu, cv = self.sample_current(lat, lon, t_h)
        wu, wv = self.sample_wind(lat, lon, t_h)
        e_hf = (hs / tp) * _encounter_factor(heading_deg, wave_dir)
        return MetoceanSample(hs, tp, wave_dir, cu, cv, wu, wv, e_hf)

    # -- land mask ----------------------------------------------------------

    def in_domain(self, lat: float, lon: float) -> bool:
        return self.grid.in_domain(lat, lon)

    def is_water(self, lat: float, lon: float) -> bool:
        row, col = self.grid.cell_of(lat, lon)
        return not self.land_mask[row, col]

    def is_water_cell(self, row: int, col: int) -> bool:
        return not self.land_mask[row, col]

    def land_fraction(self) -> float:
        return float(self.land_mask.mean())

    def water_cells(self) -> np.ndarray:
        """(k, 2) array of (row, col) water cell indices."""
        rows, cols = np.nonzero(~self.land_mask)
        return np.stack([rows, cols], axis=1)

    def connected(self, a: tuple[float, float], b: tuple[float, float]) -> bool:
        """True when the water cells containing two points are 4-connected."""
        start = self.grid.cell_of(*a)
        goal = self.grid.cell_of(*b)
        if self.land_mask[start] or self.land_mask[goal]:
            return False
        seen = np.zeros_like(self.land_mask, dtype=bool)
        seen[start] = True
        stack = [start]
        while stack:
            r, c = stack.pop()
            if (r, c) == goal:
                return True
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < self.grid.n_rows and 0 <= cc < self.grid.n_cols:
                    if not seen[rr, cc] and not self.land_mask[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
        return False

    # -- gridded snapshots (exports, normalization) ---------------------------

    def hs_grid(self, t_h: float) -> np.ndarray:
        """Significant wave height at every cell center."""
        lats = self.grid.lat_centers()[:, None]
        lons = self.grid.lon_centers()[None, :]
        w = self.wave
        mean_lat = np.radians(0.5 * (lats + w.storm_lat))
        dlat_km = (lats - w.storm_lat) * geo.KM_PER_DEG
        dlon_km = (lons - w.storm_lon) * geo.KM_PER_DEG * np.cos(mean_lat)
        d2 = dlat_km**2 + dlon_km**2
        return w.hs_base + w.hs_storm * np.exp(-d2 / (2.0 * w.sigma_km**2)) * _storm_pulse(w, t_h)


def _build_land_mask(grid: GridSpec, land: LandGeometry) -> np.ndarray:
    lats = grid.lat_centers()
    lons = grid.lon_centers()
    mask = np.zeros((grid.n_rows, grid.n_cols), dtype=bool)
    for i, lat in enumerate(lats):
        for j, lon in enumerate(lons):
            solid = any(r.contains(lat, lon) for r in land.rects) or any(
                d.contains(lat, lon) for d in land.discs
            )
            if solid and any(c.contains(lat, lon) for c in land.carves):
                solid = False
            mask[i, j] = solid
    return mask


def _worst_heading_hf_p95(grid: GridSpec, wave: WaveFieldParams, mask: np.ndarray) -> float:
    """95th percentile of head-seas exposure hs/tp over water cells and one
    full storm period sampled hourly."""
    env_like_samples = []
    lats = grid.lat_centers()[:, None]
    lons = grid.lon_centers()[None, :]
    mean_lat = np.radians(0.5 * (lats + wave.storm_lat))
    dlat_km = (lats - wave.storm_lat) * geo.KM_PER_DEG
    dlon_km = (lons - wave.storm_lon) * geo.KM_PER_DEG * np.cos(mean_lat)
    gauss = np.exp(-(dlat_km**2 + dlon_km**2) / (2.0 * wave.sigma_km**2))
    water = ~mask
    for t in np.arange(0.0, wave.period_h, 1.0):
        pulse = 1.0 + wave.amplitude * math.sin(2.0 * math.pi * t / wave.period_h)
        hs = wave.hs_base + wave.hs_storm * gauss * pulse
        env_like_samples.append(hs[water] / wave.tp_s)
    return float(np.percentile(np.concatenate(env_like_samples), 95.0))


def build_basin(
    grid: GridSpec | None = None,
    wave: WaveFieldParams | None = None,
    current: CurrentFieldParams | None = None,
    wind: WindFieldParams | None = None,
    land: LandGeometry | None = None,
    routes: tuple[Route, ...] | None = None,
) -> EnvironmentFields:
    """Assemble the basin and validate the coastline against the routes.

    Raises ConfigError when a route endpoint falls on land, when start and
    goal are not water-connected, or when land covers half the basin or more.
    """
    grid = grid or GridSpec()
    wave = wave or WaveFieldParams()
    current = current or CurrentFieldParams()
    wind = wind or WindFieldParams()
    land = land if land is not None else default_land_geometry()

    mask = _build_land_mask(grid, land)
    frac = float(mask.mean())
    if frac >= 0.5:
        raise ConfigError(f"land covers {frac:.0%} of the basin; expected under half")

    hf_p95 = _worst_heading_hf_p95(grid, wave, mask)
    env = EnvironmentFields(grid, wave, current, wind, mask, hf_p95)

    for route in routes or ():
        for tag, point in (("start", route.start), ("goal", route.goal)):
            if not grid.in_domain(*point):
                raise ConfigError(f"route {route.name} {tag} outside the basin")
            if not env.is_water(*point):
                raise ConfigError(f"route {route.name} {tag} lands on a land cell")
        if not env.connected(route.start, route.goal):
            raise ConfigError(f"route {route.name} endpoints are not water-connected")
    return env
