"""Synthetic vessel-track generation and speed-loss regression.

Tracks imitate position reports from cooperative traffic: a vessel walks
from a random water point toward a random goal at bearing-plus-noise
headings, deflecting around land, while its speed over ground follows the
true speed-loss physics plus observation noise. The regression then joins
each report with met covariates and recovers speed-loss coefficients by
least squares, either against each track's true base speed ("known") or
against the nominal service speed ("nominal", the realistic default).
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import geo
from .envfields import EnvironmentFields
from .errors import ConfigError, DegenerateFitError
from .physics import (
    CALIBRATED_MODE,
    GROUND_TRUTH_COEFFS,
    GROUND_TRUTH_MODE,
    MIN_SPEED_KTS,
    PhysicsCoefficients,
    SpeedLossInput,
    effective_speed,
)

COLUMN_NAMES = ("head_sea_drag", "hs_squared", "current_along", "wind_along", "intercept")

BASE_KNOWN = "known"
BASE_NOMINAL = "nominal"


@dataclass(frozen=True)
class SynthConfig:
    n_tracks: int = 500
    base_mean_kts: float = 12.0
    base_half_range_kts: float = 2.0
    heading_noise_deg: float = 10.0
    sog_noise_kts: float = 0.5
    dt_h: float = 1.0
    max_steps: int = 16
    min_separation_deg: float = 1.0
    arrival_radius_deg: float = 0.15
    lookahead_cells: float = 2.0
    deflection_step_deg: float = 30.0
    window_h: float = 48.0


@dataclass
class Track:
    track_id: int
    base_speed: float
    reached: bool
    lats: np.ndarray
    lons: np.ndarray
    times: np.ndarray
    headings: np.ndarray
    sog_true: np.ndarray
    sog_obs: np.ndarray

    def __len__(self) -> int:
        return len(self.lats)


def _first_clear_heading(
    env: EnvironmentFields,
    lat: float,
    lon: float,
    desired: float,
    lookahead_nm: float,
    step_deg: float,
    goal_bearing: float,
) -> float | None:
    """Desired heading if its lookahead track is clear, else the nearest
    clear rotation, trying the goal-side sign first at each magnitude."""

    def clear(h: float) -> bool:
        for frac in (0.5, 1.0):
            plat, plon = geo.displace(lat, lon, h, lookahead_nm * frac)
            if not env.in_domain(plat, plon) or not env.is_water(plat, plon):
                return False
        return True

    if clear(desired):
        return desired
    toward_goal = 1.0 if geo.wrap_signed(goal_bearing - desired) >= 0 else -1.0
    k = 1
    while k * step_deg <= 180.0:
        for sign in (toward_goal, -toward_goal):
            cand = geo.wrap_360(desired + sign * k * step_deg)
            if clear(cand):
                return cand
        k += 1
    return None


def _random_water_point(env: EnvironmentFields, rng: np.random.Generator) -> tuple[float, float]:
    cells = env.water_cells()
    row, col = cells[rng.integers(0, len(cells))]
    return env.grid.cell_center(row, col)


def generate_tracks(
    env: EnvironmentFields, cfg: SynthConfig, rng: np.random.Generator
) -> list[Track]:
    """Simulate ``cfg.n_tracks`` noisy goal-seeking walks over the field."""
    tracks = []
    lookahead_nm = cfg.lookahead_cells * env.grid.resolution * geo.NM_PER_DEG
    arrival_nm = cfg.arrival_radius_deg * geo.NM_PER_DEG
    for tid in range(cfg.n_tracks):
        while True:
            start = _random_water_point(env, rng)
            goal = _random_water_point(env, rng)
            if geo.distance_deg(*start, *goal) >= cfg.min_separation_deg:
                break
        t = float(rng.uniform(0.0, cfg.window_h))
        base = float(
            rng.uniform(
                cfg.base_mean_kts - cfg.base_half_range_kts,
                cfg.base_mean_kts + cfg.base_half_range_kts,
            )
        )
        lat, lon = start
        lats, lons, times, headings, sog_t, sog_o = [], [], [], [], [], []
        reached = False
        for _ in range(cfg.max_steps):
            bearing = geo.bearing_deg(lat, lon, goal[0], goal[1])
            desired = geo.wrap_360(bearing + rng.normal(0.0, cfg.heading_noise_deg))
            heading = _first_clear_heading(
                env, lat, lon, desired, lookahead_nm, cfg.deflection_step_deg, bearing
            )
            if heading is None:
                break
            met = env.sample(lat, lon, t, heading)
            v = effective_speed(
                GROUND_TRUTH_COEFFS,
                SpeedLossInput(met, heading, base),
                GROUND_TRUTH_MODE,
                MIN_SPEED_KTS,
            )
            lats.append(lat)
            lons.append(lon)
            times.append(t)
            headings.append(heading)
            sog_t.append(v)
            sog_o.append(v + rng.normal(0.0, cfg.sog_noise_kts))
            nlat, nlon = geo.displace(lat, lon, heading, v * cfg.dt_h)
            if not env.in_domain(nlat, nlon) or not env.is_water(nlat, nlon):
                break
            lat, lon = nlat, nlon
            t += cfg.dt_h
            if geo.distance_nm(lat, lon, goal[0], goal[1]) <= arrival_nm:
                reached = True
                break
        tracks.append(
            Track(
                track_id=tid,
                base_speed=base,
                reached=reached,
                lats=np.asarray(lats),
                lons=np.asarray(lons),
                times=np.asarray(times),
                headings=np.asarray(headings),
                sog_true=np.asarray(sog_t),
                sog_obs=np.asarray(sog_o),
            )
        )
    return tracks


def completion_fraction(tracks: list[Track]) -> float:
    if not tracks:
        return 0.0
    return sum(t.reached for t in tracks) / len(tracks)


def save_tracks(tracks: list[Track], path) -> None:
    """Persist tracks as one .npz of concatenated ping arrays plus offsets."""
    lengths = np.array([len(t) for t in tracks], dtype=np.int64)
    np.savez(
        path,
        offsets=np.concatenate([[0], np.cumsum(lengths)]),
        base_speeds=np.array([t.base_speed for t in tracks]),
        reached=np.array([t.reached for t in tracks], dtype=bool),
        lats=np.concatenate([t.lats for t in tracks]) if tracks else np.empty(0),
        lons=np.concatenate([t.lons for t in tracks]) if tracks else np.empty(0),
        times=np.concatenate([t.times for t in tracks]) if tracks else np.empty(0),
        headings=np.concatenate([t.headings for t in tracks]) if tracks else np.empty(0),
        sog_true=np.concatenate([t.sog_true for t in tracks]) if tracks else np.empty(0),
        sog_obs=np.concatenate([t.sog_obs for t in tracks]) if tracks else np.empty(0),
    )


def tracks_digest(tracks: list[Track]) -> str:
    """sha256 over track contents; stable where .npz bytes are not (zip timestamps)."""
    digest = hashlib.sha256()
    digest.update(np.array([len(t) for t in tracks], dtype="<i8").tobytes())
    digest.update(np.array([t.base_speed for t in tracks], dtype="<f8").tobytes())
    digest.update(np.array([t.reached for t in tracks], dtype="<i1").tobytes())
    for name in ("lats", "lons", "times", "headings", "sog_true", "sog_obs"):
        for track in tracks:
            digest.update(np.ascontiguousarray(getattr(track, name), dtype="<f8").tobytes())
    return digest.hexdigest()


def load_tracks(path) -> list[Track]:
    with np.load(path) as data:
        offsets = data["offsets"]
        tracks = []
        for i in range(len(offsets) - 1):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            tracks.append(
                Track(
                    track_id=i,
                    base_speed=float(data["base_speeds"][i]),
                    reached=bool(data["reached"][i]),
                    lats=data["lats"][lo:hi],
                    lons=data["lons"][lo:hi],
                    times=data["times"][lo:hi],
                    headings=data["headings"][lo:hi],
                    sog_true=data["sog_true"][lo:hi],
                    sog_obs=data["sog_obs"][lo:hi],
                )
            )
    return tracks


def design_matrix(
    env: EnvironmentFields, tracks: list[Track], base_mode: str, nominal_base_kts: float = 12.0
) -> tuple[np.ndarray, np.ndarray]:
    """Join reports with met covariates; returns (X, y) for least squares.

    Columns follow COLUMN_NAMES: negated directional wave steepness (so the
    drag coefficient comes out as a positive magnitude), squared wave height,
    along-track current, along-track wind, intercept. The target is observed
    speed over ground minus the assumed base speed.
    """
    if base_mode not in (BASE_KNOWN, BASE_NOMINAL):
        raise ConfigError(f"base_mode must be {BASE_KNOWN!r} or {BASE_NOMINAL!r}, got {base_mode!r}")
    rows, targets = [], []
    for track in tracks:
        base = track.base_speed if base_mode == BASE_KNOWN else nominal_base_kts
        for i in range(len(track)):
            met = env.sample(track.lats[i], track.lons[i], track.times[i], track.headings[i])
            h_rad = math.radians(track.headings[i])
            mu = abs(geo.wrap_signed(track.headings[i] - met.wave_dir_from))
            dir_factor = max(0.0, math.cos(math.radians(mu))) ** 1.5
            rows.append(
                [
                    -(met.hs / met.tp) * dir_factor,
                    met.hs**2,
                    met.current_u * math.sin(h_rad) + met.current_v * math.cos(h_rad),
                    met.wind_u * math.sin(h_rad) + met.wind_v * math.cos(h_rad),
                    1.0,
                ]
            )
            targets.append(track.sog_obs[i] - base)
    if not rows:
        raise DegenerateFitError("no position reports to fit")
    return np.asarray(rows, dtype=np.float64), np.asarray(targets, dtype=np.float64)


@dataclass
class FitResult:
    """Regression output in both coefficient conventions.

    ``coefficients`` carries calibrated-mode signs (drag comes out negative),
    ready for :func:`pierlab.physics.speed_loss` with ``calibrated``.
    ``recovered`` is the same fit re-expressed in the ground-truth convention
    (positive drag magnitude), directly comparable to GROUND_TRUTH_COEFFS.
    """

    coefficients: PhysicsCoefficients
    recovered: PhysicsCoefficients
    stderr: np.ndarray
    sigma_resid: float
    r_squared: float
    n_rows: int
    base_mode: str
    mode: str = CALIBRATED_MODE

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "base_mode": self.base_mode,
            "coefficients": self.coefficients.as_dict(),
            "recovered": self.recovered.as_dict(),
            "stderr": {name: float(s) for name, s in zip(COLUMN_NAMES, self.stderr)},
            "sigma_resid": self.sigma_resid,
            "r_squared": self.r_squared,
            "n_rows": self.n_rows,
        }


def fit_speed_loss(
    env: EnvironmentFields,
    tracks: list[Track],
    base_mode: str = BASE_NOMINAL,
    nominal_base_kts: float = 12.0,
) -> FitResult:
    """Least-squares speed-loss coefficients from synthetic reports.

    Raises DegenerateFitError when the design matrix is rank deficient,
    naming the columns implicated in the collinearity.
    """
    x, y = design_matrix(env, tracks, base_mode, nominal_base_kts)
    n, p = x.shape
    if n <= p:
        raise DegenerateFitError(f"{n} rows cannot identify {p} coefficients")
    coef, _, rank, sing = np.linalg.lstsq(x, y, rcond=None)
    if rank < p:
        # Name the columns loading on the null space.
        _, _, vt = np.linalg.svd(x, full_matrices=False)
        null = vt[rank:]
        mass = np.abs(null).max(axis=0)
        bad = [COLUMN_NAMES[j] for j in range(p) if mass[j] > 0.3]
        raise DegenerateFitError(
            f"design matrix rank {rank} < {p}; collinear columns: {', '.join(bad) or 'unidentified'}"
        )
    resid = y - x @ coef
    ss_res = float(resid @ resid)
    dof = n - p
    sigma = math.sqrt(ss_res / dof)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    xtx_inv = np.linalg.inv(x.T @ x)
    stderr = sigma * np.sqrt(np.diag(xtx_inv))
    theta = [float(c) for c in coef]
    return FitResult(
        coefficients=PhysicsCoefficients(-theta[0], theta[1], theta[2], theta[3], theta[4]),
        recovered=PhysicsCoefficients(*theta),
        stderr=stderr,
        sigma_resid=sigma,
        r_squared=r2,
        n_rows=n,
        base_mode=base_mode,
    )
