"""Routing MDP over the analytic basin.

State features (length 15, fixed order) seen by learned policies:

  0 lat/30         5 tp/18                10 dist_to_goal/initial_dist
  1 lon/-90        6 wave_dir/360         11 sin(bearing)
  2 heading/360    7 hf_exposure/p95      12 cos(bearing)
  3 speed/15       8 sin(heading)         13 (bearing - heading)/180
  4 hs/6           9 cos(heading)         14 elapsed/48

Actions combine a heading change and a throttle factor, heading-major:
index = 3 * delta_index + factor_index over deltas (-60, -30, -15, 0, 15,
30, 60) degrees and factors (0.6, 0.8, 1.0) of the base speed. One step is
one hour. Rewards follow a time/fuel/fatigue running cost plus progress
shaping and terminal bonuses.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geo
from .envfields import EnvironmentFields, Route
from .errors import ConfigError
from .physics import (
    GROUND_TRUTH_MODE,
    MIN_SPEED_KTS,
    PhysicsCoefficients,
    SpeedLossInput,
    VesselFuelModel,
    effective_speed,
    fuel_and_co2,
    fuel_proxy_step,
)

HEADING_DELTAS = (-60.0, -30.0, -15.0, 0.0, 15.0, 30.0, 60.0)
SPEED_FACTORS = (0.6, 0.8, 1.0)
N_ACTIONS = len(HEADING_DELTAS) * len(SPEED_FACTORS)
N_FEATURES = 15
# Zero turn at the lowest throttle; the shield's last resort.
FALLBACK_ACTION = 3 * len(SPEED_FACTORS) + 0

FEATURE_NAMES = (
    "lat_norm",
    "lon_norm",
    "heading_norm",
    "speed_norm",
    "hs_norm",
    "tp_norm",
    "wave_dir_norm",
    "hf_norm",
    "heading_sin",
    "heading_cos",
    "dist_frac",
    "bearing_sin",
    "bearing_cos",
    "rel_bearing_norm",
    "elapsed_norm",
)

PHYSICS_FEATURES = (4, 5, 6, 7)
HF_FEATURE = 7


def action_table() -> list[tuple[float, float]]:
    return [(d, f) for d in HEADING_DELTAS for f in SPEED_FACTORS]


_ACTIONS = action_table()


def action_from_index(index: int) -> tuple[float, float]:
    """(heading_delta_deg, speed_factor) for an action index."""
    if not 0 <= index < N_ACTIONS:
        raise ConfigError(f"action index {index} outside [0, {N_ACTIONS})")
    return _ACTIONS[index]


def action_index(delta: float, factor: float) -> int:
    return _ACTIONS.index((delta, factor))


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta: float = 0.3
    gamma_hf: float = 0.5
    progress_coeff: float = 0.5
    arrival_bonus: float = 50.0
    timeout_penalty: float = -20.0


@dataclass(frozen=True)
class SimConfig:
    base_speed_kts: float = 12.0
    dt_h: float = 1.0
    arrival_radius_deg: float = 0.15
    max_steps: int = 120
    min_speed_kts: float = MIN_SPEED_KTS

    @property
    def arrival_radius_nm(self) -> float:
        return self.arrival_radius_deg * geo.NM_PER_DEG


@dataclass(frozen=True)
class StartNoise:
    position_deg: float = 0.05
    heading_deg: float = 15.0
    speed_kts: float = 1.0
    window_h: int = 48


@dataclass(frozen=True)
class VesselState:
    lat: float
    lon: float
    heading: float
    speed: float
    base_speed: float = 12.0
    elapsed: float = 0.0
    env_t0: float = 0.0
    cumulative_hf: float = 0.0
    cumulative_proxy: float = 0.0
    distance_travelled: float = 0.0
    last_bearing: float = 0.0
    done: bool = False

    @property
    def env_time(self) -> float:
        return self.env_t0 + self.elapsed


@dataclass(frozen=True)
class MoveResult:
    """Deterministic one-step kinematics, shared by the simulator, the
    safety shield's lookahead, and the greedy baseline."""

    lat: float
    lon: float
    heading: float
    speed_kts: float
    distance_nm: float
    e_hf: float
    kind: str  # "ok" | "land" | "exit"


def propagate(
    vessel: VesselState,
    action_idx: int,
    env: EnvironmentFields,
    sim: SimConfig,
    coeffs: PhysicsCoefficients,
) -> MoveResult:
    """Apply one action with the true dynamics, without reward bookkeeping."""
    delta, factor = action_from_index(action_idx)
    heading = geo.wrap_360(vessel.heading + delta)
    met = env.sample(vessel.lat, vessel.lon, vessel.env_time, heading)
    inp = SpeedLossInput(met, heading, vessel.base_speed * factor)
    v_eff = effective_speed(coeffs, inp, GROUND_TRUTH_MODE, sim.min_speed_kts)
    d_nm = v_eff * sim.dt_h
    lat2, lon2 = geo.displace(vessel.lat, vessel.lon, heading, d_nm)

    # Walk the segment at sub-cell spacing so a fast step cannot tunnel
    # through a one-cell island or the domain edge.
    kind = "ok"
    n_probe = max(1, int(math.ceil(d_nm / 2.5)))
    for i in range(1, n_probe + 1):
        f = i / n_probe
        plat = vessel.lat + (lat2 - vessel.lat) * f
        plon = vessel.lon + (lon2 - vessel.lon) * f
        if not env.in_domain(plat, plon):
            kind = "exit"
            break
        if not env.is_water(plat, plon):
            kind = "land"
            break
    if kind == "exit":
        eps = 1e-6
        lat2 = min(max(lat2, env.grid.lat_min + eps), env.grid.lat_max - eps)
        lon2 = min(max(lon2, env.grid.lon_min + eps), env.grid.lon_max - eps)
    return MoveResult(lat2, lon2, heading, v_eff, d_nm, met.e_hf, kind)


def featurize(
    vessel: VesselState,
    goal: tuple[float, float],
    env: EnvironmentFields,
    initial_distance_nm: float,
    feature_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Normalized 15-feature observation vector (float32)."""
    met = env.sample(vessel.lat, vessel.lon, vessel.env_time, vessel.heading)
    dist = geo.distance_nm(vessel.lat, vessel.lon, goal[0], goal[1])
    if dist > 1e-9:
        bearing = geo.bearing_deg(vessel.lat, vessel.lon, goal[0], goal[1])
    else:
        bearing = vessel.last_bearing
    heading = geo.wrap_360(vessel.heading)
    h_rad = math.radians(heading)
    b_rad = math.radians(bearing)
    denom = initial_distance_nm if initial_distance_nm > 1e-9 else 1.0
    feats = np.array(
        [
            vessel.lat / 30.0,
            vessel.lon / -90.0,
            heading / 360.0,
            vessel.speed / 15.0,
            met.hs / 6.0,
            met.tp / 18.0,
            met.wave_dir_from / 360.0,
            met.e_hf / env.hf_p95,
            math.sin(h_rad),
            math.cos(h_rad),
            dist / denom,
            math.sin(b_rad),
            math.cos(b_rad),
            geo.wrap_signed(bearing - heading) / 180.0,
            vessel.elapsed / 48.0,
        ],
        dtype=np.float32,
    )
    if feature_mask is not None:
        feats = feats * np.asarray(feature_mask, dtype=np.float32)
    return feats


@dataclass(frozen=True)
class StepOutcome:
    arrived: bool = False
    timeout: bool = False
    blocked: bool = False
    intervened: bool = False
    executed_action: int = 0
    distance_nm: float = 0.0
    effective_speed_kts: float = 0.0
    e_hf: float = 0.0
    progress_nm: float = 0.0
    proxy_increment: float = 0.0
    bonus: float = 0.0


def step(
    vessel: VesselState,
    action_idx: int,
    env: EnvironmentFields,
    goal: tuple[float, float],
    sim: SimConfig,
    weights: RewardWeights,
    coeffs: PhysicsCoefficients,
    shield=None,
    max_steps: int | None = None,
) -> tuple[VesselState, float, bool, StepOutcome]:
    """Advance the vessel one hour. Raises on an already-terminated state."""
    if vessel.done:
        raise RuntimeError("step() called on a terminated episode")
    intervened = False
    if shield is not None:
        action_idx, intervened = shield.filter(vessel, action_idx, goal)

    dist_before = geo.distance_nm(vessel.lat, vessel.lon, goal[0], goal[1])
    move = propagate(vessel, action_idx, env, sim, coeffs)
    dist_after = geo.distance_nm(move.lat, move.lon, goal[0], goal[1])
    progress = dist_before - dist_after
    proxy_inc = fuel_proxy_step(move.speed_kts, sim.dt_h)

    limit = max_steps if max_steps is not None else sim.max_steps
    steps_taken = int(round(vessel.elapsed / sim.dt_h)) + 1
    blocked = move.kind != "ok"
    arrived = (not blocked) and dist_after <= sim.arrival_radius_nm
    timeout = (not arrived) and (not blocked) and steps_taken >= limit

    bonus = 0.0
    if arrived:
        bonus = weights.arrival_bonus
    elif blocked or timeout:
        bonus = weights.timeout_penalty
    done = arrived or blocked or timeout

    reward = (
        -(weights.alpha * sim.dt_h + weights.beta * proxy_inc + weights.gamma_hf * move.e_hf * move.distance_nm)
        + weights.progress_coeff * progress
        + bonus
    )

    if dist_after > 1e-9:
        new_bearing = geo.bearing_deg(move.lat, move.lon, goal[0], goal[1])
    else:
        new_bearing = vessel.last_bearing
    nxt = replace(
        vessel,
        lat=move.lat,
        lon=move.lon,
        heading=move.heading,
        speed=move.speed_kts,
        elapsed=vessel.elapsed + sim.dt_h,
        cumulative_hf=vessel.cumulative_hf + move.e_hf * move.distance_nm,
        cumulative_proxy=vessel.cumulative_proxy + proxy_inc,
        distance_travelled=vessel.distance_travelled + move.distance_nm,
        last_bearing=new_bearing,
        done=done,
    )
    outcome = StepOutcome(
        arrived=arrived,
        timeout=timeout,
        blocked=blocked,
        intervened=intervened,
        executed_action=action_idx,
        distance_nm=move.distance_nm,
        effective_speed_kts=move.speed_kts,
        e_hf=move.e_hf,
        progress_nm=progress,
        proxy_increment=proxy_inc,
        bonus=bonus,
    )
    return nxt, reward, done, outcome


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    weight: float = 1.0
    provenance: str = "behavioral"


@dataclass
class StepContext:
    """What a policy sees when asked for an action."""

    vessel: VesselState
    goal: tuple[float, float]
    features: np.ndarray
    env: EnvironmentFields
    sim: SimConfig
    coeffs: PhysicsCoefficients
    step_index: int


@dataclass
class EpisodeRecord:
    route: str
    arrived: bool
    blocked: bool
    timeout: bool
    steps: int
    time_h: float
    distance_nm: float
    proxy: float
    fuel_t: float
    co2_t: float
    hf: float
    shield_interventions: int
    depart_t: float
    initial_distance_nm: float
    final_distance_nm: float
    total_reward: float
    bonus_total: float
    trajectory: list = field(default_factory=list)
    transitions: list = field(default_factory=list)


@dataclass(frozen=True)
class EpisodeSetup:
    """Immutable bundle of everything an episode needs besides the policy."""

    env: EnvironmentFields
    sim: SimConfig
    weights: RewardWeights
    coeffs: PhysicsCoefficients
    vessel_fuel: VesselFuelModel
    feature_mask: np.ndarray | None = None


def initial_state(
    setup: EpisodeSetup,
    route: Route,
    rng: np.random.Generator | None = None,
    noise: StartNoise | None = None,
    departure_t: float | None = None,
) -> VesselState:
    """Start state at the route origin, optionally perturbed.

    Draw order with noise: departure hour, lat offset, lon offset, heading
    offset, base-speed offset. Keep this stable; reproducibility of every
    downstream artifact depends on it.
    """
    lat, lon = route.start
    bearing = geo.bearing_deg(lat, lon, route.goal[0], route.goal[1])
    heading = bearing
    base = setup.sim.base_speed_kts
    t0 = 0.0 if departure_t is None else float(departure_t)
    if rng is not None:
        noise = noise or StartNoise()
        if departure_t is None:
            t0 = float(rng.integers(0, max(1, int(noise.window_h))))
        lat += rng.uniform(-noise.position_deg, noise.position_deg)
        lon += rng.uniform(-noise.position_deg, noise.position_deg)
        heading = geo.wrap_360(bearing + rng.uniform(-noise.heading_deg, noise.heading_deg))
        base += rng.uniform(-noise.speed_kts, noise.speed_kts)
    if not setup.env.is_water(lat, lon):
        # Start perturbation nudged onto shore; fall back to the charted origin.
        lat, lon = route.start
    return VesselState(
        lat=lat,
        lon=lon,
        heading=heading,
        speed=base,
        base_speed=base,
        env_t0=t0,
        last_bearing=bearing,
    )


def run_episode(
    setup: EpisodeSetup,
    policy,
    route: Route,
    rng: np.random.Generator | None = None,
    noise: StartNoise | None = None,
    departure_t: float | None = None,
    shield=None,
    max_steps: int | None = None,
    provenance: str = "eval",
    collect_transitions: bool = True,
    keep_trajectory: bool = True,
) -> EpisodeRecord:
    """Roll one episode with ``policy`` and return its full record."""
    env, sim = setup.env, setup.sim
    vessel = initial_state(setup, route, rng, noise, departure_t)
    goal = route.goal
    d0 = geo.distance_nm(vessel.lat, vessel.lon, goal[0], goal[1])
    limit = max_steps if max_steps is not None else sim.max_steps

    arrived = d0 <= sim.arrival_radius_nm
    blocked = timeout = False
    interventions = 0
    total_reward = 0.0
    bonus_total = 0.0
    trajectory = []
    transitions = []
    k = 0
    while not (arrived or blocked or timeout) and k < limit:
        feats = featurize(vessel, goal, env, d0, setup.feature_mask)
        ctx = StepContext(vessel, goal, feats, env, sim, setup.coeffs, k)
        proposed = int(policy(ctx))
        nxt, reward, done, out = step(
            vessel, proposed, env, goal, sim, setup.weights, setup.coeffs, shield=shield, max_steps=limit
        )
        total_reward += reward
        bonus_total += out.bonus
        interventions += int(out.intervened)
        if keep_trajectory:
            trajectory.append(
                {
                    "t": vessel.env_time,
                    "lat": vessel.lat,
                    "lon": vessel.lon,
                    "heading": nxt.heading,
                    "speed_kts": out.effective_speed_kts,
                    "distance_nm": out.distance_nm,
                    "e_hf": out.e_hf,
                    "action": out.executed_action,
                    "reward": reward,
                }
            )
        if collect_transitions:
            nxt_feats = featurize(nxt, goal, env, d0, setup.feature_mask)
            transitions.append(
                Transition(feats, out.executed_action, reward, nxt_feats, done, 1.0, provenance)
            )
        arrived, blocked, timeout = out.arrived, out.blocked, out.timeout
        vessel = nxt
        k += 1

    fuel_t, co2_t = fuel_and_co2(vessel.cumulative_proxy, setup.vessel_fuel)
    return EpisodeRecord(
        route=route.name,
        arrived=arrived,
        blocked=blocked,
        timeout=timeout,
        steps=k,
        time_h=vessel.elapsed,
        distance_nm=vessel.distance_travelled,
        proxy=vessel.cumulative_proxy,
        fuel_t=fuel_t,
        co2_t=co2_t,
        hf=vessel.cumulative_hf,
        shield_interventions=interventions,
        depart_t=vessel.env_t0,
        initial_distance_nm=d0,
        final_distance_nm=geo.distance_nm(vessel.lat, vessel.lon, goal[0], goal[1]),
        total_reward=total_reward,
        bonus_total=bonus_total,
        trajectory=trajectory,
        transitions=transitions,
    )


def decomposed_return(record: EpisodeRecord, weights: RewardWeights, sim: SimConfig) -> float:
    """Episode return recomputed from aggregate terms; must match the summed
    per-step rewards for any policy."""
    return (
        -(weights.alpha * record.time_h + weights.beta * record.proxy + weights.gamma_hf * record.hf)
        + weights.progress_coeff * (record.initial_distance_nm - record.final_distance_nm)
        + record.bonus_total
    )
