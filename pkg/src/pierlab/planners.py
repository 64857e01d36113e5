"""Route planners and scripted steering policies.

The teacher is an A* search over a time-expanded lattice: nodes are
(cell_row, cell_col, hour) triples, moves go to the 8 neighbouring water
cells or hold in place for an hour, and each leg is priced with the same
speed-loss physics the simulator uses. Plans optimize a weighted sum of
passage time, a cubic fuel proxy, and head-sea exposure; the weight presets
below span the time-greedy to exposure-averse range.

Planners may be handed a belief field whose wave heights carry frozen
multiplicative noise (``perturb_waves``); reactive policies never touch it.
"""

import heapq
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .envfields import EnvironmentFields, MetoceanSample, Route
from .errors import ConfigError, PlanningError
from .physics import (
    GROUND_TRUTH_COEFFS,
    GROUND_TRUTH_MODE,
    PhysicsCoefficients,
    SpeedLossInput,
    directional_wave_factor,
    effective_speed,
    encounter_angle,
    fuel_proxy_step,
)
from .simulator import (
    FALLBACK_ACTION,
    HEADING_DELTAS,
    N_ACTIONS,
    SPEED_FACTORS,
    SimConfig,
    StepContext,
    action_index,
    propagate,
)


@dataclass(frozen=True)
class ObjectiveWeights:
    w_time: float = 1.0
    w_fuel: float = 0.3
    w_hf: float = 0.5


OBJECTIVE_PRESETS = {
    "time_only": ObjectiveWeights(1.0, 0.0, 0.0),
    "balanced": ObjectiveWeights(1.0, 0.3, 0.5),
    "safety_only": ObjectiveWeights(0.2, 0.0, 2.0),
    "hf_averse": ObjectiveWeights(0.2, 0.1, 3.0),
}

TEACHER_PRESETS = ("time_only", "balanced", "safety_only")


def objective_preset(name: str) -> ObjectiveWeights:
    try:
        return OBJECTIVE_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown objective preset {name!r}; expected one of {sorted(OBJECTIVE_PRESETS)}"
        ) from None


class PerturbedWaves:
    """Belief field: true waves times a frozen noise multiplier.

    One multiplier max(0, 1 + sigma*xi), xi ~ N(0,1), is drawn per grid cell
    and 3-hour bucket of the storm period, so repeated queries are
    consistent and plans see a coherent (if wrong) forecast. Periods, wave
    direction, currents, wind, land, and the exposure normalization are
    passed through untouched. Head-sea exposure scales linearly with wave
    height, so it picks up the same multiplier.
    """

    BUCKET_H = 3.0

    def __init__(self, base: EnvironmentFields, sigma: float, rng: np.random.Generator):
        if sigma < 0:
            raise ConfigError(f"forecast noise sigma must be >= 0, got {sigma}")
        self.base = base
        self.sigma = sigma
        grid = base.grid
        n_buckets = max(1, int(round(base.wave.period_h / self.BUCKET_H)))
        xi = rng.standard_normal((n_buckets, grid.n_rows, grid.n_cols))
        self.multipliers = np.maximum(0.0, 1.0 + sigma * xi)

    def __getattr__(self, name):
        return getattr(self.base, name)

    def multiplier_at(self, lat: float, lon: float, t: float) -> float:
        row, col = self.base.grid.cell_of(lat, lon)
        bucket = int(math.floor(t / self.BUCKET_H)) % self.multipliers.shape[0]
        return float(self.multipliers[bucket, row, col])

    def sample_wave(self, lat: float, lon: float, t: float) -> tuple[float, float, float]:
        hs, tp, dir_from = self.base.sample_wave(lat, lon, t)
        return hs * self.multiplier_at(lat, lon, t), tp, dir_from

    def hf_exposure(self, lat: float, lon: float, t: float, heading_deg: float) -> float:
        return self.base.hf_exposure(lat, lon, t, heading_deg) * self.multiplier_at(lat, lon, t)

    def sample(self, lat: float, lon: float, t: float, heading_deg: float) -> MetoceanSample:
        m = self.base.sample(lat, lon, t, heading_deg)
        k = self.multiplier_at(lat, lon, t)
        return MetoceanSample(
            hs=m.hs * k,
            tp=m.tp,
            wave_dir_from=m.wave_dir_from,
            current_u=m.current_u,
            current_v=m.current_v,
            wind_u=m.wind_u,
            wind_v=m.wind_v,
            e_hf=m.e_hf * k,
        )

    def hs_grid(self, t: float) -> np.ndarray:
        bucket = int(math.floor(t / self.BUCKET_H)) % self.multipliers.shape[0]
        return self.base.hs_grid(t) * self.multipliers[bucket]

    def max_multiplier(self) -> float:
        return float(self.multipliers.max())


def perturb_waves(base: EnvironmentFields, sigma: float, rng: np.random.Generator) -> PerturbedWaves:
    return PerturbedWaves(base, sigma, rng)


@dataclass(frozen=True)
class PlanLeg:
    from_cell: tuple[int, int]
    to_cell: tuple[int, int]
    heading_deg: float
    distance_nm: float
    tau_h: float
    speed_kts: float
    e_hf: float
    cost: float


@dataclass
class TrajectoryPlan:
    route: str
    preset: str
    departure_t: float
    cells: list = field(default_factory=list)
    waypoints: list = field(default_factory=list)  # (lat, lon) cell centers
    times: list = field(default_factory=list)  # planned env time at each waypoint
    legs: list = field(default_factory=list)
    total_cost: float = 0.0
    expanded: int = 0

    @property
    def duration_h(self) -> float:
        return self.times[-1] - self.times[0] if self.times else 0.0


_NEIGHBORS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def _speed_ceiling(env, base_speed: float, coeffs: PhysicsCoefficients, mode: str) -> float:
    """Upper bound on achievable speed over water anywhere in the field.

    Each speed-loss term is bounded by its most favorable extreme: the
    largest believable wave height (including any forecast-noise
    multiplier), the strongest possible following current, and the full
    wind magnitude. Terms that can only slow the vessel contribute zero.
    """
    base_env = env.base if isinstance(env, PerturbedWaves) else env
    hs_max = base_env.wave.hs_base + base_env.wave.hs_storm * (1.0 + base_env.wave.amplitude)
    if isinstance(env, PerturbedWaves):
        hs_max *= max(1.0, env.max_multiplier())
    steep_max = hs_max / base_env.wave.tp_s
    c_max = abs(base_env.current.u_max)
    w_max = math.hypot(base_env.wind.u, base_env.wind.v)
    # The steepness regressor is non-negative; its signed multiplier is -a
    # in ground-truth convention and +a in calibrated convention.
    steep_gain = -coeffs.a if mode == GROUND_TRUTH_MODE else coeffs.a
    gain = (
        max(0.0, steep_gain) * steep_max
        + max(0.0, coeffs.b) * hs_max**2
        + abs(coeffs.c) * c_max
        + abs(coeffs.d) * w_max
    )
    if mode != GROUND_TRUTH_MODE:
        gain += max(0.0, coeffs.e)
    return base_speed + gain


class _LegPricer:
    """Memoized leg ingredients for one field.

    The wave field is exactly periodic, so everything weights-independent
    about a leg (bearing, distance, achieved speed, duration, exposure) is
    keyed on (from, to, phase) within one pricing context (base speed,
    coefficients, mode, floor). Cached values are produced by the same
    physics calls the uncached path makes, so cached and fresh legs price
    bit-identically.
    """

    def __init__(self, env):
        self.env = env
        self.period = float(env.wave.period_h)
        self._met: dict = {}
        self._geo: dict = {}
        self._by_ctx: dict = {}
        self._ctx = None
        self._parts: dict = {}

    def geometry(self, from_cell: tuple[int, int], to_cell: tuple[int, int]) -> tuple[float, float]:
        # Keyed on the exact cell pair: equal offsets do not give bit-equal
        # coordinate differences across the grid.
        key = (from_cell, to_cell)
        out = self._geo.get(key)
        if out is None:
            lat, lon = self.env.grid.cell_center(*from_cell)
            nlat, nlon = self.env.grid.cell_center(*to_cell)
            out = (geo.bearing_deg(lat, lon, nlat, nlon), geo.distance_nm(lat, lon, nlat, nlon))
            self._geo[key] = out
        return out

    def _met_base(self, cell: tuple[int, int], phase: float) -> MetoceanSample:
        key = (cell, phase)
        base = self._met.get(key)
        if base is None:
            lat, lon = self.env.grid.cell_center(*cell)
            base = self.env.sample(lat, lon, phase, 0.0)
            self._met[key] = base
        return base

    def parts(
        self,
        from_cell: tuple[int, int],
        to_cell: tuple[int, int],
        t: float,
        base_speed: float,
        coeffs: PhysicsCoefficients,
        mode: str,
        min_speed: float,
    ) -> tuple[float, float, float, float, float]:
        """(heading, distance_nm, speed_kts, tau_h, e_hf) for one move."""
        ctx = (base_speed, mode, min_speed, coeffs)
        if ctx != self._ctx:
            self._ctx = ctx
            self._parts = self._by_ctx.setdefault(ctx, {})
        key = (from_cell, to_cell, t % self.period)
        out = self._parts.get(key)
        if out is None:
            heading, d_nm = self.geometry(from_cell, to_cell)
            met = self._met_base(from_cell, key[2])
            # speed_loss reads everything but the exposure field, so the
            # heading-free sample prices speed exactly.
            v = effective_speed(coeffs, SpeedLossInput(met, heading, base_speed), mode, min_speed)
            e_hf = (met.hs / met.tp) * directional_wave_factor(
                encounter_angle(heading, met.wave_dir_from)
            )
            out = (heading, d_nm, v, d_nm / v, e_hf)
            self._parts[key] = out
        return out


_PRICERS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def leg_pricer(env) -> _LegPricer:
    """The met/geometry memo for a field, shared across searches on it."""
    pricer = _PRICERS.get(env)
    if pricer is None:
        pricer = _LegPricer(env)
        _PRICERS[env] = pricer
    return pricer


def leg_between(
    env,
    from_cell: tuple[int, int],
    to_cell: tuple[int, int],
    t_depart: float,
    weights: ObjectiveWeights,
    base_speed_kts: float = 12.0,
    coeffs: PhysicsCoefficients | None = None,
    mode: str = GROUND_TRUTH_MODE,
    min_speed_kts: float = 0.5,
    pricer: _LegPricer | None = None,
) -> PlanLeg:
    """Price one move between cell centers departing at ``t_depart``.

    Met covariates are sampled at the departure cell, the same convention
    the plan scorer uses. Moving onto the same cell is a one-hour hold that
    pays time cost only.
    """
    coeffs = coeffs or GROUND_TRUTH_COEFFS
    if to_cell == from_cell:
        return PlanLeg(from_cell, from_cell, 0.0, 0.0, 1.0, 0.0, 0.0, weights.w_time * 1.0)
    if pricer is not None:
        heading, d_nm, v, tau, e_hf = pricer.parts(
            from_cell, to_cell, t_depart, base_speed_kts, coeffs, mode, min_speed_kts
        )
    else:
        grid = env.grid
        lat, lon = grid.cell_center(*from_cell)
        nlat, nlon = grid.cell_center(*to_cell)
        heading = geo.bearing_deg(lat, lon, nlat, nlon)
        d_nm = geo.distance_nm(lat, lon, nlat, nlon)
        met = env.sample(lat, lon, t_depart, heading)
        v = effective_speed(
            coeffs, SpeedLossInput(met, heading, base_speed_kts), mode, min_speed_kts
        )
        tau = d_nm / v
        e_hf = met.e_hf
    cost = (
        weights.w_time * tau
        + weights.w_fuel * fuel_proxy_step(v, tau)
        + weights.w_hf * e_hf * d_nm
    )
    return PlanLeg(from_cell, to_cell, heading, d_nm, tau, v, e_hf, cost)


def successor_nodes(
    env,
    node: tuple,
    departure_t: float,
    horizon_h: int,
    weights: ObjectiveWeights,
    base_speed_kts: float = 12.0,
    coeffs: PhysicsCoefficients | None = None,
    mode: str = GROUND_TRUTH_MODE,
    min_speed_kts: float = 0.5,
    pricer: _LegPricer | None = None,
):
    """Yield ((cell, hour), PlanLeg) successors of a time-expanded node.

    Moves go to the 8 neighbouring water cells (diagonals only when both
    touching edge cells are water) plus a one-hour hold; the arrival hour
    rounds the leg duration and always advances by at least one. Both the
    A* teacher and any exhaustive cross-check search enumerate moves
    through here, so they price the identical graph.
    """
    cell, k = node
    if k >= horizon_h:
        return
    grid = env.grid
    t_here = departure_t + k
    r, c = cell
    for dr, dc in _NEIGHBORS:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < grid.n_rows and 0 <= nc < grid.n_cols):
            continue
        if not env.is_water_cell(nr, nc):
            continue
        if dr != 0 and dc != 0 and not (env.is_water_cell(r + dr, c) and env.is_water_cell(r, c + dc)):
            continue
        leg = leg_between(
            env, cell, (nr, nc), t_here, weights, base_speed_kts, coeffs, mode, min_speed_kts, pricer
        )
        nk = min(horizon_h, int(round(k + leg.tau_h)))
        if nk == k:
            nk = k + 1
        yield ((nr, nc), nk), leg
    yield (cell, k + 1), leg_between(
        env, cell, cell, t_here, weights, base_speed_kts, coeffs, mode, min_speed_kts, pricer
    )


def make_heuristic(
    env,
    weights: ObjectiveWeights,
    goal_cell: tuple[int, int],
    base_speed_kts: float = 12.0,
    coeffs: PhysicsCoefficients | None = None,
    mode: str = GROUND_TRUTH_MODE,
):
    """Admissible, consistent remaining-cost bound toward ``goal_cell``.

    Remaining distance is bounded below with longitude scaled by the
    smallest cosine over the grid's latitude span: unlike the mean-latitude
    scaling legs use, a fixed scaling obeys the triangle inequality
    exactly. Dividing by the global speed ceiling then keeps every leg's
    time cost at least as large as the heuristic drop across it.
    """
    coeffs = coeffs or GROUND_TRUTH_COEFFS
    grid = env.grid
    v_max = _speed_ceiling(env, base_speed_kts, coeffs, mode)
    cos_min = min(math.cos(math.radians(grid.lat_min)), math.cos(math.radians(grid.lat_max)))
    goal_lat, goal_lon = grid.cell_center(*goal_cell)

    def heuristic(cell: tuple[int, int]) -> float:
        lat, lon = grid.cell_center(*cell)
        d_lb = geo.NM_PER_DEG * math.hypot(lat - goal_lat, (lon - goal_lon) * cos_min)
        return weights.w_time * d_lb / v_max

    return heuristic


def astar_teacher(
    env,
    route: Route,
    weights: ObjectiveWeights,
    departure_t: float = 0.0,
    base_speed_kts: float = 12.0,
    coeffs: PhysicsCoefficients | None = None,
    mode: str = GROUND_TRUTH_MODE,
    horizon_h: int = 120,
    min_speed_kts: float = 0.5,
    preset: str = "custom",
) -> TrajectoryPlan:
    """Plan a cell path from route start to goal on the given (belief) field.

    The search is time-expanded: a node is (row, col, hour-since-departure),
    successors are the 8-neighbour water cells plus a one-hour hold, and leg
    costs are w_time*tau + w_fuel*v^3*tau/1000 + w_hf*E_hf*d evaluated with
    the leg's departure-cell met sample. The heuristic divides remaining
    distance by a global speed ceiling, which keeps it admissible and
    consistent, so the first goal pop is optimal.
    """
    coeffs = coeffs or GROUND_TRUTH_COEFFS
    grid = env.grid
    start_cell = grid.cell_of(*route.start)
    goal_cell = grid.cell_of(*route.goal)
    if not env.is_water_cell(*start_cell) or not env.is_water_cell(*goal_cell):
        raise PlanningError(f"route {route.name}: start or goal cell is on land")

    heuristic = make_heuristic(env, weights, goal_cell, base_speed_kts, coeffs, mode)
    pricer = leg_pricer(env)

    start = (start_cell, 0)
    g_cost: dict = {start: 0.0}
    parent: dict = {start: (None, None)}
    frontier = [(heuristic(start_cell), 0, start)]
    tie = 0
    expanded = 0
    goal_node = None
    closed = set()

    while frontier:
        f, _, node = heapq.heappop(frontier)
        if node in closed:
            continue
        closed.add(node)
        expanded += 1
        cell, k = node
        if cell == goal_cell:
            goal_node = node
            break
        for nxt, leg in successor_nodes(
            env,
            node,
            departure_t,
            horizon_h,
            weights,
            base_speed_kts,
            coeffs,
            mode,
            min_speed_kts,
            pricer,
        ):
            ng = g_cost[node] + leg.cost
            if ng < g_cost.get(nxt, math.inf) - 1e-12:
                g_cost[nxt] = ng
                parent[nxt] = (node, leg)
                tie += 1
                heapq.heappush(frontier, (ng + heuristic(nxt[0]), tie, nxt))

    if goal_node is None:
        raise PlanningError(
            f"route {route.name}: no water path within {horizon_h} h (expanded {expanded} nodes)"
        )

    legs: list[PlanLeg] = []
    cells = []
    node = goal_node
    while node is not None:
        cells.append(node[0])
        prev, leg = parent[node]
        if leg is not None:
            legs.append(leg)
        node = prev
    cells.reverse()
    legs.reverse()

    times = [float(departure_t)]
    for leg in legs:
        times.append(times[-1] + leg.tau_h)
    return TrajectoryPlan(
        route=route.name,
        preset=preset,
        departure_t=departure_t,
        cells=cells,
        waypoints=[grid.cell_center(*c) for c in cells],
        times=times,
        legs=legs,
        total_cost=g_cost[goal_node],
        expanded=expanded,
    )


def score_plan(
    plan: TrajectoryPlan,
    env,
    weights: ObjectiveWeights,
    base_speed_kts: float = 12.0,
    coeffs: PhysicsCoefficients | None = None,
    mode: str = GROUND_TRUTH_MODE,
    min_speed_kts: float = 0.5,
) -> dict:
    """Walk a plan's legs against a (typically true) field and price them.

    Leg timing is re-derived from the scored field, so a plan made on a
    noisy belief generally costs more here than its own estimate.
    """
    coeffs = coeffs or GROUND_TRUTH_COEFFS
    t = plan.departure_t
    time_h = proxy = hf = 0.0
    for leg in plan.legs:
        lat, lon = env.grid.cell_center(*leg.from_cell)
        if leg.distance_nm == 0.0:
            time_h += leg.tau_h
            t += leg.tau_h
            continue
        met = env.sample(lat, lon, t, leg.heading_deg)
        v = effective_speed(
            coeffs, SpeedLossInput(met, leg.heading_deg, base_speed_kts), mode, min_speed_kts
        )
        tau = leg.distance_nm / v
        time_h += tau
        proxy += fuel_proxy_step(v, tau)
        hf += met.e_hf * leg.distance_nm
        t += tau
    cost = weights.w_time * time_h + weights.w_fuel * proxy + weights.w_hf * hf
    return {"time_h": time_h, "proxy": proxy, "hf": hf, "cost": cost}


# ---------------------------------------------------------------------------
# Scripted steering policies (callables over StepContext)


def _closest_heading_action(current_heading: float, target_bearing: float, factor: float = 1.0) -> int:
    best = min(
        HEADING_DELTAS,
        key=lambda d: (abs(geo.wrap_signed(geo.wrap_360(current_heading + d) - target_bearing)), abs(d)),
    )
    return action_index(best, factor)


def great_circle_policy(ctx: StepContext) -> int:
    """Full throttle, tightest turn toward the instantaneous goal bearing."""
    bearing = geo.bearing_deg(ctx.vessel.lat, ctx.vessel.lon, ctx.goal[0], ctx.goal[1])
    return _closest_heading_action(ctx.vessel.heading, bearing)


def make_noisy_bearing_policy(rng: np.random.Generator, heading_noise_deg: float = 8.0):
    """Great-circle steering with jittered target bearing and random throttle."""

    def policy(ctx: StepContext) -> int:
        bearing = geo.bearing_deg(ctx.vessel.lat, ctx.vessel.lon, ctx.goal[0], ctx.goal[1])
        target = bearing + rng.uniform(-heading_noise_deg, heading_noise_deg)
        factor = SPEED_FACTORS[rng.integers(0, len(SPEED_FACTORS))]
        return _closest_heading_action(ctx.vessel.heading, geo.wrap_360(target), factor)

    return policy


def greedy_goal_policy(ctx: StepContext) -> int:
    """One-step lookahead with the true dynamics; maximizes distance gained."""
    d0 = geo.distance_nm(ctx.vessel.lat, ctx.vessel.lon, ctx.goal[0], ctx.goal[1])
    best_a, best_gain = None, -math.inf
    for a in range(N_ACTIONS):
        move = propagate(ctx.vessel, a, ctx.env, ctx.sim, ctx.coeffs)
        if move.kind != "ok":
            continue
        gain = d0 - geo.distance_nm(move.lat, move.lon, ctx.goal[0], ctx.goal[1])
        if gain > best_gain + 1e-12:
            best_a, best_gain = a, gain
    return best_a if best_a is not None else FALLBACK_ACTION


def make_plan_follower(plan: TrajectoryPlan, lookahead_nm: float = 12.0):
    """Pure-pursuit tracker for an A* plan, full throttle.

    Steers at the first not-yet-passed waypoint beyond the lookahead
    distance; once the list is exhausted it homes on the final waypoint.
    The waypoint cursor only moves forward, so loops cannot re-capture it.
    """
    waypoints = list(plan.waypoints)
    cursor = {"i": 0}

    def policy(ctx: StepContext) -> int:
        i = cursor["i"]
        while (
            i < len(waypoints) - 1
            and geo.distance_nm(ctx.vessel.lat, ctx.vessel.lon, *waypoints[i]) < lookahead_nm
        ):
            i += 1
        cursor["i"] = i
        target = waypoints[i]
        bearing = geo.bearing_deg(ctx.vessel.lat, ctx.vessel.lon, target[0], target[1])
        return _closest_heading_action(ctx.vessel.heading, bearing)

    return policy
