"""Evaluation harness, metrics tables, and the statistics toolbox.

Each (method, route, episode) triple gets its own named RNG substream, so
any slice of an evaluation can be reproduced in isolation and reactive
policies return bit-identical episodes regardless of what else ran. Planner
baselines plan lazily on their belief field at the episode's actual start
state, then track the plan with pure pursuit. Metrics go to a versioned CSV
with fixed float formatting.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betainc

from .envfields import Route
from .errors import ConfigError
from .planners import astar_teacher, great_circle_policy, greedy_goal_policy, make_plan_follower, objective_preset
from .seeding import substream
from .shield import Shield, ShieldConfig
from .simulator import EpisodeSetup, RewardWeights, StartNoise, run_episode

METRICS_FORMAT = "pierlab-metrics-v1"

_COLUMNS = (
    "method",
    "route",
    "episode",
    "sigma",
    "realization",
    "arrived",
    "blocked",
    "timeout",
    "steps",
    "time_h",
    "distance_nm",
    "proxy",
    "fuel_t",
    "co2_t",
    "hf",
    "shield_interventions",
    "reward",
    "depart_t",
    "phase",
)


def storm_quarter(depart_t: float, period_h: float = 48.0) -> int:
    """Quarter of the storm cycle (0-3) a departure falls in; the desk-scale
    stand-in for seasonal stratification."""
    return int((depart_t % period_h) // (period_h / 4.0))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.10g" % value
    return "" if value is None else str(value)


def _parse(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, **row) -> None:
        self.rows.append(row)

    def extend(self, other: "MetricsTable") -> None:
        self.rows.extend(other.rows)

    def filter(self, **conditions) -> "MetricsTable":
        out = [r for r in self.rows if all(r.get(k) == v for k, v in conditions.items())]
        return MetricsTable(out)

    def values(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=np.float64)

    def columns(self) -> list:
        extra = sorted({k for r in self.rows for k in r} - set(_COLUMNS))
        return [c for c in _COLUMNS if any(c in r for r in self.rows)] + extra

    def to_csv(self, path) -> None:
        cols = self.columns()
        lines = [f"# {METRICS_FORMAT}", ",".join(cols)]
        for r in self.rows:
            lines.append(",".join(_fmt(r.get(c)) for c in cols))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or not lines[0].startswith(f"# {METRICS_FORMAT}"):
            raise ConfigError(f"{path} is not a {METRICS_FORMAT} file")
        cols = lines[1].split(",")
        rows = []
        for ln in lines[2:]:
            if not ln:
                continue
            rows.append({c: _parse(v) for c, v in zip(cols, ln.split(","))})
        return cls(rows)

    def summarize(self, by=("method", "route")) -> list:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(tuple(r.get(k) for k in by), []).append(r)
        out = []
        for key, rows in groups.items():
            arrived = [r for r in rows if r.get("arrived")]
            section = dict(zip(by, key))
            section.update(
                n=len(rows),
                arrival_rate=len(arrived) / len(rows),
                mean_time_h=float(np.mean([r["time_h"] for r in arrived])) if arrived else math.nan,
                mean_hf=float(np.mean([r["hf"] for r in rows])),
                mean_fuel_t=float(np.mean([r["fuel_t"] for r in rows])),
                mean_co2_t=float(np.mean([r["co2_t"] for r in rows])),
                mean_shield_interventions=float(
                    np.mean([r["shield_interventions"] for r in rows])
                ),
                mean_reward=float(np.mean([r["reward"] for r in rows])),
            )
            out.append(section)
        return out


# ---------------------------------------------------------------------------
# Policy factories


def make_lazy_astar_factory(
    belief_env, preset: str, sim, coeffs, horizon_h: int = 120, lookahead_nm: float = 12.0
):
    """Plan on the belief field from the episode's real start state at first
    call, then pure-pursue the plan. Fresh cursor per episode."""
    weights = objective_preset(preset)

    def factory():
        state = {"policy": None}

        def policy(ctx):
            if state["policy"] is None:
                route = Route("adhoc", (ctx.vessel.lat, ctx.vessel.lon), ctx.goal)
                plan = astar_teacher(
                    belief_env,
                    route,
                    weights,
                    departure_t=ctx.vessel.env_t0,
                    base_speed_kts=ctx.sim.base_speed_kts,
                    coeffs=coeffs,
                    horizon_h=horizon_h,
                    preset=preset,
                )
                state["policy"] = make_plan_follower(plan, lookahead_nm)
            return state["policy"](ctx)

        return policy

    return factory


def baseline_factories(
    setup: EpisodeSetup,
    belief_env=None,
    horizon_h: int = 120,
    astar_presets=("time_only",),
) -> dict:
    """Reactive baselines plus lazily re-planning A* at the given presets.

    Exposure-heavy presets (safety_only, hf_averse) expand large search
    frontiers; include them explicitly when the study needs them.
    """
    env = belief_env if belief_env is not None else setup.env
    factories = {
        "great_circle": lambda: great_circle_policy,
        "greedy": lambda: greedy_goal_policy,
    }
    for preset in astar_presets:
        factories[f"astar_{preset}"] = make_lazy_astar_factory(
            env, preset, setup.sim, setup.coeffs, horizon_h
        )
    return factories


# ---------------------------------------------------------------------------
# Evaluation


def run_eval(
    setup: EpisodeSetup,
    policies: dict,
    routes: list[Route],
    master_seed: int,
    episodes_per_route: int = 20,
    shield_cfg: ShieldConfig | None = ShieldConfig(),
    noise: StartNoise | None = None,
    max_steps: int | None = None,
    extra_fields: dict | None = None,
) -> MetricsTable:
    """Evaluate policy factories on every route; returns per-episode rows.

    ``policies`` maps name -> zero-argument factory producing a fresh policy
    callable. The shield (if configured) filters every executed action; its
    interventions are counted per episode.
    """
    table = MetricsTable()
    noise = noise or StartNoise()
    shield = (
        Shield(setup.env, setup.sim, setup.coeffs, shield_cfg) if shield_cfg is not None else None
    )
    for name, factory in policies.items():
        for route in routes:
            for ep in range(episodes_per_route):
                rng = substream(master_seed, "eval", name, route.name, ep)
                rec = run_episode(
                    setup,
                    factory(),
                    route,
                    rng=rng,
                    noise=noise,
                    shield=shield,
                    max_steps=max_steps,
                    keep_trajectory=False,
                    collect_transitions=False,
                )
                row = {
                    "method": name,
                    "route": route.name,
                    "episode": ep,
                    "arrived": rec.arrived,
                    "blocked": rec.blocked,
                    "timeout": rec.timeout,
                    "steps": rec.steps,
                    "time_h": rec.time_h,
                    "distance_nm": rec.distance_nm,
                    "proxy": rec.proxy,
                    "fuel_t": rec.fuel_t,
                    "co2_t": rec.co2_t,
                    "hf": rec.hf,
                    "shield_interventions": rec.shield_interventions,
                    "reward": rec.total_reward,
                    "depart_t": rec.depart_t,
                    "phase": storm_quarter(rec.depart_t, setup.env.wave.period_h),
                }
                if extra_fields:
                    row.update(extra_fields)
                table.rows.append(row)
    return table


def eval_bundle_policies(bundles: dict) -> dict:
    """Wrap trained policy bundles as eval factories."""
    return {name: (lambda b=b: b.as_policy()) for name, b in bundles.items()}


def setup_for_bundle(setup: EpisodeSetup, bundle) -> EpisodeSetup:
    """Reapply the bundle's training-time feature mask at evaluation."""
    if bundle.feature_mask is None:
        return setup
    return replace(setup, feature_mask=np.asarray(bundle.feature_mask, dtype=np.float32))


# ---------------------------------------------------------------------------
# Forecast degradation study


def forecast_study(
    setup: EpisodeSetup,
    routes: list[Route],
    master_seed: int,
    sigmas=(0.0, 0.1, 0.25, 0.5, 0.75, 1.0),
    presets=("time_only", "hf_averse"),
    reactive=("great_circle",),
    n_realizations: int = 3,
    episodes_per_route: int = 4,
    shield_cfg: ShieldConfig | None = ShieldConfig(),
    horizon_h: int = 120,
) -> MetricsTable:
    """Planner performance as forecast noise grows, against reactive controls.

    Planners re-plan per episode on a frozen noisy belief (one realization
    per (sigma, realization index) substream); reactive policies never read
    the belief, so their rows must be identical across sigma.
    """
    from .planners import perturb_waves

    table = MetricsTable()
    for sigma in sigmas:
        for real in range(n_realizations):
            belief = perturb_waves(
                setup.env, sigma, substream(master_seed, "forecast", "%.4g" % sigma, real)
            )
            policies = {}
            for preset in presets:
                policies[f"astar_{preset}"] = make_lazy_astar_factory(
                    belief, preset, setup.sim, setup.coeffs, horizon_h
                )
            if real == 0:
                if "great_circle" in reactive:
                    policies["great_circle"] = lambda: great_circle_policy
                if "greedy" in reactive:
                    policies["greedy"] = lambda: greedy_goal_policy
            part = run_eval(
                setup,
                policies,
                routes,
                master_seed,
                episodes_per_route=episodes_per_route,
                shield_cfg=shield_cfg,
                extra_fields={"sigma": sigma, "realization": real},
            )
            table.extend(part)
    return table


# ---------------------------------------------------------------------------
# Statistics


def f_sf(x: float, d1: float, d2: float) -> float:
    """Survival function of the F distribution via the regularized
    incomplete beta function."""
    if x <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


def levene_test(groups: list, center: str = "mean") -> tuple[float, float]:
    """Homogeneity-of-variance test on absolute deviations from each
    group's center. Returns (W, p)."""
    if len(groups) < 2:
        raise ConfigError("levene_test needs at least two groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(len(a) < 2 for a in arrays):
        raise ConfigError("levene_test needs at least two observations per group")
    if center == "mean":
        z = [np.abs(a - a.mean()) for a in arrays]
    elif center == "median":
        z = [np.abs(a - np.median(a)) for a in arrays]
    else:
        raise ConfigError(f"unknown center {center!r}; expected 'mean' or 'median'")
    k = len(z)
    n_total = sum(len(g) for g in z)
    grand = sum(g.sum() for g in z) / n_total
    between = sum(len(g) * (g.mean() - grand) ** 2 for g in z)
    within = sum(float(((g - g.mean()) ** 2).sum()) for g in z)
    if within == 0.0:
        # All deviations identical within groups. Equal across groups too
        # means no evidence of spread differences; otherwise separation is
        # perfect and W is unbounded.
        if between == 0.0:
            return 0.0, 1.0
        return math.inf, 0.0
    w = (n_total - k) / (k - 1) * between / within
    return float(w), f_sf(w, k - 1, n_total - k)


def variance_ratio(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        return math.nan
    va = float(np.var(a, ddof=1))
    vb = float(np.var(b, ddof=1))
    if vb == 0.0:
        return math.inf if va > 0.0 else 1.0
    return va / vb


def two_sample_t(a, b) -> tuple[float, float]:
    """Pooled-variance two-sample t statistic and two-sided p value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise ConfigError("two_sample_t needs at least two observations per sample")
    df = n1 + n2 - 2
    ss = float(((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum())
    diff = float(a.mean() - b.mean())
    if ss == 0.0:
        return (0.0, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), 0.0)
    t = diff / math.sqrt(ss / df * (1.0 / n1 + 1.0 / n2))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, p


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1 with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    base = np.arange(1, len(x) + 1, dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = base[i : j + 1].mean()
        i = j + 1
    return ranks


def mann_whitney_u(a, b) -> tuple[float, float]:
    """Mann-Whitney U with a tie-corrected, continuity-corrected normal
    approximation for the two-sided p value. Returns (U of sample a, p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ConfigError("mann_whitney_u needs non-empty samples")
    ranks = _average_ranks(np.concatenate([a, b]))
    u1 = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0
    u_small = min(u1, n1 * n2 - u1)
    n = n1 + n2
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float((counts**3 - counts).sum()) / (n * (n - 1)) if n > 1 else 0.0
    sigma2 = n1 * n2 / 12.0 * (n + 1 - tie_term)
    if sigma2 <= 0.0:
        return u1, 1.0
    z = (u_small - n1 * n2 / 2.0 + 0.5) / math.sqrt(sigma2)
    p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
    return u1, p


def tail_frequency(x: np.ndarray, factor: float = 1.5) -> float:
    """Fraction of observations above factor times the sample median."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x > factor * np.median(x)))


def bootstrap_ci(
    data,
    stat,
    rng: np.random.Generator,
    n_boot: int = 5000,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Percentile bootstrap interval for ``stat``.

    ``data`` is one array, or a tuple of equal-length arrays resampled with
    a shared index draw (paired), in which case ``stat`` takes one array per
    element.
    """
    if isinstance(data, tuple):
        arrays = [np.asarray(a, dtype=np.float64) for a in data]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise ConfigError("paired bootstrap requires equal-length arrays")
        if n < 2:
            raise ConfigError(f"bootstrap needs at least 2 observations per sample, got {n}")
        stats = np.empty(n_boot)
        for i in range(n_boot):
            idx = rng.integers(0, n, size=n)
            stats[i] = stat(*(a[idx] for a in arrays))
    else:
        a = np.asarray(data, dtype=np.float64)
        n = len(a)
        if n < 2:
            raise ConfigError(f"bootstrap needs at least 2 observations per sample, got {n}")
        stats = np.empty(n_boot)
        for i in range(n_boot):
            stats[i] = stat(a[rng.integers(0, n, size=n)])
    lo, hi = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


@dataclass
class MCResult:
    values: np.ndarray
    rel_range: float
    n_samples: int

    def summary(self) -> dict:
        v = self.values
        return {
            "n": int(self.n_samples),
            "rel_range": self.rel_range,
            "mean": float(v.mean()),
            "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "p5": float(np.percentile(v, 5)),
            "p50": float(np.percentile(v, 50)),
            "p95": float(np.percentile(v, 95)),
        }


def mc_coefficient_perturbation(
    coeffs, evaluator, rng: np.random.Generator, n_samples: int = 1000, rel_range: float = 0.5
) -> MCResult:
    """Scale each coefficient by an independent U(1-r, 1+r) factor and
    evaluate the response. r=0 collapses to a constant, which doubles as a
    self-check of the pipeline."""
    from .physics import PhysicsCoefficients

    base = np.array([coeffs.a, coeffs.b, coeffs.c, coeffs.d, coeffs.e], dtype=np.float64)
    values = np.empty(n_samples)
    for i in range(n_samples):
        factors = rng.uniform(1.0 - rel_range, 1.0 + rel_range, size=base.shape)
        values[i] = evaluator(PhysicsCoefficients(*(base * factors)))
    return MCResult(values=values, rel_range=rel_range, n_samples=n_samples)


def probe_speed_evaluator(env, rng: np.random.Generator, n_probes: int = 64, base_speed: float = 12.0):
    """Mean predicted speed change over random water probes; the default
    response function for coefficient-uncertainty studies."""
    from .physics import CALIBRATED_MODE, SpeedLossInput, speed_loss

    cells = env.water_cells()
    probes = []
    for _ in range(n_probes):
        row, col = cells[rng.integers(0, len(cells))]
        lat, lon = env.grid.cell_center(row, col)
        t = float(rng.uniform(0.0, env.wave.period_h))
        heading = float(rng.uniform(0.0, 360.0))
        probes.append((env.sample(lat, lon, t, heading), heading))

    def evaluator(coeffs) -> float:
        total = 0.0
        for met, heading in probes:
            total += speed_loss(coeffs, SpeedLossInput(met, heading, base_speed), CALIBRATED_MODE)
        return total / len(probes)

    return evaluator


# ---------------------------------------------------------------------------
# Ablations

ABLATIONS = ("no_teacher", "no_shield", "no_hf", "no_physics")


def ablation_variant(name: str):
    """(feature_mask, reward_weights_override, include_teacher, shield_at_eval)."""
    from .simulator import HF_FEATURE, N_FEATURES, PHYSICS_FEATURES

    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(ABLATIONS)}")
    mask = np.ones(N_FEATURES, dtype=np.float32)
    include_teacher = True
    shield_at_eval = True
    weights_override = None
    if name == "no_teacher":
        include_teacher = False
    elif name == "no_shield":
        shield_at_eval = False
    elif name == "no_hf":
        mask[HF_FEATURE] = 0.0
        weights_override = RewardWeights(gamma_hf=0.0)
    elif name == "no_physics":
        for i in PHYSICS_FEATURES:
            mask[i] = 0.0
    return mask, weights_override, include_teacher, shield_at_eval
