"""Run configuration: defaults, strict validation, and object builders.

Configs are plain JSON trees merged over DEFAULT_CONFIG. Validation is
strict: any key that the defaults do not know is rejected by its dotted
path, so typos fail loudly instead of silently running the default. The
canonical hash of the merged config is stamped into every artifact
manifest.
"""

import copy
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataset import DatasetConfig
from .envfields import (
    CurrentFieldParams,
    Disc,
    GridSpec,
    LandGeometry,
    Rect,
    Route,
    WaveFieldParams,
    WindFieldParams,
    build_basin,
    default_land_geometry,
    DEFAULT_ROUTES,
)
from .errors import ConfigError
from .learner import TrainConfig
from .physics import GROUND_TRUTH_COEFFS, vessel_preset
from .shield import ShieldConfig
from .simulator import EpisodeSetup, RewardWeights, SimConfig, StartNoise
from .synthais import SynthConfig


def _land_to_dicts(land: LandGeometry) -> dict:
    return {
        "rects": [asdict(r) for r in land.rects],
        "discs": [asdict(d) for d in land.discs],
        "carves": [asdict(c) for c in land.carves],
    }


def _routes_to_dicts(routes) -> list:
    return [
        {"name": r.name, "start": list(r.start), "goal": list(r.goal), "label": r.label}
        for r in routes
    ]


DEFAULT_CONFIG = {
    "master_seed": 7,
    "output_dir": "runs",
    "environment": {
        "grid": {"lat_min": 26.0, "lon_min": -93.0, "resolution": 0.1, "n_rows": 28, "n_cols": 46},
        "wave": {
            "hs_base": 1.0,
            "hs_storm": 4.5,
            "storm_lat": 28.1,
            "storm_lon": -89.55,
            "sigma_km": 80.0,
            "period_h": 48.0,
            "amplitude": 0.3,
            "tp_s": 8.0,
            "dir_from_deg": 45.0,
        },
        "current": {"u_max": 1.5, "jet_lat": 27.85, "jet_halfwidth_km": 40.0},
        "wind": {"u": -3.0, "v": -4.0},
        "land": _land_to_dicts(default_land_geometry()),
        "routes": _routes_to_dicts(DEFAULT_ROUTES),
    },
    "vessel": {"preset": "panamax", "fuel_type": "vlsfo"},
    "simulator": {
        "base_speed_kts": 12.0,
        "dt_h": 1.0,
        "arrival_radius_deg": 0.15,
        "max_steps": 120,
        "min_speed_kts": 0.5,
        "rewards": {
            "alpha": 1.0,
            "beta": 0.3,
            "gamma_hf": 0.5,
            "progress_coeff": 0.5,
            "arrival_bonus": 50.0,
            "timeout_penalty": -20.0,
        },
        "start_noise": {
            "position_deg": 0.05,
            "heading_deg": 15.0,
            "speed_kts": 1.0,
            "window_h": 48,
        },
    },
    "shield": {"enabled": True, "hf_threshold": 0.6, "check_escape": True},
    "ais": {
        "n_tracks": 500,
        "base_mean_kts": 12.0,
        "base_half_range_kts": 2.0,
        "heading_noise_deg": 10.0,
        "sog_noise_kts": 0.5,
        "max_steps": 16,
        "min_separation_deg": 1.0,
        "base_mode": "nominal",
    },
    "dataset": {
        "teacher_presets": ["time_only", "balanced", "safety_only"],
        "departures": [0.0, 16.0, 32.0],
        "behavioral_per_route": 30,
        "teacher_weight": 5.0,
        "behavioral_weight": 1.0,
        "shield_behavioral": False,
        "heading_noise_deg": 8.0,
        "bbox_pad_deg": 0.5,
        "plan_horizon_h": 120,
    },
    "learner": {
        "algo": "iql",
        "lr": 3e-4,
        "batch_size": 256,
        "epochs": 300,
        "gamma": 0.99,
        "expectile": 0.8,
        "awr_beta": 5.0,
        "awr_clip": 100.0,
        "polyak": 0.005,
        "hidden": [256, 256],
        "q_guard": 1e6,
    },
    "evaluation": {"episodes_per_route": 20, "max_steps": None, "shield": True},
    "planner": {"horizon_h": 120, "lookahead_nm": 12.0},
    "forecast": {
        "sigmas": [0.0, 0.1, 0.25, 0.5, 0.75, 1.0],
        "n_realizations": 3,
        "episodes_per_route": 4,
        "presets": ["time_only", "hf_averse"],
        "reactive": ["great_circle"],
    },
    "stats": {"n_boot": 5000, "alpha": 0.05, "mc_samples": 1000, "mc_rel_range": 0.5},
    "ablation": {"epochs": 100, "max_steps": 300},
    "repro": {
        "epochs": 2,
        "behavioral_per_route": 3,
        "episodes_per_route": 2,
        "n_tracks": 30,
        "sigmas": [0.0, 0.5],
        "n_realizations": 1,
        "forecast_presets": ["time_only"],
        "ablation_variants": ["full", "no_hf"],
        "ablation_epochs": 2,
    },
}

_ITEM_SCHEMAS = {
    "environment.routes": {"name", "start", "goal", "label"},
    "environment.land.rects": {"lat_min", "lat_max", "lon_min", "lon_max"},
    "environment.land.carves": {"lat_min", "lat_max", "lon_min", "lon_max"},
    "environment.land.discs": {"lat", "lon", "radius_deg"},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _validate(user, defaults, path: str) -> None:
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"config key '{path or '<root>'}' must be an object")
        for key, val in user.items():
            dotted = f"{path}.{key}" if path else key
            if key not in defaults:
                raise ConfigError(f"unknown config key '{dotted}'")
            _validate(val, defaults[key], dotted)
    elif path in _ITEM_SCHEMAS:
        if not isinstance(user, list):
            raise ConfigError(f"config key '{path}' must be a list")
        allowed = _ITEM_SCHEMAS[path]
        for i, item in enumerate(user):
            if not isinstance(item, dict):
                raise ConfigError(f"config key '{path}[{i}]' must be an object")
            for key in item:
                if key not in allowed:
                    raise ConfigError(f"unknown config key '{path}[{i}].{key}'")
    elif isinstance(defaults, list):
        if not isinstance(user, list):
            raise ConfigError(f"config key '{path}' must be a list")


def _merge(user, defaults):
    if isinstance(defaults, dict) and isinstance(user, dict):
        out = {}
        for key, dval in defaults.items():
            out[key] = _merge(user[key], dval) if key in user else copy.deepcopy(dval)
        return out
    return copy.deepcopy(user)


def merge_config(user: dict) -> dict:
    _validate(user, DEFAULT_CONFIG, "")
    return _merge(user, DEFAULT_CONFIG)


def load_config(path: str | Path | None) -> dict:
    """Defaults merged with an optional JSON config file."""
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return merge_config(user)


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Builders


def routes_from_config(cfg: dict) -> list[Route]:
    routes = []
    for r in cfg["environment"]["routes"]:
        routes.append(
            Route(r["name"], tuple(r["start"]), tuple(r["goal"]), r.get("label", ""))
        )
    if not routes:
        raise ConfigError("config defines no routes")
    return routes


def land_from_config(cfg: dict) -> LandGeometry:
    land = cfg["environment"]["land"]
    return LandGeometry(
        rects=tuple(Rect(**r) for r in land["rects"]),
        discs=tuple(Disc(**d) for d in land["discs"]),
        carves=tuple(Rect(**c) for c in land["carves"]),
    )


def build_environment(cfg: dict):
    env_cfg = cfg["environment"]
    return build_basin(
        grid=GridSpec(**env_cfg["grid"]),
        wave=WaveFieldParams(**env_cfg["wave"]),
        current=CurrentFieldParams(**env_cfg["current"]),
        wind=WindFieldParams(**env_cfg["wind"]),
        land=land_from_config(cfg),
        routes=tuple(routes_from_config(cfg)),
    )


def sim_from_config(cfg: dict) -> SimConfig:
    s = cfg["simulator"]
    return SimConfig(
        base_speed_kts=s["base_speed_kts"],
        dt_h=s["dt_h"],
        arrival_radius_deg=s["arrival_radius_deg"],
        max_steps=s["max_steps"],
        min_speed_kts=s["min_speed_kts"],
    )


def rewards_from_config(cfg: dict) -> RewardWeights:
    return RewardWeights(**cfg["simulator"]["rewards"])


def noise_from_config(cfg: dict) -> StartNoise:
    return StartNoise(**cfg["simulator"]["start_noise"])


def build_setup(cfg: dict, env=None, feature_mask=None, rewards=None) -> EpisodeSetup:
    return EpisodeSetup(
        env=env if env is not None else build_environment(cfg),
        sim=sim_from_config(cfg),
        weights=rewards if rewards is not None else rewards_from_config(cfg),
        coeffs=GROUND_TRUTH_COEFFS,
        vessel_fuel=vessel_preset(cfg["vessel"]["preset"], cfg["vessel"]["fuel_type"]),
        feature_mask=None if feature_mask is None else np.asarray(feature_mask, dtype=np.float32),
    )


def shield_config_from(cfg: dict) -> ShieldConfig | None:
    s = cfg["shield"]
    if not s["enabled"]:
        return None
    return ShieldConfig(hf_threshold=s["hf_threshold"], check_escape=s["check_escape"])


def dataset_config_from(cfg: dict) -> DatasetConfig:
    d = cfg["dataset"]
    return DatasetConfig(
        teacher_presets=tuple(d["teacher_presets"]),
        departures=tuple(float(x) for x in d["departures"]),
        behavioral_per_route=d["behavioral_per_route"],
        teacher_weight=d["teacher_weight"],
        behavioral_weight=d["behavioral_weight"],
        shield_behavioral=d["shield_behavioral"],
        heading_noise_deg=d["heading_noise_deg"],
        bbox_pad_deg=d["bbox_pad_deg"],
        plan_horizon_h=d["plan_horizon_h"],
    )


def synth_config_from(cfg: dict) -> SynthConfig:
    a = cfg["ais"]
    return SynthConfig(
        n_tracks=a["n_tracks"],
        base_mean_kts=a["base_mean_kts"],
        base_half_range_kts=a["base_half_range_kts"],
        heading_noise_deg=a["heading_noise_deg"],
        sog_noise_kts=a["sog_noise_kts"],
        max_steps=a["max_steps"],
        min_separation_deg=a["min_separation_deg"],
    )


def train_config_from(cfg: dict, algo: str | None = None, epochs: int | None = None) -> TrainConfig:
    l = cfg["learner"]
    return TrainConfig(
        algo=algo or l["algo"],
        lr=l["lr"],
        batch_size=l["batch_size"],
        epochs=epochs if epochs is not None else l["epochs"],
        gamma=l["gamma"],
        expectile=l["expectile"],
        awr_beta=l["awr_beta"],
        awr_clip=l["awr_clip"],
        polyak=l["polyak"],
        hidden=tuple(l["hidden"]),
        q_guard=l["q_guard"],
    )
