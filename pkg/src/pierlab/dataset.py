"""Offline transition datasets: demonstration collection, weighting, storage.

Two sources feed the replay corpus. Teacher episodes follow planner output
(one A* plan per route, objective preset, and departure slot, replayed
through the simulator with a pure-pursuit tracker) and get a high sampling
weight. Behavioral episodes are cheap noisy goal-runners with randomized
throttle and get unit weight. Rows are stored teacher block first as flat
little-endian float32 records next to a JSON manifest carrying counts,
provenance, and a content hash.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .envfields import EnvironmentFields, Route
from .errors import DatasetBuildError
from .planners import (
    TEACHER_PRESETS,
    astar_teacher,
    make_noisy_bearing_policy,
    make_plan_follower,
    objective_preset,
)
from .simulator import N_FEATURES, EpisodeSetup, Transition, run_episode

MANIFEST_FORMAT = "pierlab-rollouts-v1"
ROW_WIDTH = N_FEATURES + 1 + 1 + N_FEATURES + 1 + 1  # s, a, r, s', done, weight


@dataclass(frozen=True)
class DatasetConfig:
    teacher_presets: tuple = TEACHER_PRESETS
    departures: tuple = (0.0, 16.0, 32.0)
    behavioral_per_route: int = 30
    teacher_weight: float = 5.0
    behavioral_weight: float = 1.0
    shield_behavioral: bool = False
    heading_noise_deg: float = 8.0
    bbox_pad_deg: float = 0.5
    plan_horizon_h: int = 120


@dataclass
class RolloutDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    weights: np.ndarray
    teacher_rows: int
    behavioral_rows: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def from_transitions(cls, teacher: list, behavioral: list, meta: dict | None = None):
        rows = list(teacher) + list(behavioral)
        if not rows:
            raise DatasetBuildError("no transitions collected")
        return cls(
            states=np.stack([t.state for t in rows]).astype(np.float32),
            actions=np.array([t.action for t in rows], dtype=np.int64),
            rewards=np.array([t.reward for t in rows], dtype=np.float32),
            next_states=np.stack([t.next_state for t in rows]).astype(np.float32),
            dones=np.array([t.done for t in rows], dtype=np.float32),
            weights=np.array([t.weight for t in rows], dtype=np.float32),
            teacher_rows=len(teacher),
            behavioral_rows=len(behavioral),
            meta=meta or {},
        )

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> dict:
        p = self.weights / self.weights.sum()
        idx = rng.choice(len(self), size=batch_size, p=p)
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "dones": self.dones[idx],
            "index": idx,
        }

    def teacher_slice(self) -> slice:
        return slice(0, self.teacher_rows)

    def to_rows(self) -> np.ndarray:
        n = len(self)
        rows = np.empty((n, ROW_WIDTH), dtype="<f4")
        rows[:, :N_FEATURES] = self.states
        rows[:, N_FEATURES] = self.actions
        rows[:, N_FEATURES + 1] = self.rewards
        rows[:, N_FEATURES + 2 : 2 * N_FEATURES + 2] = self.next_states
        rows[:, 2 * N_FEATURES + 2] = self.dones
        rows[:, 2 * N_FEATURES + 3] = self.weights
        return rows

    @classmethod
    def from_rows(cls, rows: np.ndarray, teacher_rows: int, meta: dict | None = None):
        if rows.ndim != 2 or rows.shape[1] != ROW_WIDTH:
            raise DatasetBuildError(f"expected rows of width {ROW_WIDTH}, got shape {rows.shape}")
        return cls(
            states=rows[:, :N_FEATURES].astype(np.float32),
            actions=rows[:, N_FEATURES].astype(np.int64),
            rewards=rows[:, N_FEATURES + 1].astype(np.float32),
            next_states=rows[:, N_FEATURES + 2 : 2 * N_FEATURES + 2].astype(np.float32),
            dones=rows[:, 2 * N_FEATURES + 2].astype(np.float32),
            weights=rows[:, 2 * N_FEATURES + 3].astype(np.float32),
            teacher_rows=teacher_rows,
            behavioral_rows=len(rows) - teacher_rows,
            meta=meta or {},
        )


def collect_teacher(
    setup: EpisodeSetup,
    routes: list[Route],
    cfg: DatasetConfig,
    shield=None,
) -> tuple[list[Transition], list]:
    """Replay one A* plan per (route, preset, departure) through the sim."""
    transitions: list[Transition] = []
    episodes = []
    for route in routes:
        for preset in cfg.teacher_presets:
            weights = objective_preset(preset)
            for dep in cfg.departures:
                plan = astar_teacher(
                    setup.env,
                    route,
                    weights,
                    departure_t=dep,
                    base_speed_kts=setup.sim.base_speed_kts,
                    coeffs=setup.coeffs,
                    horizon_h=cfg.plan_horizon_h,
                    preset=preset,
                )
                rec = run_episode(
                    setup,
                    make_plan_follower(plan),
                    route,
                    rng=None,
                    departure_t=dep,
                    shield=shield,
                    provenance="teacher",
                    keep_trajectory=False,
                )
                transitions.extend(
                    replace(t, weight=cfg.teacher_weight, provenance="teacher")
                    for t in rec.transitions
                )
                episodes.append(rec)
    return transitions, episodes


def collect_behavioral(
    setup: EpisodeSetup,
    routes: list[Route],
    cfg: DatasetConfig,
    rng: np.random.Generator,
    shield=None,
) -> tuple[list[Transition], list]:
    """Noisy goal-chasing rollouts with randomized starts and throttle."""
    transitions: list[Transition] = []
    episodes = []
    for route in routes:
        for _ in range(cfg.behavioral_per_route):
            policy = make_noisy_bearing_policy(rng, cfg.heading_noise_deg)
            rec = run_episode(
                setup,
                policy,
                route,
                rng=rng,
                shield=shield,
                provenance="behavioral",
                keep_trajectory=False,
            )
            transitions.extend(
                replace(t, weight=cfg.behavioral_weight) for t in rec.transitions
            )
            episodes.append(rec)
    return transitions, episodes


def padded_route_bbox(routes: list[Route], pad_deg: float, grid) -> tuple[float, float, float, float]:
    lats = [v for r in routes for v in (r.start[0], r.goal[0])]
    lons = [v for r in routes for v in (r.start[1], r.goal[1])]
    return (
        max(grid.lat_min, min(lats) - pad_deg),
        min(grid.lat_max, max(lats) + pad_deg),
        max(grid.lon_min, min(lons) - pad_deg),
        min(grid.lon_max, max(lons) + pad_deg),
    )


def coverage_fraction(
    states: np.ndarray, env: EnvironmentFields, routes: list[Route], pad_deg: float = 0.5
) -> float:
    """Fraction of water cells in the padded route bounding box that the
    dataset's states visit. Positions are recovered from the normalized
    latitude/longitude features."""
    lat_lo, lat_hi, lon_lo, lon_hi = padded_route_bbox(routes, pad_deg, env.grid)
    box_water = set()
    for row, col in env.water_cells():
        lat, lon = env.grid.cell_center(row, col)
        if lat_lo <= lat <= lat_hi and lon_lo <= lon <= lon_hi:
            box_water.add((row, col))
    if not box_water:
        return 0.0
    visited = set()
    for s in states:
        lat = float(s[0]) * 30.0
        lon = float(s[1]) * -90.0
        if env.in_domain(lat, lon):
            visited.add(env.grid.cell_of(lat, lon))
    return len(visited & box_water) / len(box_water)


def build_dataset(
    setup: EpisodeSetup,
    routes: list[Route],
    cfg: DatasetConfig,
    rng: np.random.Generator,
    shield=None,
    include_teacher: bool = True,
) -> RolloutDataset:
    teacher_tr: list[Transition] = []
    teacher_eps: list = []
    if include_teacher:
        teacher_tr, teacher_eps = collect_teacher(setup, routes, cfg, shield=shield)
    behav_shield = shield if cfg.shield_behavioral else None
    behav_tr, behav_eps = collect_behavioral(setup, routes, cfg, rng, shield=behav_shield)
    states = (
        np.stack([t.state for t in teacher_tr + behav_tr])
        if teacher_tr or behav_tr
        else np.zeros((0, N_FEATURES), dtype=np.float32)
    )
    meta = {
        "routes": [r.name for r in routes],
        "teacher_episodes": len(teacher_eps),
        "teacher_arrivals": sum(e.arrived for e in teacher_eps),
        "behavioral_episodes": len(behav_eps),
        "behavioral_arrivals": sum(e.arrived for e in behav_eps),
        "teacher_weight": cfg.teacher_weight,
        "behavioral_weight": cfg.behavioral_weight,
        "coverage": coverage_fraction(states, setup.env, routes, cfg.bbox_pad_deg),
    }
    return RolloutDataset.from_transitions(teacher_tr, behav_tr, meta)


def save_dataset(dataset: RolloutDataset, manifest_path: str | Path) -> Path:
    """Write <stem>.bin rows plus a JSON manifest; returns the manifest path."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path = manifest_path.with_suffix(".bin")
    rows = dataset.to_rows()
    payload = rows.tobytes(order="C")
    bin_path.write_bytes(payload)
    manifest = {
        "format": MANIFEST_FORMAT,
        "binary": bin_path.name,
        "rows": len(dataset),
        "row_width": ROW_WIDTH,
        "feature_dim": N_FEATURES,
        "dtype": "<f4",
        "teacher_rows": dataset.teacher_rows,
        "behavioral_rows": dataset.behavioral_rows,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": dataset.meta,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_dataset(manifest_path: str | Path) -> RolloutDataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetBuildError(f"cannot read dataset manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetBuildError(f"unsupported dataset format {manifest.get('format')!r}")
    bin_path = manifest_path.parent / manifest["binary"]
    payload = bin_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["sha256"]:
        raise DatasetBuildError(f"dataset binary {bin_path} does not match its manifest hash")
    rows = np.frombuffer(payload, dtype="<f4").reshape(manifest["rows"], manifest["row_width"])
    return RolloutDataset.from_rows(rows, manifest["teacher_rows"], manifest.get("meta", {}))
