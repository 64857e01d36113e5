"""Command-line pipeline driver.

Every subcommand reads an optional JSON config (strictly validated, merged
over defaults), resolves the master seed (--seed flag, then PIER_LAB_SEED,
then the config), and writes its artifacts into ``<out>/<command>/`` next
to exactly one ``manifest.json`` recording the config hash, tool version,
timestamp, and sha256 digests of every input and output file. Exit codes:
0 on success, 1 for usage errors and failed repro comparisons, 2 for any
package error (bad config, degenerate fit, diverged training, ...).
"""

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace as dc_replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    build_environment,
    build_setup,
    config_hash,
    dataset_config_from,
    default_config,
    load_config,
    noise_from_config,
    routes_from_config,
    shield_config_from,
    synth_config_from,
    train_config_from,
)
from .dataset import build_dataset, load_dataset, save_dataset
from .errors import ConfigError, PierlabError, TrainingDivergedError
from .evalstats import (
    ABLATIONS,
    MetricsTable,
    ablation_variant,
    baseline_factories,
    bootstrap_ci,
    forecast_study,
    levene_test,
    mc_coefficient_perturbation,
    probe_speed_evaluator,
    run_eval,
    setup_for_bundle,
    tail_frequency,
    variance_ratio,
)
from .learner import bundle_digest, load_checkpoint, save_checkpoint, save_curves, train
from .physics import CALIBRATED_COEFFS, FUEL_CO2_FACTORS, PhysicsCoefficients, VESSEL_PRESETS, vessel_preset
from .planners import OBJECTIVE_PRESETS, astar_teacher, objective_preset
from .seeding import substream
from .shield import Shield
from .synthais import completion_fraction, fit_speed_loss, generate_tracks, load_tracks, save_tracks, tracks_digest

SEED_ENV_VAR = "PIER_LAB_SEED"
MANIFEST_FORMAT = "pierlab-manifest-v1"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors; 2 is reserved for
    package errors like a bad config key."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_seed(args, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env_val = os.environ.get(SEED_ENV_VAR)
    if env_val is not None:
        try:
            return int(env_val)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={env_val!r} is not an integer") from None
    return int(cfg["master_seed"])


def _run_root(args, cfg: dict) -> Path:
    return Path(args.out) if args.out else Path(cfg["output_dir"])


def _cmd_dir(args, cfg: dict, command: str, subdir: str | None = None) -> Path:
    out = _run_root(args, cfg) / command
    if subdir:
        out = out / subdir
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists() and not args.force:
        raise ConfigError(f"{manifest} already exists; pass --force to overwrite")
    return out


def _check_absent(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int, inputs=(), outputs=()) -> Path:
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "config_hash": config_hash(cfg),
        "master_seed": seed,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {str(Path(p)): _sha256_file(Path(p)) for p in inputs},
        "outputs": {Path(p).name: _sha256_file(Path(p)) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _artifact(kind: str, cfg: dict, **content) -> dict:
    return {"format": f"pierlab-{kind}-v1", "config_hash": config_hash(cfg), **content}


def _jsonsafe(obj):
    """Replace non-finite floats with null so artifacts stay strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _jsonsafe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonsafe(v) for v in obj]
    return obj


def _write_json(path: Path, obj, force: bool) -> None:
    _check_absent(path, force)
    path.write_text(json.dumps(_jsonsafe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_env(args, cfg, seed):
    env = build_environment(cfg)
    routes = routes_from_config(cfg)
    from . import geo

    summary = _artifact(
        "environment",
        cfg,
        grid={
            "lat_min": env.grid.lat_min,
            "lat_max": env.grid.lat_max,
            "lon_min": env.grid.lon_min,
            "lon_max": env.grid.lon_max,
            "n_rows": env.grid.n_rows,
            "n_cols": env.grid.n_cols,
        },
        land_fraction=env.land_fraction(),
        n_water_cells=int(len(env.water_cells())),
        hf_p95=env.hf_p95,
        routes=[
            {
                "name": r.name,
                "start": list(r.start),
                "goal": list(r.goal),
                "distance_nm": geo.distance_nm(*r.start, *r.goal),
            }
            for r in routes
        ],
    )
    out_dir = _cmd_dir(args, cfg, "gen-env")
    out = out_dir / "environment.json"
    _write_json(out, summary, args.force)
    _write_manifest(out_dir, "gen-env", cfg, seed, outputs=[out])
    print(f"wrote {out}")
    return 0


def cmd_export_fields(args, cfg, seed):
    if args.every_h <= 0:
        raise ConfigError(f"--every-h must be positive, got {args.every_h}")
    env = build_environment(cfg)
    out_dir = _cmd_dir(args, cfg, "export-fields")
    npz_path = out_dir / "fields.npz"
    _check_absent(npz_path, args.force)
    times = np.arange(0.0, env.wave.period_h, args.every_h)
    hs = np.stack([env.hs_grid(t) for t in times])
    lat_centers = env.grid.lat_centers()
    current_u = np.array([env.sample_current(lat, env.grid.lon_min + 1e-9, 0.0)[0] for lat in lat_centers])
    np.savez(
        npz_path,
        times_h=times,
        hs=hs,
        land_mask=env.land_mask,
        lat_centers=lat_centers,
        lon_centers=env.grid.lon_centers(),
        current_u_profile=current_u,
        wind_uv=np.array([env.wind.u, env.wind.v]),
    )
    summary_path = out_dir / "fields.json"
    _write_json(
        summary_path,
        _artifact("fields-summary", cfg, npz=npz_path.name, snapshots=len(times), every_h=args.every_h),
        args.force,
    )
    _write_manifest(out_dir, "export-fields", cfg, seed, outputs=[npz_path, summary_path])
    print(f"wrote {npz_path} ({len(times)} wave snapshots)")
    return 0


def cmd_gen_ais(args, cfg, seed):
    env = build_environment(cfg)
    synth_cfg = synth_config_from(cfg)
    tracks = generate_tracks(env, synth_cfg, substream(seed, "ais"))
    out_dir = _cmd_dir(args, cfg, "gen-ais")
    npz_path = out_dir / "ais_tracks.npz"
    _check_absent(npz_path, args.force)
    save_tracks(tracks, npz_path)
    summary = _artifact(
        "ais-summary",
        cfg,
        npz=npz_path.name,
        n_tracks=len(tracks),
        n_pings=int(sum(len(t) for t in tracks)),
        completion_fraction=completion_fraction(tracks),
        tracks_sha256=tracks_digest(tracks),
    )
    summary_path = out_dir / "ais_tracks.json"
    _write_json(summary_path, summary, args.force)
    _write_manifest(out_dir, "gen-ais", cfg, seed, outputs=[npz_path, summary_path])
    print(
        f"wrote {npz_path}: {summary['n_tracks']} tracks, {summary['n_pings']} pings, "
        f"completion {summary['completion_fraction']:.3f}"
    )
    return 0


def cmd_fit_physics(args, cfg, seed):
    env = build_environment(cfg)
    out_dir = _cmd_dir(args, cfg, "fit-physics")
    tracks_path = Path(args.tracks) if args.tracks else _run_root(args, cfg) / "gen-ais" / "ais_tracks.npz"
    if not tracks_path.exists():
        raise ConfigError(f"no track file at {tracks_path}; run gen-ais first or pass --tracks")
    tracks = load_tracks(tracks_path)
    base_mode = args.base_mode or cfg["ais"]["base_mode"]
    fit = fit_speed_loss(env, tracks, base_mode=base_mode, nominal_base_kts=cfg["ais"]["base_mean_kts"])
    payload = _artifact("physics-fit", cfg, tracks=tracks_path.name, **fit.as_dict())
    out = out_dir / "physics_fit.json"
    _write_json(out, payload, args.force)
    _write_manifest(out_dir, "fit-physics", cfg, seed, inputs=[tracks_path], outputs=[out])
    c, r = fit.coefficients, fit.recovered
    print(
        f"fit ({base_mode} base): a={c.a:.4f} b={c.b:.4f} c={c.c:.4f} d={c.d:.4f} e={c.e:.4f} "
        f"sigma={fit.sigma_resid:.3f} R2={fit.r_squared:.3f} n={fit.n_rows}"
    )
    print(f"recovered drag convention: a={r.a:.4f} b={r.b:.4f} c={r.c:.4f} d={r.d:.4f}")
    return 0


def _plan_records(env, routes, presets, departures, horizon, base_speed):
    plans = []
    for route in routes:
        for preset in presets:
            for dep in departures:
                plan = astar_teacher(
                    env,
                    route,
                    objective_preset(preset),
                    departure_t=dep,
                    base_speed_kts=base_speed,
                    horizon_h=horizon,
                    preset=preset,
                )
                plans.append(
                    {
                        "route": route.name,
                        "preset": preset,
                        "departure_t": dep,
                        "n_waypoints": len(plan.waypoints),
                        "duration_h": plan.duration_h,
                        "total_cost": plan.total_cost,
                        "expanded": plan.expanded,
                        "cells": [list(map(int, c)) for c in plan.cells],
                        "times": plan.times,
                    }
                )
    return plans


def cmd_teach(args, cfg, seed):
    env = build_environment(cfg)
    routes = routes_from_config(cfg)
    if args.route:
        routes = [r for r in routes if r.name == args.route]
        if not routes:
            raise ConfigError(f"no route named {args.route!r} in the config")
    presets = [args.preset] if args.preset else list(cfg["dataset"]["teacher_presets"])
    departures = [float(d) for d in cfg["dataset"]["departures"]]
    plans = _plan_records(
        env, routes, presets, departures, cfg["planner"]["horizon_h"], cfg["simulator"]["base_speed_kts"]
    )
    out_dir = _cmd_dir(args, cfg, "teach")
    out = out_dir / "plans.json"
    _write_json(out, _artifact("plans", cfg, plans=plans), args.force)
    _write_manifest(out_dir, "teach", cfg, seed, outputs=[out])
    print(f"wrote {out}: {len(plans)} plans")
    return 0


def _build_rollout_dataset(cfg, seed, include_teacher=True):
    setup = build_setup(cfg)
    routes = routes_from_config(cfg)
    ds_cfg = dataset_config_from(cfg)
    shield = None
    if ds_cfg.shield_behavioral:
        shield_cfg = shield_config_from(cfg)
        if shield_cfg is not None:
            shield = Shield(setup.env, setup.sim, setup.coeffs, shield_cfg)
    return build_dataset(
        setup,
        routes,
        ds_cfg,
        substream(seed, "dataset"),
        shield=shield,
        include_teacher=include_teacher,
    )


def cmd_rollout(args, cfg, seed):
    dataset = _build_rollout_dataset(cfg, seed, include_teacher=not args.no_teacher)
    dataset.meta.update(config_hash=config_hash(cfg), master_seed=seed, version=__version__)
    out_dir = _cmd_dir(args, cfg, "rollout")
    manifest_path = out_dir / "dataset.json"
    _check_absent(manifest_path, args.force)
    _check_absent(manifest_path.with_suffix(".bin"), args.force)
    save_dataset(dataset, manifest_path)
    _write_manifest(
        out_dir, "rollout", cfg, seed, outputs=[manifest_path, manifest_path.with_suffix(".bin")]
    )
    print(
        f"wrote {manifest_path}: {len(dataset)} rows "
        f"({dataset.teacher_rows} teacher, {dataset.behavioral_rows} behavioral), "
        f"coverage {dataset.meta['coverage']:.3f}"
    )
    return 0


def cmd_dataset_info(args, cfg, seed):
    path = Path(args.dataset) if args.dataset else _run_root(args, cfg) / "rollout" / "dataset.json"
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}; run rollout first or pass --dataset")
    dataset = load_dataset(path)
    info = {
        "rows": len(dataset),
        "teacher_rows": dataset.teacher_rows,
        "behavioral_rows": dataset.behavioral_rows,
        "weights": sorted(float(w) for w in np.unique(dataset.weights)),
        "feature_dim": int(dataset.states.shape[1]),
        "action_min": int(dataset.actions.min()),
        "action_max": int(dataset.actions.max()),
        "done_rows": int(dataset.dones.sum()),
        "meta": dataset.meta,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def cmd_train(args, cfg, seed):
    path = Path(args.dataset) if args.dataset else _run_root(args, cfg) / "rollout" / "dataset.json"
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}; run rollout first or pass --dataset")
    dataset = load_dataset(path)
    tc = train_config_from(cfg, algo=args.algo, epochs=args.epochs)
    out_dir = _cmd_dir(args, cfg, "train", tc.algo)
    ckpt_path = out_dir / f"checkpoint_{tc.algo}.ckpt"
    _check_absent(ckpt_path, args.force)
    rng = substream(seed, "train", tc.algo)
    try:
        bundle, curves = train(dataset, tc, rng)
    except TrainingDivergedError as exc:
        diverged = out_dir / f"diverged_{tc.algo}.json"
        _write_json(
            diverged,
            _artifact("diverged", cfg, algo=tc.algo, error=str(exc), diagnostics=exc.diagnostics),
            True,
        )
        _write_manifest(out_dir, "train", cfg, seed, inputs=[path], outputs=[diverged])
        raise
    save_checkpoint(bundle, ckpt_path)
    curves_path = save_curves(curves, out_dir / f"curves_{tc.algo}.csv")
    summary_path = out_dir / f"training_{tc.algo}.json"
    _write_json(
        summary_path,
        _artifact(
            "training",
            cfg,
            algo=tc.algo,
            dataset=path.name,
            epochs=tc.epochs,
            rows=len(dataset),
            checkpoint=ckpt_path.name,
            digest=bundle_digest(bundle),
            final=curves[-1] if curves else {},
        ),
        args.force,
    )
    _write_manifest(
        out_dir, "train", cfg, seed, inputs=[path], outputs=[ckpt_path, curves_path, summary_path]
    )
    print(f"wrote {ckpt_path} (digest {bundle_digest(bundle)[:12]}...)")
    return 0


def _load_bundles(paths: list[str]) -> dict:
    bundles = {}
    for p in paths:
        if not Path(p).exists():
            raise ConfigError(f"no checkpoint at {p}")
        bundle = load_checkpoint(p)
        name = bundle.algo
        if name in bundles:
            name = f"{bundle.algo}_{Path(p).stem}"
        bundles[name] = bundle
    return bundles


def cmd_evaluate(args, cfg, seed):
    setup = build_setup(cfg)
    routes = routes_from_config(cfg)
    noise = noise_from_config(cfg)
    episodes = args.episodes_per_route or cfg["evaluation"]["episodes_per_route"]
    shield_cfg = None if args.no_shield or not cfg["evaluation"]["shield"] else shield_config_from(cfg)
    max_steps = cfg["evaluation"]["max_steps"]
    table = MetricsTable()
    if not args.skip_baselines:
        table.extend(
            run_eval(
                setup,
                baseline_factories(setup, horizon_h=cfg["planner"]["horizon_h"]),
                routes,
                seed,
                episodes_per_route=episodes,
                shield_cfg=shield_cfg,
                noise=noise,
                max_steps=max_steps,
            )
        )
    for name, bundle in _load_bundles(args.checkpoint or []).items():
        table.extend(
            run_eval(
                setup_for_bundle(setup, bundle),
                {name: bundle.as_policy},
                routes,
                seed,
                episodes_per_route=episodes,
                shield_cfg=shield_cfg,
                noise=noise,
                max_steps=max_steps,
            )
        )
    out_dir = _cmd_dir(args, cfg, "evaluate")
    csv_path = out_dir / "metrics.csv"
    _check_absent(csv_path, args.force)
    table.to_csv(csv_path)
    summary_path = out_dir / "summary.json"
    _write_json(
        summary_path,
        _artifact("eval-summary", cfg, metrics=csv_path.name, summary=table.summarize()),
        args.force,
    )
    _write_manifest(
        out_dir,
        "evaluate",
        cfg,
        seed,
        inputs=list(args.checkpoint or []),
        outputs=[csv_path, summary_path],
    )
    print(f"wrote {csv_path}: {len(table)} episodes")
    return 0


def _run_ablation(variant, cfg, seed, setup_full, routes):
    ab = cfg["ablation"]
    if variant == "full":
        mask, rewards_override, include_teacher, shield_at_eval = None, None, True, True
    else:
        mask, rewards_override, include_teacher, shield_at_eval = ablation_variant(variant)
    setup = build_setup(cfg, env=setup_full.env, feature_mask=mask, rewards=rewards_override)
    dataset = build_dataset(
        setup,
        routes,
        dataset_config_from(cfg),
        substream(seed, "ablate", variant, "dataset"),
        include_teacher=include_teacher,
    )
    tc = train_config_from(cfg, epochs=ab["epochs"])
    bundle, _ = train(dataset, tc, substream(seed, "ablate", variant, "train"))
    bundle.feature_mask = mask
    eval_setup = dc_replace(setup, weights=setup_full.weights)
    shield_cfg = shield_config_from(cfg) if shield_at_eval else None
    table = run_eval(
        eval_setup,
        {variant: bundle.as_policy},
        routes,
        seed,
        episodes_per_route=cfg["evaluation"]["episodes_per_route"],
        shield_cfg=shield_cfg,
        noise=noise_from_config(cfg),
        max_steps=ab["max_steps"],
    )
    return variant, table


def _ablation_table(variants, cfg, seed, setup_full, routes, jobs=1) -> MetricsTable:
    results = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_ablation, v, cfg, seed, setup_full, routes) for v in variants]
            for fut in futures:
                variant, table = fut.result()
                results[variant] = table
    else:
        for v in variants:
            variant, table = _run_ablation(v, cfg, seed, setup_full, routes)
            results[variant] = table
    combined = MetricsTable()
    for v in variants:
        combined.extend(results[v])
    return combined


def cmd_ablate(args, cfg, seed):
    setup_full = build_setup(cfg)
    routes = routes_from_config(cfg)
    variants = args.variants or ["full", *ABLATIONS]
    combined = _ablation_table(variants, cfg, seed, setup_full, routes, jobs=args.jobs)
    out_dir = _cmd_dir(args, cfg, "ablate")
    csv_path = out_dir / "ablation_metrics.csv"
    _check_absent(csv_path, args.force)
    combined.to_csv(csv_path)
    summary_path = out_dir / "ablation_summary.json"
    _write_json(
        summary_path,
        _artifact("ablation-summary", cfg, variants=variants, summary=combined.summarize()),
        args.force,
    )
    _write_manifest(out_dir, "ablate", cfg, seed, outputs=[csv_path, summary_path])
    print(f"wrote {csv_path}: variants {', '.join(variants)}")
    return 0


def _forecast_table(cfg, seed, setup, routes, sigmas, presets, n_realizations, episodes, jobs=1):
    shield_cfg = shield_config_from(cfg) if cfg["evaluation"]["shield"] else None

    def one_sigma(sigma):
        return forecast_study(
            setup,
            routes,
            seed,
            sigmas=[sigma],
            presets=tuple(presets),
            reactive=tuple(cfg["forecast"]["reactive"]),
            n_realizations=n_realizations,
            episodes_per_route=episodes,
            shield_cfg=shield_cfg,
            horizon_h=cfg["planner"]["horizon_h"],
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            tables = list(pool.map(one_sigma, sigmas))
    else:
        tables = [one_sigma(s) for s in sigmas]
    table = MetricsTable()
    for part in tables:
        table.extend(part)
    return table


def cmd_forecast_study(args, cfg, seed):
    setup = build_setup(cfg)
    routes = routes_from_config(cfg)
    fc = cfg["forecast"]
    table = _forecast_table(
        cfg,
        seed,
        setup,
        routes,
        sigmas=fc["sigmas"],
        presets=fc["presets"],
        n_realizations=fc["n_realizations"],
        episodes=fc["episodes_per_route"],
        jobs=args.jobs,
    )
    out_dir = _cmd_dir(args, cfg, "forecast-study")
    csv_path = out_dir / "forecast_metrics.csv"
    _check_absent(csv_path, args.force)
    table.to_csv(csv_path)
    summary_path = out_dir / "forecast_summary.json"
    _write_json(
        summary_path,
        _artifact(
            "forecast-summary",
            cfg,
            metrics=csv_path.name,
            summary=table.summarize(by=("method", "sigma")),
        ),
        args.force,
    )
    _write_manifest(out_dir, "forecast-study", cfg, seed, outputs=[csv_path, summary_path])
    print(f"wrote {csv_path}: {len(table)} episodes over sigmas {fc['sigmas']}")
    return 0


def cmd_stats(args, cfg, seed):
    out_dir = _cmd_dir(args, cfg, "stats")
    st = cfg["stats"]
    if args.mc:
        env = build_environment(cfg)
        inputs = []
        if args.fit:
            fit_path = Path(args.fit)
            if not fit_path.exists():
                raise ConfigError(f"no fit file at {fit_path}")
            fit = json.loads(fit_path.read_text())
            coeffs = PhysicsCoefficients(**fit["coefficients"])
            inputs.append(fit_path)
        else:
            coeffs = CALIBRATED_COEFFS
        evaluator = probe_speed_evaluator(env, substream(seed, "stats", "probes"))
        mc = mc_coefficient_perturbation(
            coeffs,
            evaluator,
            substream(seed, "stats", "mc"),
            n_samples=st["mc_samples"],
            rel_range=st["mc_rel_range"],
        )
        out = out_dir / "mc.json"
        _write_json(out, _artifact("mc-study", cfg, mc=mc.summary()), args.force)
        _write_manifest(out_dir, "stats", cfg, seed, inputs=inputs, outputs=[out])
        print(f"wrote {out}: mc mean {mc.summary()['mean']:.4f} std {mc.summary()['std']:.4f}")
        return 0

    metrics_path = Path(args.metrics) if args.metrics else _run_root(args, cfg) / "evaluate" / "metrics.csv"
    if not metrics_path.exists():
        raise ConfigError(f"no metrics CSV at {metrics_path}; run evaluate first or pass --metrics")
    table = MetricsTable.from_csv(metrics_path)
    key, metric = args.group_by, args.metric
    names = sorted({r[key] for r in table.rows if r.get(key) is not None})
    groups = {n: table.filter(**{key: n}).values(metric) for n in names}
    if len(groups) < 2:
        raise ConfigError(f"need at least two groups of '{key}' in {metrics_path}")
    w, p = levene_test(list(groups.values()))
    rng = substream(seed, "stats", "bootstrap")
    per_group = {
        n: {
            "n": int(len(v)),
            "mean": float(np.mean(v)),
            "variance": float(np.var(v, ddof=1)),
            "tail_frequency": tail_frequency(v),
        }
        for n, v in groups.items()
    }
    ref = names[0]
    ratios = {}
    for n in names[1:]:
        a, b = groups[n], groups[ref]
        point = variance_ratio(a, b)
        if len(a) == len(b):
            lo, hi = bootstrap_ci((a, b), variance_ratio, rng, n_boot=st["n_boot"], alpha=st["alpha"])
        else:
            boots = np.empty(st["n_boot"])
            for i in range(st["n_boot"]):
                boots[i] = variance_ratio(
                    a[rng.integers(0, len(a), len(a))], b[rng.integers(0, len(b), len(b))]
                )
            lo, hi = (
                float(np.percentile(boots, 100 * st["alpha"] / 2)),
                float(np.percentile(boots, 100 * (1 - st["alpha"] / 2))),
            )
        ratios[f"{n}_vs_{ref}"] = {"ratio": point, "ci_low": lo, "ci_high": hi}
    result = _artifact(
        "stats",
        cfg,
        metrics=str(metrics_path.name),
        metric=metric,
        group_by=key,
        levene={"w": w, "p": p},
        groups=per_group,
        variance_ratios=ratios,
    )
    out = out_dir / "stats.json"
    _write_json(out, result, args.force)
    _write_manifest(out_dir, "stats", cfg, seed, inputs=[metrics_path], outputs=[out])
    print(f"wrote {out}: levene W={w:.3f} p={p:.4g}")
    return 0


def cmd_calibrate(args, cfg, seed):
    names = [args.vessel] if args.vessel else sorted(VESSEL_PRESETS)
    rows = {}
    for name in names:
        vessel = vessel_preset(name, cfg["vessel"]["fuel_type"])
        proxy_per_day = vessel.v_service_kts**3 * 24.0 / 1000.0
        fuel_day = proxy_per_day * vessel.k_fuel / 1000.0
        rows[name] = {
            "p_mcr_kw": vessel.p_mcr_kw,
            "v_service_kts": vessel.v_service_kts,
            "c_adm": vessel.c_adm,
            "k_fuel_kg_per_proxy": vessel.k_fuel,
            "fuel_t_per_day": fuel_day,
            "co2_t_per_day": fuel_day * vessel.co2_t_per_t_fuel,
        }
    payload = _artifact(
        "fuel-calibration", cfg, fuel_type=cfg["vessel"]["fuel_type"],
        co2_factors=FUEL_CO2_FACTORS, vessels=rows,
    )
    out_dir = _cmd_dir(args, cfg, "calibrate")
    out = out_dir / "fuel_calibration.json"
    _write_json(out, payload, args.force)
    _write_manifest(out_dir, "calibrate", cfg, seed, outputs=[out])
    for name, r in rows.items():
        print(
            f"{name:10s} c_adm={r['c_adm']:.4f} k={r['k_fuel_kg_per_proxy']:.1f} "
            f"fuel={r['fuel_t_per_day']:.1f} t/d co2={r['co2_t_per_day']:.1f} t/d"
        )
    return 0


def _repro_chain(run_dir: Path, cfg: dict, seed: int) -> dict:
    """One full scaled pipeline pass; returns content digests for comparison."""
    run_dir.mkdir(parents=True, exist_ok=True)
    rp = cfg["repro"]
    env = build_environment(cfg)
    setup = build_setup(cfg, env=env)
    routes = routes_from_config(cfg)
    outputs = []
    digests = {}

    tracks = generate_tracks(env, synth_config_from(cfg), substream(seed, "ais"))
    tracks_path = run_dir / "ais_tracks.npz"
    save_tracks(tracks, tracks_path)
    outputs.append(tracks_path)
    digests["ais_tracks"] = tracks_digest(tracks)

    fit = fit_speed_loss(
        env, tracks, base_mode=cfg["ais"]["base_mode"], nominal_base_kts=cfg["ais"]["base_mean_kts"]
    )
    fit_path = run_dir / "physics_fit.json"
    fit_path.write_text(json.dumps(fit.as_dict(), indent=2, sort_keys=True) + "\n")
    outputs.append(fit_path)
    digests["physics_fit"] = _sha256_file(fit_path)

    plans = _plan_records(
        env,
        routes,
        list(cfg["dataset"]["teacher_presets"]),
        [float(d) for d in cfg["dataset"]["departures"]],
        cfg["planner"]["horizon_h"],
        cfg["simulator"]["base_speed_kts"],
    )
    plans_path = run_dir / "plans.json"
    plans_path.write_text(json.dumps(plans, indent=2, sort_keys=True) + "\n")
    outputs.append(plans_path)
    digests["plans"] = _sha256_file(plans_path)

    dataset = build_dataset(setup, routes, dataset_config_from(cfg), substream(seed, "dataset"))
    manifest_path = save_dataset(dataset, run_dir / "dataset.json")
    outputs += [manifest_path, manifest_path.with_suffix(".bin")]
    digests["dataset"] = json.loads(manifest_path.read_text())["sha256"]

    tc = train_config_from(cfg)
    bundle, curves = train(dataset, tc, substream(seed, "train", tc.algo))
    ckpt_path = run_dir / f"checkpoint_{tc.algo}.ckpt"
    save_checkpoint(bundle, ckpt_path)
    curves_path = save_curves(curves, run_dir / f"curves_{tc.algo}.csv")
    outputs += [ckpt_path, curves_path]
    digests["checkpoint"] = bundle_digest(bundle)
    digests["curves"] = _sha256_file(curves_path)

    policies = {"learned": bundle.as_policy}
    policies["great_circle"] = baseline_factories(setup, horizon_h=cfg["planner"]["horizon_h"])["great_circle"]
    table = run_eval(
        setup,
        policies,
        routes,
        seed,
        episodes_per_route=cfg["evaluation"]["episodes_per_route"],
        shield_cfg=shield_config_from(cfg),
        noise=noise_from_config(cfg),
    )
    csv_path = run_dir / "metrics.csv"
    table.to_csv(csv_path)
    outputs.append(csv_path)
    digests["metrics"] = _sha256_file(csv_path)

    variants = list(rp["ablation_variants"])
    bad = [v for v in variants if v != "full" and v not in ABLATIONS]
    if bad:
        raise ConfigError(f"repro.ablation_variants contains unknown variants {bad}")
    ablation = _ablation_table(variants, cfg, seed, setup, routes)
    ablation_path = run_dir / "ablation_metrics.csv"
    ablation.to_csv(ablation_path)
    outputs.append(ablation_path)
    digests["ablation_metrics"] = _sha256_file(ablation_path)

    forecast = _forecast_table(
        cfg,
        seed,
        setup,
        routes,
        sigmas=rp["sigmas"],
        presets=rp["forecast_presets"],
        n_realizations=rp["n_realizations"],
        episodes=rp["episodes_per_route"],
    )
    forecast_path = run_dir / "forecast_metrics.csv"
    forecast.to_csv(forecast_path)
    outputs.append(forecast_path)
    digests["forecast_metrics"] = _sha256_file(forecast_path)

    _write_manifest(run_dir, "repro", cfg, seed, outputs=outputs)
    return digests


def cmd_repro(args, cfg, seed):
    rp = cfg["repro"]
    scaled = copy.deepcopy(cfg)
    scaled["learner"]["epochs"] = rp["epochs"]
    scaled["dataset"]["behavioral_per_route"] = rp["behavioral_per_route"]
    scaled["dataset"]["teacher_presets"] = scaled["dataset"]["teacher_presets"][:1]
    scaled["dataset"]["departures"] = scaled["dataset"]["departures"][:1]
    scaled["evaluation"]["episodes_per_route"] = rp["episodes_per_route"]
    scaled["ais"]["n_tracks"] = rp["n_tracks"]
    scaled["ablation"]["epochs"] = rp["ablation_epochs"]
    out_dir = _cmd_dir(args, cfg, "repro")
    first = _repro_chain(out_dir / "run_a", scaled, seed)
    second = _repro_chain(out_dir / "run_b", scaled, seed)
    ok = True
    for key in sorted(first):
        match = first[key] == second[key]
        ok &= match
        print(f"{key}: {'match' if match else 'MISMATCH'}")
    report_path = out_dir / "repro_report.json"
    _write_json(report_path, _artifact("repro-report", cfg, ok=ok, run_a=first, run_b=second), True)
    _write_manifest(out_dir, "repro", cfg, seed, outputs=[report_path])
    print("repro: PASS" if ok else "repro: FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="pierlab", description=__doc__)
    parser.add_argument("--print-default-config", action="store_true", help="print the default config as JSON and exit")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file merged over defaults")
    common.add_argument("--seed", type=int, help=f"master seed (overrides {SEED_ENV_VAR} and config)")
    common.add_argument("--out", help="run root directory (default: config output_dir); artifacts land in <out>/<command>/")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")

    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("gen-env", parents=[common], help="build and validate the basin").set_defaults(fn=cmd_gen_env)

    p = sub.add_parser("export-fields", parents=[common], help="export gridded field snapshots")
    p.add_argument("--every-h", type=float, default=6.0, help="hours between wave snapshots")
    p.set_defaults(fn=cmd_export_fields)

    sub.add_parser("gen-ais", parents=[common], help="generate synthetic vessel tracks").set_defaults(fn=cmd_gen_ais)

    p = sub.add_parser("fit-physics", parents=[common], help="fit speed-loss coefficients from tracks")
    p.add_argument("--tracks", help="track .npz (default: <out>/gen-ais/ais_tracks.npz)")
    p.add_argument("--base-mode", choices=["known", "nominal"], help="base-speed assumption for the fit")
    p.set_defaults(fn=cmd_fit_physics)

    p = sub.add_parser("teach", parents=[common], help="plan teacher routes with A*")
    p.add_argument("--route", help="plan a single named route")
    p.add_argument("--preset", choices=sorted(OBJECTIVE_PRESETS), help="plan a single objective preset")
    p.set_defaults(fn=cmd_teach)

    p = sub.add_parser("rollout", parents=[common], help="collect the offline dataset")
    p.add_argument("--no-teacher", action="store_true", help="behavioral rollouts only")
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("dataset-info", parents=[common], help="inspect a dataset manifest")
    p.add_argument("--dataset", help="dataset manifest path (default: <out>/rollout/dataset.json)")
    p.set_defaults(fn=cmd_dataset_info)

    p = sub.add_parser("train", parents=[common], help="train a policy on a dataset")
    p.add_argument("--dataset", help="dataset manifest path (default: <out>/rollout/dataset.json)")
    p.add_argument("--algo", choices=["iql", "bc", "dqn"], help="algorithm (default: config)")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate checkpoints and baselines")
    p.add_argument("--checkpoint", action="append", help="policy checkpoint (repeatable)")
    p.add_argument("--skip-baselines", action="store_true")
    p.add_argument("--episodes-per-route", type=int)
    p.add_argument("--no-shield", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation variants")
    p.add_argument("--variants", nargs="+", choices=["full", *ABLATIONS])
    p.add_argument("--jobs", type=int, default=1, help="parallel variant workers")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("forecast-study", parents=[common], help="planner degradation under forecast noise")
    p.add_argument("--jobs", type=int, default=1, help="parallel sigma workers")
    p.set_defaults(fn=cmd_forecast_study)

    p = sub.add_parser("stats", parents=[common], help="variance tests and uncertainty studies")
    p.add_argument("--metrics", help="metrics CSV (default: <out>/evaluate/metrics.csv)")
    p.add_argument("--metric", default="hf", help="metric column to test")
    p.add_argument("--group-by", default="method", help="grouping column")
    p.add_argument("--mc", action="store_true", help="coefficient-perturbation study instead")
    p.add_argument("--fit", help="physics_fit.json with coefficients for --mc")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("calibrate", parents=[common], help="fuel and CO2 calibration table")
    p.add_argument("--vessel", choices=sorted(VESSEL_PRESETS), help="limit output to one preset")
    p.set_defaults(fn=cmd_calibrate)

    sub.add_parser("repro", parents=[common], help="run the scaled pipeline twice and compare").set_defaults(fn=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        return 0
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_config(args.config)
        seed = _resolve_seed(args, cfg)
        return args.fn(args, cfg, seed)
    except PierlabError as exc:
        print(f"pierlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
