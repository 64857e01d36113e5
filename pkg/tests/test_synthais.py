import numpy as np
import pytest

from pierlab.errors import ConfigError, DegenerateFitError
from pierlab.physics import (
    GROUND_TRUTH_COEFFS,
    GROUND_TRUTH_MODE,
    SpeedLossInput,
    effective_speed,
)
from pierlab.synthais import (
    BASE_KNOWN,
    BASE_NOMINAL,
    COLUMN_NAMES,
    FitResult,
    SynthConfig,
    Track,
    completion_fraction,
    design_matrix,
    fit_speed_loss,
    generate_tracks,
    load_tracks,
    save_tracks,
    tracks_digest,
)

NOISE_FREE = SynthConfig(n_tracks=150, heading_noise_deg=0.0, sog_noise_kts=0.0)


@pytest.fixture(scope="module")
def clean_tracks(env):
    return generate_tracks(env, NOISE_FREE, np.random.default_rng(2024))


@pytest.fixture(scope="module")
def noisy_tracks(env):
    return generate_tracks(env, SynthConfig(n_tracks=250), np.random.default_rng(99))


def constant_track(n=8, lat=27.0, lon=-91.0, heading=90.0, t=5.0, base=12.0):
    """All pings identical; every design column is then constant."""
    return Track(
        track_id=0,
        base_speed=base,
        reached=False,
        lats=np.full(n, lat),
        lons=np.full(n, lon),
        times=np.full(n, t),
        headings=np.full(n, heading),
        sog_true=np.full(n, 11.0),
        sog_obs=np.full(n, 11.0),
    )


class TestGeneration:
    def test_tracks_stay_on_water(self, env, noisy_tracks):
        for track in noisy_tracks[:50]:
            for lat, lon in zip(track.lats, track.lons):
                assert env.is_water(lat, lon)

    def test_track_count_and_shapes(self, noisy_tracks):
        assert len(noisy_tracks) == 250
        for track in noisy_tracks:
            n = len(track)
            for name in ("lons", "times", "headings", "sog_true", "sog_obs"):
                assert len(getattr(track, name)) == n

    def test_base_speeds_within_half_range(self, noisy_tracks):
        cfg = SynthConfig()
        for track in noisy_tracks:
            assert abs(track.base_speed - cfg.base_mean_kts) <= cfg.base_half_range_kts

    def test_departures_within_window(self, noisy_tracks):
        for track in noisy_tracks:
            if len(track):
                assert 0.0 <= track.times[0] < SynthConfig().window_h

    def test_noise_free_sog_matches_physics(self, env, clean_tracks):
        checked = 0
        for track in clean_tracks[:40]:
            assert np.array_equal(track.sog_obs, track.sog_true)
            for i in range(len(track)):
                met = env.sample(track.lats[i], track.lons[i], track.times[i], track.headings[i])
                v = effective_speed(
                    GROUND_TRUTH_COEFFS,
                    SpeedLossInput(met, float(track.headings[i]), track.base_speed),
                    GROUND_TRUTH_MODE,
                )
                assert track.sog_true[i] == v
                checked += 1
        assert checked > 100

    def test_deterministic_under_seed(self, env, clean_tracks):
        again = generate_tracks(env, NOISE_FREE, np.random.default_rng(2024))
        assert tracks_digest(again) == tracks_digest(clean_tracks)

    def test_most_walks_reach_goal(self, noisy_tracks):
        assert completion_fraction(noisy_tracks) > 0.5

    def test_completion_fraction_empty(self):
        assert completion_fraction([]) == 0.0


class TestPersistence:
    def test_round_trip(self, noisy_tracks, tmp_path):
        path = tmp_path / "tracks.npz"
        save_tracks(noisy_tracks, path)
        loaded = load_tracks(path)
        assert len(loaded) == len(noisy_tracks)
        for a, b in zip(noisy_tracks, loaded):
            assert a.base_speed == b.base_speed
            assert a.reached == b.reached
            for name in ("lats", "lons", "times", "headings", "sog_true", "sog_obs"):
                assert np.array_equal(getattr(a, name), getattr(b, name))
        assert tracks_digest(loaded) == tracks_digest(noisy_tracks)

    def test_digest_sensitive_to_content(self, noisy_tracks):
        import copy

        mutated = copy.deepcopy(noisy_tracks)
        mutated[3].sog_obs[0] += 1e-9
        assert tracks_digest(mutated) != tracks_digest(noisy_tracks)


class TestDesignMatrix:
    def test_columns_recompute(self, env, clean_tracks):
        x, y = design_matrix(env, clean_tracks[:10], BASE_KNOWN)
        assert x.shape[1] == len(COLUMN_NAMES) == 5
        assert np.all(x[:, 4] == 1.0)
        # The drag column is the negated steepness regressor, so y on a
        # noise-free fleet should be reproduced exactly by the known
        # coefficients in ground-truth convention.
        theta = np.array([0.5, 0.005, 0.7, 0.03, 0.0])
        assert np.allclose(x @ theta, y, atol=1e-12)
        assert np.all(x[:, 0] <= 0.0)

    def test_unknown_base_mode(self, env, clean_tracks):
        with pytest.raises(ConfigError, match="base_mode"):
            design_matrix(env, clean_tracks[:2], "guessed")

    def test_no_reports(self, env):
        empty = Track(0, 12.0, False, *[np.empty(0)] * 6)
        with pytest.raises(DegenerateFitError, match="no position reports"):
            design_matrix(env, [empty], BASE_KNOWN)


class TestFit:
    def test_noise_free_known_base_recovers_truth(self, env, clean_tracks):
        fit = fit_speed_loss(env, clean_tracks, base_mode=BASE_KNOWN)
        got = fit.recovered
        assert got.a == pytest.approx(0.5, abs=1e-6)
        assert got.b == pytest.approx(0.005, abs=1e-6)
        assert got.c == pytest.approx(0.7, abs=1e-6)
        assert got.d == pytest.approx(0.03, abs=1e-6)
        assert got.e == pytest.approx(0.0, abs=1e-6)
        assert fit.r_squared > 0.999999
        assert fit.sigma_resid < 1e-6

    def test_calibrated_convention_signs(self, env, clean_tracks):
        fit = fit_speed_loss(env, clean_tracks, base_mode=BASE_KNOWN)
        assert fit.coefficients.a == pytest.approx(-fit.recovered.a, rel=1e-12)
        assert fit.coefficients.b == fit.recovered.b
        assert fit.mode == "calibrated"

    def test_nominal_base_biases_but_keeps_signs(self, env, noisy_tracks):
        nominal = fit_speed_loss(env, noisy_tracks, base_mode=BASE_NOMINAL)
        known = fit_speed_loss(env, noisy_tracks, base_mode=BASE_KNOWN)
        assert 0.15 < nominal.recovered.a < 0.65
        assert nominal.recovered.c > 0.4
        # Pretending every vessel sails the nominal base speed dumps the
        # per-vessel spread into the residual.
        assert nominal.sigma_resid > 2.0 * known.sigma_resid
        assert nominal.r_squared < known.r_squared
        assert nominal.n_rows == sum(len(t) for t in noisy_tracks)

    def test_fit_on_noisy_obs_close_with_known_base(self, env, noisy_tracks):
        fit = fit_speed_loss(env, noisy_tracks, base_mode=BASE_KNOWN)
        assert abs(fit.recovered.a - 0.5) < 4.0 * fit.stderr[0]
        assert abs(fit.recovered.c - 0.7) < 4.0 * fit.stderr[2]
        # Residual scale should sit near the injected SOG noise.
        assert 0.4 < fit.sigma_resid < 0.6

    def test_too_few_rows(self, env):
        short = constant_track(n=3)
        with pytest.raises(DegenerateFitError, match="cannot identify"):
            fit_speed_loss(env, [short], base_mode=BASE_KNOWN)

    def test_collinear_columns_named(self, env):
        with pytest.raises(DegenerateFitError, match="collinear"):
            fit_speed_loss(env, [constant_track(n=20)], base_mode=BASE_KNOWN)

    def test_as_dict_shape(self, env, clean_tracks):
        d = fit_speed_loss(env, clean_tracks, base_mode=BASE_KNOWN).as_dict()
        assert set(d) == {
            "mode",
            "base_mode",
            "coefficients",
            "recovered",
            "stderr",
            "sigma_resid",
            "r_squared",
            "n_rows",
        }
        assert set(d["stderr"]) == set(COLUMN_NAMES)
        assert set(d["coefficients"]) == {"a", "b", "c", "d", "e"}
