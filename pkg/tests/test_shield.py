import logging

import numpy as np
import pytest

from pierlab import geo
from pierlab.envfields import (
    CurrentFieldParams,
    EnvironmentFields,
    GridSpec,
    WaveFieldParams,
    WindFieldParams,
)
from pierlab.physics import GROUND_TRUTH_COEFFS, vessel_preset
from pierlab.shield import Shield, ShieldConfig
from pierlab.simulator import (
    FALLBACK_ACTION,
    N_ACTIONS,
    EpisodeSetup,
    RewardWeights,
    SimConfig,
    VesselState,
    action_from_index,
    action_index,
    step,
)

GOAL_EAST = (26.55, -92.0)


@pytest.fixture(scope="module")
def sim():
    return SimConfig()


@pytest.fixture(scope="module")
def channel_env():
    """A three-cell-wide channel that dead-ends; everything else is land.

    At 12 kts the vessel crosses two cells per hour, so a full-speed step
    from the second column lands one cell short of the wall with no safe
    continuation, while slower or turning actions still have exits.
    """
    grid = GridSpec(lat_min=26.0, lon_min=-93.0, resolution=0.1, n_rows=10, n_cols=10)
    mask = np.ones((10, 10), dtype=bool)
    mask[4:7, 0:4] = False
    return EnvironmentFields(
        grid, WaveFieldParams(), CurrentFieldParams(), WindFieldParams(), mask, hf_p95=1.0
    )


def channel_vessel(col: int) -> VesselState:
    return VesselState(lat=26.55, lon=-93.0 + 0.05 + 0.1 * col, heading=90.0, speed=12.0)


def make_shield(env, sim, **kw):
    return Shield(env, sim, GROUND_TRUTH_COEFFS, ShieldConfig(**kw))


class TestChannelScenario:
    def test_safe_proposal_passes_through(self, channel_env, sim):
        shield = make_shield(channel_env, sim, hf_threshold=1e9)
        action, intervened = shield.filter(channel_vessel(0), action_index(0.0, 1.0), GOAL_EAST)
        assert (action, intervened) == (action_index(0.0, 1.0), False)
        assert (shield.n_checked, shield.n_intervened, shield.n_fallback) == (1, 0, 0)

    def test_escape_check_rejects_dead_end(self, channel_env, sim):
        vessel = channel_vessel(1)
        full_ahead = action_index(0.0, 1.0)
        with_escape = make_shield(channel_env, sim, hf_threshold=1e9)
        without = make_shield(channel_env, sim, hf_threshold=1e9, check_escape=False)
        assert not with_escape.is_safe(vessel, full_ahead)
        assert without.is_safe(vessel, full_ahead)

    def test_substitution_prefers_goal_bearing(self, channel_env, sim):
        shield = make_shield(channel_env, sim, hf_threshold=1e9)
        vessel = channel_vessel(1)
        action, intervened = shield.filter(vessel, action_index(0.0, 1.0), GOAL_EAST)
        assert intervened
        assert shield.n_fallback == 0
        assert action in shield.safe_actions(vessel)
        # Goal lies dead ahead, so the swap keeps the heading and only
        # backs off the throttle.
        delta, factor = action_from_index(action)
        assert delta == 0.0
        assert factor < 1.0

    def test_fallback_when_nothing_is_safe(self, channel_env, sim, caplog):
        shield = make_shield(channel_env, sim, hf_threshold=1e9)
        vessel = channel_vessel(2)
        assert shield.safe_actions(vessel) == []
        with caplog.at_level(logging.WARNING, logger="pierlab.shield"):
            action, intervened = shield.filter(vessel, action_index(0.0, 1.0), GOAL_EAST)
        assert (action, intervened) == (FALLBACK_ACTION, True)
        assert shield.n_fallback == 1
        assert "shield fallback" in caplog.text

    def test_reset_counters(self, channel_env, sim):
        shield = make_shield(channel_env, sim, hf_threshold=1e9)
        shield.filter(channel_vessel(2), 0, GOAL_EAST)
        shield.reset_counters()
        assert (shield.n_checked, shield.n_intervened, shield.n_fallback) == (0, 0, 0)


class TestExposureThreshold:
    def test_head_seas_into_storm_blocked(self, env, sim):
        # At the storm peak the head-sea exposure at the center is far above
        # the 95th percentile of the whole field, so a tight threshold bans
        # sailing into it while a permissive one does not.
        vessel = VesselState(lat=28.1, lon=-90.3, heading=45.0, speed=12.0, env_t0=12.0)
        tight = make_shield(env, sim, hf_threshold=0.6)
        loose = make_shield(env, sim, hf_threshold=50.0)
        into_storm = action_index(0.0, 1.0)
        assert not tight.is_safe(vessel, into_storm)
        assert loose.is_safe(vessel, into_storm)

    def test_following_seas_stay_safe(self, env, sim):
        vessel = VesselState(lat=28.1, lon=-90.3, heading=225.0, speed=12.0, env_t0=12.0)
        tight = make_shield(env, sim, hf_threshold=0.6)
        assert tight.is_safe(vessel, action_index(0.0, 1.0))

    def test_threshold_widens_safe_set(self, env, sim):
        vessel = VesselState(lat=28.1, lon=-90.3, heading=45.0, speed=12.0, env_t0=12.0)
        tight = set(make_shield(env, sim, hf_threshold=0.6).safe_actions(vessel))
        loose = set(make_shield(env, sim, hf_threshold=50.0).safe_actions(vessel))
        assert tight < loose
        assert len(loose) == N_ACTIONS


class TestShieldedRollout:
    def test_random_walk_never_grounds(self, env, sim):
        weights = RewardWeights()
        shield = make_shield(env, sim, hf_threshold=0.6)
        rng = np.random.default_rng(404)
        vessel = VesselState(lat=27.0, lon=-91.0, heading=90.0, speed=12.0)
        goal = (28.5, -88.6)
        blocked_steps = 0
        for k in range(300):
            proposed = int(rng.integers(N_ACTIONS))
            vessel, _, done, out = step(
                vessel, proposed, env, goal, sim, weights, GROUND_TRUTH_COEFFS,
                shield=shield, max_steps=10_000,
            )
            blocked_steps += int(out.blocked)
            if done:
                break
            assert env.is_water(vessel.lat, vessel.lon)
        assert blocked_steps == 0
        assert shield.n_checked >= 1
        assert shield.n_intervened > 0

    def test_shielded_episode_counts_interventions(self, env, routes, sim):
        from pierlab.simulator import run_episode

        setup = EpisodeSetup(env, sim, RewardWeights(), GROUND_TRUTH_COEFFS, vessel_preset("panamax"))
        shield = make_shield(env, sim, hf_threshold=0.6)

        def reckless(ctx):
            # Hug the goal bearing even straight through the storm core.
            err = geo.wrap_signed(ctx.vessel.last_bearing - ctx.vessel.heading)
            from pierlab.simulator import HEADING_DELTAS

            best = min(HEADING_DELTAS, key=lambda d: abs(err - d))
            return action_index(best, 1.0)

        rec = run_episode(setup, reckless, routes["storm_crossing"], departure_t=6.0, shield=shield)
        assert not rec.blocked
        assert rec.shield_interventions == shield.n_intervened
