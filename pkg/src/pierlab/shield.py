"""Action shield applied between a policy and the simulator at rollout time.

An action is safe when its one-hour track stays on water inside the domain,
the landing point's normalized head-sea exposure is below a threshold, and
the landing state still has at least one such exit (so the shield never
paints the vessel into a corner it would have to breach next step). Unsafe
proposals are swapped for the safe action whose post-turn heading is closest
to the goal bearing. If nothing is safe, a slow straight-ahead fallback is
returned and a warning is logged.
"""

import logging
from dataclasses import dataclass, replace

from . import geo
from .envfields import EnvironmentFields
from .physics import PhysicsCoefficients
from .simulator import (
    FALLBACK_ACTION,
    N_ACTIONS,
    MoveResult,
    SimConfig,
    VesselState,
    action_from_index,
    propagate,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShieldConfig:
    hf_threshold: float = 0.6  # fraction of the field's 95th-percentile exposure
    check_escape: bool = True


class Shield:
    """Stateless safety filter with intervention counters."""

    def __init__(
        self,
        env: EnvironmentFields,
        sim: SimConfig,
        coeffs: PhysicsCoefficients,
        config: ShieldConfig | None = None,
    ):
        self.env = env
        self.sim = sim
        self.coeffs = coeffs
        self.config = config or ShieldConfig()
        self.n_checked = 0
        self.n_intervened = 0
        self.n_fallback = 0

    def reset_counters(self) -> None:
        self.n_checked = self.n_intervened = self.n_fallback = 0

    def _landing_ok(self, vessel: VesselState, move: MoveResult) -> bool:
        if move.kind != "ok":
            return False
        e = self.env.hf_exposure(move.lat, move.lon, vessel.env_time + self.sim.dt_h, move.heading)
        return e / self.env.hf_p95 <= self.config.hf_threshold

    def _landed(self, vessel: VesselState, move: MoveResult) -> VesselState:
        return replace(
            vessel,
            lat=move.lat,
            lon=move.lon,
            heading=move.heading,
            speed=move.speed_kts,
            elapsed=vessel.elapsed + self.sim.dt_h,
        )

    def is_safe(self, vessel: VesselState, action_idx: int) -> bool:
        move = propagate(vessel, action_idx, self.env, self.sim, self.coeffs)
        if not self._landing_ok(vessel, move):
            return False
        if not self.config.check_escape:
            return True
        landed = self._landed(vessel, move)
        for b in range(N_ACTIONS):
            move2 = propagate(landed, b, self.env, self.sim, self.coeffs)
            if self._landing_ok(landed, move2):
                return True
        return False

    def safe_actions(self, vessel: VesselState) -> list[int]:
        return [a for a in range(N_ACTIONS) if self.is_safe(vessel, a)]

    def filter(self, vessel: VesselState, proposed: int, goal: tuple[float, float]) -> tuple[int, bool]:
        """Return (action_to_execute, intervened)."""
        self.n_checked += 1
        if self.is_safe(vessel, proposed):
            return proposed, False
        safe = self.safe_actions(vessel)
        self.n_intervened += 1
        if not safe:
            self.n_fallback += 1
            log.warning(
                "shield fallback: no safe action at (%.3f, %.3f) t=%.1f h",
                vessel.lat,
                vessel.lon,
                vessel.env_time,
            )
            return FALLBACK_ACTION, True
        bearing = geo.bearing_deg(vessel.lat, vessel.lon, goal[0], goal[1])

        def rank(a: int):
            delta, factor = action_from_index(a)
            post = geo.wrap_360(vessel.heading + delta)
            return (abs(geo.wrap_signed(post - bearing)), abs(delta), -factor, a)

        return min(safe, key=rank), True
