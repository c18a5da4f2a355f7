"""Rule-based longitudinal and lateral models for the surrounding cars.

Longitudinal motion follows the stochastic safe-speed car-following model
of Krauss: each step a vehicle picks the largest speed that is reachable,
wanted and safe, then subtracts a random dawdle. Lateral moves use a
politeness-weighted incentive with a hard safety veto, in the spirit of
the classic MOBIL criterion.

Everything here is a pure function of its arguments so the same rules can
drive simulator cars and, for comparisons, the ego truck itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np


@dataclass
class KraussParams:
    accel: float = 2.6        # max acceleration, m/s^2
    decel: float = 4.5        # comfortable braking assumed of both drivers, m/s^2
    tau: float = 1.0          # driver reaction time, s
    sigma: float = 0.5        # dawdle factor in [0, 1]


@dataclass
class LaneChangeParams:
    politeness: float = 0.5
    advantage_threshold: float = 0.2   # m/s^2 gain required to bother changing
    safe_decel_limit: float = 4.0      # max braking the new follower may be forced into


def krauss_safe_speed(v, v_leader, gap, p: KraussParams):
    """Largest speed that keeps the follower able to avoid the leader.

    `gap` is bumper to bumper; np.inf means free road (the formula then
    yields +inf, which the caller's min() discards). Negative gaps are
    treated as zero, forcing an emergency stop rather than a negative
    speed demand.
    """
    gap = np.maximum(gap, 0.0)
    return v_leader + (gap - v_leader * p.tau) / ((v + v_leader) / (2.0 * p.decel) + p.tau)


def krauss_next_speed(v, v_leader, gap, v_desired, p: KraussParams, dt, noise):
    """One substep of the stochastic safe-speed update.

    noise is a uniform [0, 1) draw (scalar or array, matching v); the
    dawdle subtracts sigma * accel * dt * noise before the floor at zero.
    Works elementwise on arrays.
    """
    v_safe = krauss_safe_speed(v, v_leader, gap, p)
    v_cand = np.minimum(np.minimum(v + p.accel * dt, v_safe), v_desired)
    return np.maximum(0.0, v_cand - p.sigma * p.accel * dt * noise)


class Neighbor(NamedTuple):
    gap: float    # bumper-to-bumper distance to this vehicle, m
    speed: float  # its longitudinal speed, m/s


class LaneView(NamedTuple):
    leader: Optional[Neighbor]
    follower: Optional[Neighbor]


def _accel_toward(v, v_desired, leader: Optional[Neighbor], p: KraussParams) -> float:
    # deterministic (sigma-free) acceleration implied by one reaction time
    gap = np.inf if leader is None else leader.gap
    v_lead = 0.0 if leader is None else leader.speed
    v_safe = krauss_safe_speed(v, v_lead, gap, p)
    v_next = min(v + p.accel * p.tau, v_safe, v_desired)
    return (v_next - v) / p.tau


def _follower_braking(v_self, follower: Optional[Neighbor], p: KraussParams) -> float:
    """Deceleration the follower would need with us as its new leader."""
    if follower is None:
        return 0.0
    v_safe = krauss_safe_speed(follower.speed, v_self, follower.gap, p)
    return max(0.0, (follower.speed - v_safe) / p.tau)


def lane_change_decision(v, v_desired, lane, n_lanes,
                         own: LaneView, left: Optional[LaneView], right: Optional[LaneView],
                         kp: KraussParams, lp: LaneChangeParams) -> int:
    """Return +1 (left), -1 (right) or 0 (stay).

    left/right are the adjacent-lane views, or None where no lane exists.
    A candidate lane must pass the safety veto (positive gaps, and the new
    follower not forced to brake harder than safe_decel_limit); among safe
    candidates the politeness-discounted gain must exceed the advantage
    threshold. Ties at equal gain go right (keep-right convention).
    """
    a_stay = _accel_toward(v, v_desired, own.leader, kp)
    best_dir, best_adv = 0, lp.advantage_threshold
    for direction, view in ((-1, right), (1, left)):
        target = lane + direction
        if view is None or target < 0 or target >= n_lanes:
            continue
        if view.leader is not None and view.leader.gap <= 0.0:
            continue
        if view.follower is not None and view.follower.gap <= 0.0:
            continue
        if _follower_braking(v, view.follower, kp) > lp.safe_decel_limit:
            continue
        advantage = (_accel_toward(v, v_desired, view.leader, kp) - a_stay) \
            - lp.politeness * _follower_braking(v, view.follower, kp)
        if advantage > best_adv:
            best_dir, best_adv = direction, advantage
    return best_dir
