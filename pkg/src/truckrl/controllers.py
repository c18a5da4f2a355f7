"""Low-level ego controllers beneath the tactical decision layer.

Longitudinal control is an adaptive cruise controller built on the
Intelligent Driver Model: the tactical layer chooses the headway time
gap and the desired speed, the controller turns those into bounded
accelerations. Lateral control executes lane changes as a fixed-rate
ramp between lane centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from .config import ControllerSection


@dataclass
class AccState:
    """Tactical setpoints owned by the decision layer."""
    desired_speed: float
    time_gap: float


def idm_accel(v: float, delta_v: float, gap: float, v0: float, T: float,
              a: float, b: float, s0: float, delta: float) -> float:
    """Intelligent Driver Model acceleration, unclamped.

    v        : own speed, m/s
    delta_v  : approach rate v - v_leader, m/s
    gap      : bumper-to-bumper distance, m (math.inf for free road)
    v0       : desired speed, m/s
    T        : desired headway time gap, s
    a, b     : comfortable acceleration / braking, m/s^2
    s0       : minimum standstill gap, m
    delta    : speed-term exponent

    The dynamic desired gap s* is floored at zero so a fast-receding
    leader can never turn the interaction term into attraction; with
    gap = inf the interaction vanishes and the free-road law remains.
    At v = v0 on a free road the model is an exact fixed point.
    """
    v0 = max(v0, 1e-3)
    s_star = max(0.0, s0 + v * T + v * delta_v / (2.0 * math.sqrt(a * b)))
    return a * (1.0 - (v / v0) ** delta - (s_star / gap) ** 2)


def acc_track(state: AccState, v: float, lead: Optional[Tuple[float, float]],
              ctl: ControllerSection) -> float:
    """One control tick of the cruise controller.

    lead is (bumper gap, leader speed) or None for a free road. A
    non-positive gap means the sensor geometry already failed and gets
    the hardest allowed braking. Output is clamped to
    [ctl.accel_min, ctl.idm_a].
    """
    if lead is None:
        accel = idm_accel(v, 0.0, math.inf, state.desired_speed, state.time_gap,
                          ctl.idm_a, ctl.idm_b, ctl.idm_s0, ctl.idm_delta)
    else:
        gap, v_lead = lead
        if gap <= 0.0:
            return ctl.accel_min
        accel = idm_accel(v, v - v_lead, gap, state.desired_speed, state.time_gap,
                          ctl.idm_a, ctl.idm_b, ctl.idm_s0, ctl.idm_delta)
    return min(max(accel, ctl.accel_min), ctl.idm_a)


@dataclass
class LaneChangePlan:
    """A lateral ramp in flight, consumed one substep rate at a time."""
    direction: int        # +1 toward higher lane index (left), -1 right
    origin_lane: int
    target_lane: int
    target_y: float
    rate: float           # signed lateral speed, m/s
    substeps_total: int
    substeps_done: int = 0

    @property
    def active(self) -> bool:
        return self.substeps_done < self.substeps_total

    def next_rate(self, y: float, dt: float) -> float:
        """Rate for the coming substep; the final substep lands on target_y."""
        self.substeps_done += 1
        if self.substeps_done >= self.substeps_total:
            return (self.target_y - y) / dt
        return self.rate


def start_lane_change(lane: int, direction: int, lane_width: float, dt: float,
                      ctl: ControllerSection) -> LaneChangePlan:
    """Plan a one-lane move. The target lane may be off the road; the ramp
    simply heads there and the event model decides what that means."""
    target_lane = lane + direction
    target_y = target_lane * lane_width
    substeps = math.ceil(lane_width / (ctl.lateral_rate * dt) - 1e-9)
    return LaneChangePlan(direction, lane, target_lane, target_y,
                          direction * ctl.lateral_rate, substeps)


def reverse_lane_change(plan: LaneChangePlan, y: float, lane_width: float,
                        dt: float, ctl: ControllerSection) -> Optional[LaneChangePlan]:
    """Abort a move in flight and ramp back to its origin lane centre.

    Returns None when the ego already sits on the origin centre (nothing
    to undo).
    """
    target_y = plan.origin_lane * lane_width
    remaining = target_y - y
    if remaining == 0.0:
        return None
    rate = math.copysign(ctl.lateral_rate, remaining)
    substeps = math.ceil(abs(remaining) / (ctl.lateral_rate * dt) - 1e-9)
    if substeps <= 0:
        return None
    return LaneChangePlan(-plan.direction, plan.target_lane, plan.origin_lane,
                          target_y, rate, substeps)


def baseline_accels(speed_delta: float, window_s: float) -> float:
    """Constant acceleration realising speed_delta across one decision window."""
    return speed_delta / window_s
