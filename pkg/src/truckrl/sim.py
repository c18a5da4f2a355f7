"""Multi-lane highway world stepped at a fixed substep resolution.

The simulator owns vehicle kinematics, random episode setup, event
detection and the episode lifecycle. Surrounding cars follow the
rule-based models in `traffic`; the ego truck's acceleration and lateral
rate are supplied from outside each substep by whatever controller or
policy drives it.

Conventions: lane 0 is the rightmost lane, lane centres sit at
y = lane * lane_width, and x is the position of a vehicle's front
bumper. Episode state is deterministic given (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import ConfigError, EnvSection, TrafficSection
from .traffic import (KraussParams, LaneChangeParams, LaneView, Neighbor,
                      krauss_next_speed, lane_change_decision)

EGO = 0  # index of the ego truck in the state arrays


@dataclass
class EventFlags:
    collision: bool = False
    near_collision: bool = False
    off_road: bool = False
    target_reached: bool = False
    lane_change_started: bool = False

    @property
    def terminal(self) -> bool:
        return self.collision or self.off_road or self.target_reached

    @property
    def hazard(self) -> bool:
        return self.collision or self.off_road

    def merge(self, other: "EventFlags") -> "EventFlags":
        return EventFlags(
            self.collision or other.collision,
            self.near_collision or other.near_collision,
            self.off_road or other.off_road,
            self.target_reached or other.target_reached,
            self.lane_change_started or other.lane_change_started,
        )


@dataclass
class VehicleState:
    """Read-only snapshot of one vehicle, ego first in listings."""
    x: float
    y: float
    v: float
    lane: int
    length: float
    width: float
    v_desired: float
    indicator_left: bool
    indicator_right: bool
    is_ego: bool


@dataclass
class SensedVehicle:
    """One surrounding car as seen from the ego, within sensor range."""
    d_x: float       # x_car - x_ego, m
    d_y: float       # y_car - y_ego, m
    v_rel: float     # v_car - v_ego, m/s
    vy_sign: float   # sign of lateral speed (cars move laterally in jumps, so 0)
    lane: int
    ind_left: bool
    ind_right: bool


class Simulator:
    """The physical world: 1 truck plus n_cars rule-driven passenger cars."""

    def __init__(self, env: EnvSection, traffic: TrafficSection):
        self.cfg = env
        self.kp = KraussParams(traffic.accel, traffic.decel, traffic.tau, traffic.sigma)
        self.lp = LaneChangeParams(traffic.politeness, traffic.advantage_threshold,
                                   traffic.safe_decel_limit)
        self.lc_period = int(round(traffic.decision_period_s / env.substep_dt))
        if self.lc_period < 1:
            raise ConfigError("traffic.decision_period_s must cover at least one substep")
        self.n = env.n_cars
        m = self.n + 1
        self.x = np.zeros(m)
        self.y = np.zeros(m)
        self.v = np.zeros(m)
        self.lane = np.zeros(m, dtype=np.int64)
        self.length = np.full(m, env.car_length)
        self.length[EGO] = env.ego_length
        self.width = np.full(m, env.car_width)
        self.width[EGO] = env.ego_width
        self.v_des = np.zeros(m)
        self.pending_dir = np.zeros(m, dtype=np.int64)   # car lane change queued: -1/0/+1
        self.ind_left = np.zeros(m, dtype=bool)
        self.ind_right = np.zeros(m, dtype=bool)
        # lateral overlap threshold between ego and each car
        self._half_w = (self.width[EGO] + self.width[1:]) / 2.0
        self.rng: Optional[np.random.Generator] = None
        self.substep_count = 0
        self.done = False
        self.term_cause: Optional[str] = None

    # ------------------------------------------------------------------ setup

    def reset(self, seed: int) -> None:
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.substep_count = 0
        self.done = False
        self.term_cause = None
        self.pending_dir[:] = 0
        self.ind_left[:] = False
        self.ind_right[:] = False
        self.y[:] = 0.0
        self.lane[EGO] = int(self.rng.integers(cfg.n_lanes))
        self.x[EGO] = cfg.ego_start_x
        self.v[EGO] = cfg.ego_start_speed
        self.v_des[EGO] = cfg.ego_max_speed
        self.y[EGO] = self.lane[EGO] * cfg.lane_width
        for i in range(1, self.n + 1):
            placed = False
            for _ in range(1000):
                lane = int(self.rng.integers(cfg.n_lanes))
                x = float(self.rng.uniform(0.0, cfg.road_length))
                if self._placement_ok(i, lane, x):
                    self.lane[i] = lane
                    self.x[i] = x
                    self.y[i] = lane * cfg.lane_width
                    placed = True
                    break
            if not placed:
                raise ConfigError(
                    f"could not place car {i}: road too short for n_cars={self.n} "
                    f"with min_init_gap={cfg.min_init_gap}")
            v = float(self.rng.uniform(cfg.car_speed_min, cfg.car_speed_max))
            self.v_des[i] = v
            self.v[i] = v

    def _placement_ok(self, i: int, lane: int, x: float) -> bool:
        g = self.cfg.min_init_gap
        for j in range(i):
            if self.lane[j] != lane:
                continue
            ahead = x - self.length[i] - self.x[j] >= g      # candidate ahead of j
            behind = self.x[j] - self.length[j] - x >= g     # candidate behind j
            if not (ahead or behind):
                return False
        return True

    # ------------------------------------------------------------ kinematics

    def substep(self, ego_accel: float, ego_lateral_rate: float) -> EventFlags:
        """Advance the world by one substep_dt. Raises if the episode is over."""
        if self.done:
            raise RuntimeError("episode reached a terminal state; reset before stepping")
        cfg = self.cfg
        dt = cfg.substep_dt
        if self.n:
            if self.substep_count % self.lc_period == 0:
                self._car_lane_phase()
            gap, v_lead = self._car_leaders()
            noise = self.rng.random(self.n)
            new_v = krauss_next_speed(self.v[1:], v_lead, gap, self.v_des[1:],
                                      self.kp, dt, noise)
            self.v[1:] = new_v
        ve = self.v[EGO] + float(ego_accel) * dt
        self.v[EGO] = min(max(ve, 0.0), cfg.ego_max_speed)
        # semi-implicit Euler: positions advance with the updated speeds
        self.x += self.v * dt
        self.y[EGO] += float(ego_lateral_rate) * dt
        self.lane[EGO] = self._lane_of(self.y[EGO])
        self.substep_count += 1
        flags = self.detect_events()
        if flags.terminal:
            self.done = True
            self.term_cause = ("collision" if flags.collision
                               else "off_road" if flags.off_road else "target")
        return flags

    def _lane_of(self, y: float) -> int:
        lane = int(np.floor(y / self.cfg.lane_width + 0.5))
        return min(max(lane, 0), self.cfg.n_lanes - 1)

    @property
    def time(self) -> float:
        return self.substep_count * self.cfg.substep_dt

    @property
    def distance(self) -> float:
        return float(self.x[EGO]) - self.cfg.ego_start_x

    # ------------------------------------------------------- leader searches

    def _car_leaders(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-car bumper gap and speed of the nearest same-lane vehicle ahead."""
        m = self.n + 1
        gap = np.full(m, np.inf)
        v_lead = np.zeros(m)
        order = np.argsort(self.x, kind="stable")
        ahead_in_lane = [-1] * self.cfg.n_lanes
        xs, vs, lanes, lengths = self.x, self.v, self.lane, self.length
        for k in range(m - 1, -1, -1):
            idx = int(order[k])
            ln = int(lanes[idx])
            j = ahead_in_lane[ln]
            if j >= 0:
                gap[idx] = xs[j] - lengths[j] - xs[idx]
                v_lead[idx] = vs[j]
            ahead_in_lane[ln] = idx
        return gap[1:], v_lead[1:]

    def leader_of_ego(self, max_range: float = np.inf) -> Optional[Tuple[float, float]]:
        """(bumper gap, speed) of the ego's same-lane leader, or None.

        A leader further ahead (front to front) than max_range is ignored.
        """
        if self.n == 0:
            return None
        mask = (self.lane[1:] == self.lane[EGO]) & (self.x[1:] > self.x[EGO])
        if not mask.any():
            return None
        xs = np.where(mask, self.x[1:], np.inf)
        i = int(np.argmin(xs))
        if self.x[1 + i] - self.x[EGO] > max_range:
            return None
        gap = float(self.x[1 + i] - self.length[1 + i] - self.x[EGO])
        return gap, float(self.v[1 + i])

    def _lane_view(self, i: int, lane: int) -> LaneView:
        """Leader/follower around vehicle i if it were in `lane`."""
        leader = follower = None
        lead_x = np.inf
        foll_x = -np.inf
        for j in range(self.n + 1):
            if j == i or self.lane[j] != lane:
                continue
            if self.x[j] > self.x[i]:
                if self.x[j] < lead_x:
                    lead_x = self.x[j]
                    leader = Neighbor(float(self.x[j] - self.length[j] - self.x[i]),
                                      float(self.v[j]))
            else:
                if self.x[j] > foll_x:
                    foll_x = self.x[j]
                    follower = Neighbor(float(self.x[i] - self.length[i] - self.x[j]),
                                        float(self.v[j]))
        return LaneView(leader, follower)

    # -------------------------------------------------- car lateral behaviour

    def _car_lane_phase(self) -> None:
        """Once per decision period: execute queued jumps, then queue new ones.

        A queued change executes one period after it was announced (the
        indicator is the warning), with a safety re-check; if the gap has
        closed in the meantime the change is dropped.
        """
        cfg = self.cfg
        for i in range(1, self.n + 1):
            d = int(self.pending_dir[i])
            if d == 0:
                continue
            target = int(self.lane[i]) + d
            if 0 <= target < cfg.n_lanes and self._jump_safe(i, target):
                self.lane[i] = target
                self.y[i] = target * cfg.lane_width
            self.pending_dir[i] = 0
            self.ind_left[i] = False
            self.ind_right[i] = False
        for i in range(1, self.n + 1):
            if self.pending_dir[i] != 0:
                continue
            lane = int(self.lane[i])
            own = self._lane_view(i, lane)
            left = self._lane_view(i, lane + 1) if lane + 1 < cfg.n_lanes else None
            right = self._lane_view(i, lane - 1) if lane - 1 >= 0 else None
            d = lane_change_decision(float(self.v[i]), float(self.v_des[i]), lane,
                                     cfg.n_lanes, own, left, right, self.kp, self.lp)
            if d != 0:
                self.pending_dir[i] = d
                self.ind_left[i] = d > 0
                self.ind_right[i] = d < 0

    def _jump_safe(self, i: int, target: int) -> bool:
        view = self._lane_view(i, target)
        if view.leader is not None and view.leader.gap <= 0.0:
            return False
        if view.follower is not None and view.follower.gap <= 0.0:
            return False
        return True

    # --------------------------------------------------------------- events

    def detect_events(self) -> EventFlags:
        """Collision / near-collision / off-road / target for the current state."""
        cfg = self.cfg
        flags = EventFlags()
        if self.n:
            lon = (self.x[EGO] > self.x[1:] - self.length[1:]) \
                & (self.x[1:] > self.x[EGO] - self.length[EGO])
            lat = np.abs(self.y[EGO] - self.y[1:]) < self._half_w
            flags.collision = bool(np.any(lon & lat))
        y = float(self.y[EGO])
        half = cfg.lane_width / 2.0
        flags.off_road = y < -half or y > (cfg.n_lanes - 1) * cfg.lane_width + half
        flags.target_reached = float(self.x[EGO]) >= cfg.target_x
        if not flags.collision:
            lead = self.leader_of_ego()
            if lead is not None:
                gap, v_lead = lead
                closing = float(self.v[EGO]) - v_lead
                if gap < cfg.near_collision_gap or (closing > 0.0 and gap < closing * cfg.near_collision_ttc):
                    flags.near_collision = True
        return flags

    # -------------------------------------------------------------- sensing

    def set_ego_indicators(self, left: bool, right: bool) -> None:
        self.ind_left[EGO] = left
        self.ind_right[EGO] = right

    def sensor_snapshot(self) -> List[SensedVehicle]:
        """Cars within sensor range, nearest first by |d_x| (stable on ties)."""
        out: List[SensedVehicle] = []
        if self.n == 0:
            return out
        d = self.x[1:] - self.x[EGO]
        idx = [i for i in range(self.n) if abs(d[i]) <= self.cfg.sensor_range]
        idx.sort(key=lambda i: abs(d[i]))
        for i in idx:
            out.append(SensedVehicle(
                d_x=float(d[i]),
                d_y=float(self.y[1 + i] - self.y[EGO]),
                v_rel=float(self.v[1 + i] - self.v[EGO]),
                vy_sign=0.0,
                lane=int(self.lane[1 + i]),
                ind_left=bool(self.ind_left[1 + i]),
                ind_right=bool(self.ind_right[1 + i]),
            ))
        return out

    # ---------------------------------------------------------- introspection

    def vehicle(self, i: int) -> VehicleState:
        return VehicleState(
            x=float(self.x[i]), y=float(self.y[i]), v=float(self.v[i]),
            lane=int(self.lane[i]), length=float(self.length[i]),
            width=float(self.width[i]), v_desired=float(self.v_des[i]),
            indicator_left=bool(self.ind_left[i]),
            indicator_right=bool(self.ind_right[i]),
            is_ego=(i == EGO))

    @property
    def ego(self) -> VehicleState:
        return self.vehicle(EGO)

    def vehicles(self) -> List[VehicleState]:
        return [self.vehicle(i) for i in range(self.n + 1)]

    # ------------------------------------------------------------ state i/o

    def get_state(self) -> dict:
        return {
            "x": self.x.copy(), "y": self.y.copy(), "v": self.v.copy(),
            "lane": self.lane.copy(), "v_des": self.v_des.copy(),
            "pending_dir": self.pending_dir.copy(),
            "ind_left": self.ind_left.copy(), "ind_right": self.ind_right.copy(),
            "substep_count": self.substep_count, "done": self.done,
            "term_cause": self.term_cause,
            "rng_state": self.rng.bit_generator.state if self.rng is not None else None,
        }

    def set_state(self, state: dict) -> None:
        self.x[:] = state["x"]
        self.y[:] = state["y"]
        self.v[:] = state["v"]
        self.lane[:] = state["lane"]
        self.v_des[:] = state["v_des"]
        self.pending_dir[:] = state["pending_dir"]
        self.ind_left[:] = state["ind_left"]
        self.ind_right[:] = state["ind_right"]
        self.substep_count = int(state["substep_count"])
        self.done = bool(state["done"])
        self.term_cause = state["term_cause"]
        if state["rng_state"] is not None:
            if self.rng is None:
                self.rng = np.random.default_rng()
            self.rng.bit_generator.state = state["rng_state"]
