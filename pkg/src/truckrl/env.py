"""The decision-level environment wrapped around the simulator.

Two action architectures share one observation space:

* hierarchical - 8 discrete actions steer an adaptive cruise controller
  (pick headway gap, nudge desired speed, hold) plus lane-change
  commands; a lane change is a single 4 s decision, everything else is
  a 1 s decision.
* baseline - 12 discrete actions pair a longitudinal speed change
  {0, +1, -1, emergency} with a lateral command {stay, left, right} on a
  fixed 1 s cadence; lateral commands start, continue or abort-and-
  reverse a lane change that runs across windows.

Every step yields a StepSummary which the configured reward function
prices, and an EpisodeOutcome accumulates the trip's physical costs for
evaluation regardless of reward kind.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import List, Optional, Tuple

import numpy as np

from .config import ControllerSection, RunConfig
from .controllers import (AccState, LaneChangePlan, acc_track, baseline_accels,
                          reverse_lane_change, start_lane_change)
from .rewards import (CurriculumStage, StepSummary, energy_step, make_reward_fn,
                      tcop_params_from)
from .sim import EGO, EventFlags, Simulator

DECISION_PERIOD_S = 1.0   # cadence of ordinary decisions
EGO_FEATURES = 6
CAR_FEATURES = 7


# ----------------------------------------------------------------- actions

@dataclass(frozen=True)
class HierCommand:
    kind: str             # 'gap' | 'speed' | 'hold' | 'lane'
    value: float = 0.0    # gap seconds / signed speed delta / lane direction


@dataclass(frozen=True)
class BaseCommand:
    speed_delta: float    # m/s across the window
    lateral: int          # +1 left, -1 right, 0 stay


_BASE_LAT = (0, 1, -1)


def n_actions(architecture: str, ctl: ControllerSection) -> int:
    if architecture == "hierarchical":
        return len(ctl.time_gaps) + 5
    return 12


def decode_hierarchical(action: int, ctl: ControllerSection) -> HierCommand:
    """Action index -> command. Gaps first, then +v, -v, hold, left, right."""
    gaps = ctl.time_gaps
    k = len(gaps)
    if 0 <= action < k:
        return HierCommand("gap", float(gaps[action]))
    if action == k:
        return HierCommand("speed", ctl.speed_step)
    if action == k + 1:
        return HierCommand("speed", -ctl.speed_step)
    if action == k + 2:
        return HierCommand("hold")
    if action == k + 3:
        return HierCommand("lane", 1)
    if action == k + 4:
        return HierCommand("lane", -1)
    raise ValueError(f"hierarchical action out of range: {action}")


def encode_hierarchical(cmd: HierCommand, ctl: ControllerSection) -> int:
    gaps = ctl.time_gaps
    k = len(gaps)
    if cmd.kind == "gap":
        return gaps.index(cmd.value)
    if cmd.kind == "speed":
        return k if cmd.value > 0 else k + 1
    if cmd.kind == "hold":
        return k + 2
    if cmd.kind == "lane":
        return k + 3 if cmd.value > 0 else k + 4
    raise ValueError(f"cannot encode {cmd!r}")


def decode_baseline(action: int, ctl: ControllerSection) -> BaseCommand:
    """Action index -> (speed delta, lateral); index = lon * 3 + lat."""
    if not 0 <= action < 12:
        raise ValueError(f"baseline action out of range: {action}")
    lon_vals = (0.0, ctl.speed_step, -ctl.speed_step,
                ctl.accel_min * DECISION_PERIOD_S)
    return BaseCommand(lon_vals[action // 3], _BASE_LAT[action % 3])


def encode_baseline(cmd: BaseCommand, ctl: ControllerSection) -> int:
    lon_vals = (0.0, ctl.speed_step, -ctl.speed_step,
                ctl.accel_min * DECISION_PERIOD_S)
    return lon_vals.index(cmd.speed_delta) * 3 + _BASE_LAT.index(cmd.lateral)


# ------------------------------------------------------------- observation

def observation_dim(n_cars: int) -> int:
    return EGO_FEATURES + CAR_FEATURES * n_cars


def build_observation(sim: Simulator, include_d_lead: bool = True,
                      ego_vy_sign: float = 0.0, slots: Optional[int] = None) -> np.ndarray:
    """Encode the world into the fixed-width feature vector, all in [-1, 1].

    Six ego features, then `slots` blocks of seven for the nearest cars
    (by |longitudinal distance|). Empty slots read as a far, irrelevant
    car: d_x at full range, everything else zero.
    """
    cfg = sim.cfg
    if slots is None:
        slots = cfg.n_cars
    obs = np.zeros(EGO_FEATURES + CAR_FEATURES * slots)
    lane_den = float(cfg.n_lanes - 1) if cfg.n_lanes > 1 else 1.0
    y_den = cfg.n_lanes * cfg.lane_width
    obs[0] = sim.v[EGO] / cfg.ego_max_speed
    obs[1] = ego_vy_sign
    obs[2] = sim.lane[EGO] / lane_den
    obs[3] = float(sim.ind_left[EGO])
    obs[4] = float(sim.ind_right[EGO])
    if include_d_lead:
        lead = sim.leader_of_ego(cfg.sensor_range)
        d_lead = cfg.sensor_range if lead is None else min(lead[0], cfg.sensor_range)
        obs[5] = d_lead / cfg.sensor_range
    sensed = sim.sensor_snapshot()
    for slot in range(slots):
        base = EGO_FEATURES + CAR_FEATURES * slot
        if slot < len(sensed):
            car = sensed[slot]
            obs[base + 0] = car.d_x / cfg.sensor_range
            obs[base + 1] = car.d_y / y_den
            obs[base + 2] = car.v_rel / cfg.car_speed_max
            obs[base + 3] = car.vy_sign
            obs[base + 4] = car.lane / lane_den
            obs[base + 5] = float(car.ind_left)
            obs[base + 6] = float(car.ind_right)
        else:
            obs[base + 0] = 1.0
    return obs


# ---------------------------------------------------------------- outcome

@dataclass
class EpisodeOutcome:
    """Physical bookkeeping of one episode, reward-kind independent."""
    cause: str = "running"    # running | target | collision | off_road | truncated
    steps: int = 0
    duration: float = 0.0     # s
    distance: float = 0.0     # m
    energy_kwh: float = 0.0
    energy_cost: float = 0.0
    driver_cost: float = 0.0
    total_reward: float = 0.0

    @property
    def tcop(self) -> float:
        return self.energy_cost + self.driver_cost

    @property
    def mean_speed(self) -> float:
        return self.distance / self.duration if self.duration > 0 else 0.0

    @property
    def reached_target(self) -> bool:
        return self.cause == "target"

    @property
    def hazard(self) -> bool:
        return self.cause in ("collision", "off_road")


# -------------------------------------------------------------------- env

class DrivingEnv:
    """Discrete-action driving task over the highway simulator."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.sim = Simulator(cfg.env, cfg.traffic)
        self.ctl = cfg.controller
        self.arch = cfg.env.architecture
        self.tcop_params = tcop_params_from(cfg.reward)
        self.reward_fn = make_reward_fn(cfg.reward)
        self.n_actions = n_actions(self.arch, self.ctl)
        self.obs_dim = observation_dim(cfg.env.n_cars)
        self.window_substeps = int(round(DECISION_PERIOD_S / cfg.env.substep_dt))
        self.lane_window_substeps = int(round(cfg.controller.lane_change_duration_s
                                              / cfg.env.substep_dt))
        self.acc = AccState(self.ctl.initial_desired_speed, self.ctl.initial_time_gap)
        self.plan: Optional[LaneChangePlan] = None
        self.steps = 0
        self.finished = True
        self.outcome = EpisodeOutcome()
        self.episode_seed: Optional[int] = None
        self.trace: Optional[List[tuple]] = None

    # lifecycle ----------------------------------------------------------

    def set_stage(self, stage: CurriculumStage) -> None:
        """Swap the active curriculum stage; a no-op for fixed reward kinds."""
        self.reward_fn = make_reward_fn(self.cfg.reward, stage)

    def reset(self, seed: int) -> np.ndarray:
        self.sim.reset(seed)
        self.episode_seed = seed
        self.acc = AccState(self.ctl.initial_desired_speed, self.ctl.initial_time_gap)
        self.plan = None
        self.steps = 0
        self.finished = False
        self.outcome = EpisodeOutcome()
        self.sim.set_ego_indicators(False, False)
        if self.trace is not None:
            self.trace.clear()
        return self._observe()

    def start_trace(self) -> None:
        self.trace = []

    def _observe(self) -> np.ndarray:
        vy = 0.0
        if self.plan is not None and self.plan.active:
            vy = float(np.sign(self.plan.rate))
        return build_observation(self.sim, self.cfg.env.include_d_lead, vy)

    def current_observation(self) -> np.ndarray:
        """The observation for the present state, e.g. after a state restore."""
        return self._observe()

    # stepping -----------------------------------------------------------

    def step(self, action: int) -> Tuple[np.ndarray, float, bool, bool, StepSummary]:
        if self.finished:
            raise RuntimeError("episode is over; call reset() first")
        if self.arch == "hierarchical":
            summary = self._step_hierarchical(int(action))
        else:
            summary = self._step_baseline(int(action))
        reward = self.reward_fn(summary)
        self.steps += 1
        terminated = summary.flags.terminal
        truncated = (not terminated) and self.steps >= self.cfg.env.max_rl_steps
        self._accumulate(summary, reward, terminated)
        self.finished = terminated or truncated
        if self.finished and self.outcome.cause == "running":
            self.outcome.cause = self.sim.term_cause if terminated else "truncated"
        return self._observe(), reward, terminated, truncated, summary

    def _step_hierarchical(self, action: int) -> StepSummary:
        cmd = decode_hierarchical(action, self.ctl)
        started = False
        window = self.window_substeps
        if cmd.kind == "gap":
            self.acc.time_gap = cmd.value
        elif cmd.kind == "speed":
            v0 = self.acc.desired_speed + cmd.value
            self.acc.desired_speed = min(max(v0, 0.0), self.cfg.env.ego_max_speed)
        elif cmd.kind == "lane":
            self.plan = start_lane_change(int(self.sim.lane[EGO]), int(cmd.value),
                                          self.cfg.env.lane_width,
                                          self.cfg.env.substep_dt, self.ctl)
            self.sim.set_ego_indicators(cmd.value > 0, cmd.value < 0)
            started = True
            window = self.lane_window_substeps
        summary = self._run_window(action, window, use_acc=True)
        if self.plan is not None and not self.plan.active:
            self.plan = None
            self.sim.set_ego_indicators(False, False)
        return self._flag_started(summary, started)

    def _step_baseline(self, action: int) -> StepSummary:
        cmd = decode_baseline(action, self.ctl)
        started = False
        if cmd.lateral != 0:
            if self.plan is None:
                self.plan = start_lane_change(int(self.sim.lane[EGO]), cmd.lateral,
                                              self.cfg.env.lane_width,
                                              self.cfg.env.substep_dt, self.ctl)
                started = True
            elif cmd.lateral != self.plan.direction:
                self.plan = reverse_lane_change(self.plan, float(self.sim.y[EGO]),
                                                self.cfg.env.lane_width,
                                                self.cfg.env.substep_dt, self.ctl)
                started = self.plan is not None
            # same direction while in flight: continuation, nothing new starts
        if self.plan is not None:
            self.sim.set_ego_indicators(self.plan.direction > 0, self.plan.direction < 0)
        accel = baseline_accels(cmd.speed_delta, DECISION_PERIOD_S)
        summary = self._run_window(action, self.window_substeps, use_acc=False,
                                   fixed_accel=accel)
        if self.plan is not None and not self.plan.active:
            self.plan = None
            self.sim.set_ego_indicators(False, False)
        return self._flag_started(summary, started)

    @staticmethod
    def _flag_started(summary: StepSummary, started: bool) -> StepSummary:
        summary.flags.lane_change_started = started
        return summary

    def _run_window(self, action: int, n_substeps: int, use_acc: bool,
                    fixed_accel: float = 0.0) -> StepSummary:
        sim = self.sim
        dt = self.cfg.env.substep_dt
        v_start = float(sim.v[EGO])
        x_start = float(sim.x[EGO])
        flags = EventFlags()
        executed = 0
        for k in range(n_substeps):
            if use_acc:
                lead = sim.leader_of_ego(self.cfg.env.sensor_range)
                accel = acc_track(self.acc, float(sim.v[EGO]), lead, self.ctl)
            else:
                accel = fixed_accel
            rate = 0.0
            if self.plan is not None and self.plan.active:
                rate = self.plan.next_rate(float(sim.y[EGO]), dt)
            f = sim.substep(accel, rate)
            executed += 1
            if self.plan is not None and not self.plan.active and not sim.done \
                    and 0 <= self.plan.target_lane < self.cfg.env.n_lanes:
                # land exactly on the lane centre; the ramp's float residue
                # must not leak into later geometry
                sim.y[EGO] = self.plan.target_y
                sim.lane[EGO] = self.plan.target_lane
            flags = flags.merge(f)
            if self.trace is not None:
                self._record(action if k == 0 else None, accel, rate, f)
            if f.terminal:
                break
        dt_elapsed = executed * dt
        dist = float(sim.x[EGO]) - x_start
        v_t = float(sim.v[EGO])
        return StepSummary(
            v_t=v_t,
            mean_v=dist / dt_elapsed,
            mean_a=(v_t - v_start) / dt_elapsed,
            dt=dt_elapsed,
            dist=dist,
            flags=flags,
            t_total=sim.time if flags.target_reached else None,
        )

    def _accumulate(self, s: StepSummary, reward: float, terminated: bool) -> None:
        out = self.outcome
        e = energy_step(s.mean_v, s.mean_a, s.dt, self.tcop_params)
        out.steps += 1
        out.duration += s.dt
        out.distance += s.dist
        out.energy_kwh += e
        out.energy_cost += self.tcop_params.C_el * e
        out.driver_cost += self.tcop_params.C_dr * s.dt / 3600.0
        out.total_reward += reward

    # trace --------------------------------------------------------------

    def _record(self, action: Optional[int], accel: float, rate: float,
                f: EventFlags) -> None:
        row = [repr(self.sim.time), str(self.steps),
               "" if action is None else str(action)]
        for i in range(self.sim.n + 1):
            row.extend((repr(float(self.sim.x[i])), repr(float(self.sim.y[i])),
                        repr(float(self.sim.v[i])), str(int(self.sim.lane[i]))))
        row.extend(str(int(b)) for b in
                   (f.collision, f.near_collision, f.off_road, f.target_reached))
        self.trace.append(tuple(row))

    # state i/o ----------------------------------------------------------

    def get_state(self) -> dict:
        """JSON-ready snapshot allowing bit-exact resume, mid-episode included."""
        sim_state = self.sim.get_state()
        for key in ("x", "y", "v", "lane", "v_des", "pending_dir",
                    "ind_left", "ind_right"):
            sim_state[key] = sim_state[key].tolist()
        return {
            "sim": sim_state,
            "acc": [self.acc.desired_speed, self.acc.time_gap],
            "plan": None if self.plan is None else asdict(self.plan),
            "steps": self.steps,
            "finished": self.finished,
            "episode_seed": self.episode_seed,
            "outcome": asdict(self.outcome),
        }

    def set_state(self, state: dict) -> None:
        sim_state = dict(state["sim"])
        sim_state["x"] = np.asarray(sim_state["x"], dtype=float)
        sim_state["y"] = np.asarray(sim_state["y"], dtype=float)
        sim_state["v"] = np.asarray(sim_state["v"], dtype=float)
        sim_state["v_des"] = np.asarray(sim_state["v_des"], dtype=float)
        sim_state["lane"] = np.asarray(sim_state["lane"], dtype=np.int64)
        sim_state["pending_dir"] = np.asarray(sim_state["pending_dir"], dtype=np.int64)
        sim_state["ind_left"] = np.asarray(sim_state["ind_left"], dtype=bool)
        sim_state["ind_right"] = np.asarray(sim_state["ind_right"], dtype=bool)
        self.sim.set_state(sim_state)
        self.acc = AccState(*state["acc"])
        self.plan = None if state["plan"] is None else LaneChangePlan(**state["plan"])
        self.steps = int(state["steps"])
        self.finished = bool(state["finished"])
        self.episode_seed = state["episode_seed"]
        self.outcome = EpisodeOutcome(**state["outcome"])


def make_env(cfg: RunConfig) -> DrivingEnv:
    return DrivingEnv(cfg)
