"""Step rewards: simple shaping, operating-cost based, and a staged curriculum.

The operating-cost rewards charge each decision for the electricity it
burned and the driver time it spent, in currency units, so an episode's
return is (minus) what the trip actually cost, plus hazard penalties and
a completion payment. The staged variants introduce those cost terms one
at a time, optionally normalising per metre driven so standing still is
never the cheap option.

All reward functions are pure: StepSummary in, float out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .config import RewardSection
from .sim import EventFlags


@dataclass
class StepSummary:
    """What one RL decision did to the world, as billed by the rewards.

    mean_v and mean_a are averaged over the executed substeps (mean_v is
    exactly dist/dt); dt is the elapsed time, shorter than the nominal
    window when a terminal event cut the step short. t_total is the
    episode duration in seconds, set only on the step that reached the
    target.
    """
    v_t: float                    # ego speed at the end of the step, m/s
    mean_v: float                 # average speed over the step, m/s
    mean_a: float                 # average acceleration over the step, m/s^2
    dt: float                     # elapsed time, s
    dist: float                   # distance covered, m
    flags: EventFlags
    t_total: Optional[float] = None


@dataclass
class BasicRewardParams:
    max_v: float = 25.0
    P_l: float = 1.0
    P_c: float = 10.0
    P_nc: float = 10.0
    P_o: float = 10.0
    R_tar: float = 100.0


@dataclass
class TcopParams:
    """Cost model constants: penalties and payments in currency units."""
    P_l: float = 0.1
    P_c: float = 1000.0
    P_nc: float = 1000.0
    P_o: float = 1000.0
    R_tar: float = 2.78
    W_tar: float = 1.0
    C_el: float = 0.5        # currency per kWh
    C_dr: float = 50.0       # currency per hour of driver time
    dd_floor: float = 0.1    # m, floor for per-metre normalisation
    mass: float = 40000.0    # kg
    C_d: float = 0.36        # aerodynamic drag coefficient
    A_f: float = 10.0        # frontal area, m^2
    rho_air: float = 1.225   # kg/m^3
    g: float = 9.81          # m/s^2
    C_r: float = 0.005       # rolling resistance coefficient
    slope_pct: float = 0.0   # road slope in percent


@dataclass(frozen=True)
class CurriculumStage:
    index: int          # 1, 2 or 3
    normalized: bool = False

    def __post_init__(self):
        if self.index not in (1, 2, 3):
            raise ValueError(f"curriculum stage must be 1, 2 or 3, got {self.index}")


def basic_params_from(section: RewardSection) -> BasicRewardParams:
    return BasicRewardParams(section.max_v, section.basic_P_l, section.basic_P_c,
                             section.basic_P_nc, section.basic_P_o, section.basic_R_tar)


def tcop_params_from(section: RewardSection) -> TcopParams:
    return TcopParams(section.P_l, section.P_c, section.P_nc, section.P_o,
                      section.R_tar, section.W_tar, section.C_el, section.C_dr,
                      section.dd_floor, section.mass, section.C_d, section.A_f,
                      section.rho_air, section.g, section.C_r, section.slope_pct)


# ------------------------------------------------------------------ physics

def traction_force(v: float, a: float, p: TcopParams) -> float:
    """Force at the wheels: inertia + aero drag + rolling + grade, N."""
    grade = math.atan(p.slope_pct / 100.0)
    return (p.mass * a
            + 0.5 * p.C_d * p.A_f * p.rho_air * v * v
            + p.mass * p.g * p.C_r
            + p.mass * p.g * math.sin(grade))


def energy_step(v: float, a: float, dt: float, p: TcopParams) -> float:
    """Electrical energy drawn over dt at operating point (v, a), in kWh.

    Negative traction power (braking) is floored at zero: no recuperation
    is credited, matching a conservatively billed drivetrain.
    """
    power = traction_force(v, a, p) * v     # W
    return max(0.0, power * dt) / 3.6e6     # J -> kWh


# ------------------------------------------------------------------ rewards

def _hazard_penalty(flags: EventFlags, p_c: float, p_nc: float, p_o: float) -> float:
    return (p_c * flags.collision + p_nc * flags.near_collision
            + p_o * flags.off_road)


def basic_reward(s: StepSummary, p: BasicRewardParams) -> float:
    """Speed-seeking shaping with flat hazard penalties.

    The completion payment is spread by trip duration (R_tar / T_total)
    so faster trips concentrate it into fewer steps.
    """
    r = s.v_t / p.max_v
    r -= p.P_l * s.flags.lane_change_started
    r -= _hazard_penalty(s.flags, p.P_c, p.P_nc, p.P_o)
    if s.flags.target_reached:
        r += p.R_tar / s.t_total
    return r


def tcop_reward(s: StepSummary, p: TcopParams, weighted: bool = True) -> float:
    """Operating-cost reward: energy + driver time + hazards, plus completion.

    With weighted=True the completion payment is W_tar * R_tar and a small
    lane-change penalty P_l applies; with weighted=False the payment is the
    plain R_tar and lane changes are free (costs alone discourage them).
    """
    e = energy_step(s.mean_v, s.mean_a, s.dt, p)
    r = -p.C_el * e - p.C_dr * s.dt / 3600.0
    r -= _hazard_penalty(s.flags, p.P_c, p.P_nc, p.P_o)
    if weighted:
        r -= p.P_l * s.flags.lane_change_started
        if s.flags.target_reached:
            r += p.W_tar * p.R_tar
    elif s.flags.target_reached:
        r += p.R_tar
    return r


def curriculum_reward(stage: CurriculumStage, s: StepSummary, p: TcopParams) -> float:
    """Staged operating-cost reward.

    Stage 1 bills hazards and driver time; stage 2 adds energy; stage 3
    adds the completion payment, at which point the unnormalised reward
    equals tcop_reward(weighted=False). Normalised stages divide the
    driver and energy terms by the distance covered (floored at dd_floor)
    so that cost is charged per metre of progress, not per second alive.
    """
    r = -_hazard_penalty(s.flags, p.P_c, p.P_nc, p.P_o)
    driver = p.C_dr * s.dt / 3600.0
    energy = p.C_el * energy_step(s.mean_v, s.mean_a, s.dt, p)
    denom = max(s.dist, p.dd_floor) if stage.normalized else 1.0
    r -= driver / denom
    if stage.index >= 2:
        r -= energy / denom
    if stage.index >= 3 and s.flags.target_reached:
        r += p.R_tar
    return r


def ideal_revenue(p: TcopParams, speed: float = 22.0, duration: float = 100.0,
                  profit_factor: float = 1.2) -> float:
    """Completion payment that covers a reference trip's cost plus margin.

    The reference trip holds `speed` for `duration` seconds on a flat,
    empty road; its energy and driver cost, marked up by profit_factor,
    is what finishing the route should pay.
    """
    energy = energy_step(speed, 0.0, duration, p)
    cost = p.C_el * energy + p.C_dr * duration / 3600.0
    return profit_factor * cost


def reward_components(section: RewardSection, s: StepSummary,
                      stage: Optional[CurriculumStage] = None) -> dict:
    """Additive breakdown of the configured reward for one step.

    The values sum to exactly what the corresponding reward function
    returns; used by the replay tool to print why a step earned what it
    did.
    """
    kind = section.kind
    out: dict = {}
    if kind == "basic":
        p = basic_params_from(section)
        out["speed"] = s.v_t / p.max_v
        out["lane_change"] = -p.P_l * s.flags.lane_change_started
        out["hazard"] = -_hazard_penalty(s.flags, p.P_c, p.P_nc, p.P_o)
        out["completion"] = p.R_tar / s.t_total if s.flags.target_reached else 0.0
        return out
    tp = tcop_params_from(section)
    driver = tp.C_dr * s.dt / 3600.0
    energy = tp.C_el * energy_step(s.mean_v, s.mean_a, s.dt, tp)
    if kind in ("curriculum", "curriculum_normalized"):
        norm = kind == "curriculum_normalized"
        st = CurriculumStage(3 if stage is None else stage.index, norm)
        denom = max(s.dist, tp.dd_floor) if st.normalized else 1.0
        out["driver"] = -driver / denom
        out["energy"] = -energy / denom if st.index >= 2 else 0.0
        out["hazard"] = -_hazard_penalty(s.flags, tp.P_c, tp.P_nc, tp.P_o)
        out["completion"] = (tp.R_tar if st.index >= 3 and s.flags.target_reached
                             else 0.0)
        return out
    weighted = kind == "tcop_weighted"
    out["energy"] = -energy
    out["driver"] = -driver
    out["lane_change"] = (-tp.P_l * s.flags.lane_change_started if weighted else 0.0)
    out["hazard"] = -_hazard_penalty(s.flags, tp.P_c, tp.P_nc, tp.P_o)
    paid = (tp.W_tar * tp.R_tar if weighted else tp.R_tar)
    out["completion"] = paid if s.flags.target_reached else 0.0
    return out


# ----------------------------------------------------------------- dispatch

RewardFn = Callable[[StepSummary], float]


def make_reward_fn(section: RewardSection, stage: Optional[CurriculumStage] = None) -> RewardFn:
    """Bind a reward kind from config to a StepSummary -> float callable.

    For the curriculum kinds, `stage` selects the active stage (defaults
    to the final stage, which is what evaluation of a finished model
    uses); training swaps the function at stage boundaries.
    """
    kind = section.kind
    if kind == "basic":
        bp = basic_params_from(section)
        return lambda s: basic_reward(s, bp)
    tp = tcop_params_from(section)
    if kind == "tcop_weighted":
        return lambda s: tcop_reward(s, tp, weighted=True)
    if kind == "tcop_plain":
        return lambda s: tcop_reward(s, tp, weighted=False)
    if kind in ("curriculum", "curriculum_normalized"):
        norm = kind == "curriculum_normalized"
        st = stage if stage is not None else CurriculumStage(3, norm)
        st = CurriculumStage(st.index, norm)
        return lambda s: curriculum_reward(st, s, tp)
    raise ValueError(f"unknown reward kind {kind!r}")
