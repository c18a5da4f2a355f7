"""Evaluation: greedy rollouts, outcome metrics and a rule-based yardstick.

The metrics table reports episode outcome percentages and trip
statistics including the monetary operating cost (electricity plus
driver time) both per episode and per metre driven. The same table can
be produced for a trained policy or for the truck driven by the
surrounding-traffic rules, which is the sanity anchor any learned
policy should beat.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .controllers import start_lane_change
from .env import DrivingEnv, EpisodeOutcome, make_env
from .rewards import StepSummary, energy_step, tcop_params_from
from .sim import EGO, EventFlags, Simulator
from .traffic import krauss_next_speed, lane_change_decision
from .training import agent_from_checkpoint, load_checkpoint


@dataclass
class MetricsTable:
    reached_target_pct: float = 0.0
    hazard_pct: float = 0.0
    timeout_pct: float = 0.0
    avg_speed: float = 0.0
    avg_distance: float = 0.0
    avg_steps: float = 0.0
    avg_energy_cost: float = 0.0
    avg_driver_cost: float = 0.0
    avg_tcop: float = 0.0
    energy_cost_per_m: float = 0.0
    driver_cost_per_m: float = 0.0
    tcop_per_m: float = 0.0
    n_episodes: int = 0

    ROWS = (
        ("Reached target successfully [%]", "reached_target_pct", "{:.1f}"),
        ("Terminated by collision or driving outside road [%]", "hazard_pct", "{:.1f}"),
        ("Driven without hazard, but not reached target in max steps [%]",
         "timeout_pct", "{:.1f}"),
        ("Average speed [m/s]", "avg_speed", "{:.2f}"),
        ("Average distance travelled [m]", "avg_distance", "{:.1f}"),
        ("Average executed steps", "avg_steps", "{:.1f}"),
        ("Average energy cost [EUR]", "avg_energy_cost", "{:.3f}"),
        ("Average driver cost [EUR]", "avg_driver_cost", "{:.3f}"),
        ("Average total cost of operation [EUR]", "avg_tcop", "{:.3f}"),
        ("Average energy cost per meter [EUR/m]", "energy_cost_per_m", "{:.6f}"),
        ("Average driver cost per meter [EUR/m]", "driver_cost_per_m", "{:.6f}"),
        ("Average total cost of operation per meter [EUR/m]", "tcop_per_m", "{:.6f}"),
    )

    def to_text(self) -> str:
        width = max(len(label) for label, _, _ in self.ROWS)
        lines = []
        for label, attr, fmt in self.ROWS:
            lines.append(f"{label:<{width}}  {fmt.format(getattr(self, attr))}")
        lines.append(f"{'Episodes':<{width}}  {self.n_episodes}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        names = [f.name for f in fields(self)]
        values = [repr(getattr(self, n)) for n in names]
        return ",".join(names) + "\n" + ",".join(values) + "\n"


def table_from_outcomes(outcomes: Sequence[EpisodeOutcome]) -> MetricsTable:
    n = len(outcomes)
    if n == 0:
        raise ValueError("no episodes to tabulate")
    total_dist = sum(o.distance for o in outcomes)
    total_energy = sum(o.energy_cost for o in outcomes)
    total_driver = sum(o.driver_cost for o in outcomes)
    dist_div = total_dist if total_dist > 0 else np.inf
    return MetricsTable(
        reached_target_pct=100.0 * sum(o.reached_target for o in outcomes) / n,
        hazard_pct=100.0 * sum(o.hazard for o in outcomes) / n,
        timeout_pct=100.0 * sum(o.cause == "truncated" for o in outcomes) / n,
        avg_speed=float(np.mean([o.mean_speed for o in outcomes])),
        avg_distance=total_dist / n,
        avg_steps=float(np.mean([o.steps for o in outcomes])),
        avg_energy_cost=total_energy / n,
        avg_driver_cost=total_driver / n,
        avg_tcop=(total_energy + total_driver) / n,
        energy_cost_per_m=total_energy / dist_div,
        driver_cost_per_m=total_driver / dist_div,
        tcop_per_m=(total_energy + total_driver) / dist_div,
        n_episodes=n,
    )


def aggregate(tables: Sequence[MetricsTable]) -> MetricsTable:
    """Unweighted mean of each metric across tables; episode counts add up."""
    if not tables:
        raise ValueError("nothing to aggregate")
    out = MetricsTable()
    for f in fields(MetricsTable):
        if f.name == "n_episodes":
            setattr(out, f.name, sum(t.n_episodes for t in tables))
        else:
            setattr(out, f.name, float(np.mean([getattr(t, f.name) for t in tables])))
    return out


class ConstantAgent:
    """Scripted policy that always plays one action; handy as a probe."""

    def __init__(self, action: int):
        self.action = action

    def act(self, obs, greedy: bool = False) -> int:
        return self.action


def run_validation(agent, cfg: RunConfig, n_episodes: int, seed: int,
                   env: Optional[DrivingEnv] = None,
                   collect_traces: int = 0
                   ) -> Tuple[MetricsTable, List[EpisodeOutcome], List[list]]:
    """Greedy evaluation over n_episodes fresh episode seeds.

    Returns the table, the raw outcomes, and recorded traces for the
    first collect_traces episodes (each a list of trace rows).
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    if env is None:
        env = make_env(cfg)
    rng = np.random.default_rng(seed)
    outcomes: List[EpisodeOutcome] = []
    traces: List[list] = []
    for ep in range(n_episodes):
        tracing = ep < collect_traces
        if tracing:
            env.start_trace()
        else:
            env.trace = None
        ep_seed = int(rng.integers(2 ** 63))
        obs = env.reset(ep_seed)
        while not env.finished:
            action = agent.act(obs, greedy=True)
            obs, _, _, _, _ = env.step(action)
        outcomes.append(env.outcome)
        if tracing:
            traces.append((ep_seed, list(env.trace)))
    return table_from_outcomes(outcomes), outcomes, traces


def evaluate_checkpoint(checkpoint_path, n_episodes: int, base_seed: int,
                        n_seeds: int = 1, cfg: Optional[RunConfig] = None
                        ) -> Tuple[MetricsTable, List[MetricsTable]]:
    """Validate a stored policy across n_seeds evaluation seeds.

    cfg overrides the checkpoint-embedded config (it must describe the
    same observation and action interface).
    """
    ck = load_checkpoint(checkpoint_path)
    agent, ck_cfg = agent_from_checkpoint(ck)
    use = cfg if cfg is not None else ck_cfg
    probe = make_env(use)
    if probe.obs_dim != agent.obs_dim or probe.n_actions != agent.n_actions:
        raise ValueError(
            f"config/checkpoint mismatch: env is {probe.obs_dim} obs dims / "
            f"{probe.n_actions} actions, checkpoint expects {agent.obs_dim} / "
            f"{agent.n_actions}")
    tables = []
    for j in range(n_seeds):
        t, _, _ = run_validation(agent, use, n_episodes, base_seed + j, env=probe)
        tables.append(t)
    return aggregate(tables), tables


# ------------------------------------------------------------ rule-based ego

def _rule_based_episode(cfg: RunConfig, seed: int) -> EpisodeOutcome:
    env_cfg = cfg.env
    sim = Simulator(env_cfg, cfg.traffic)
    sim.reset(seed)
    tcop = tcop_params_from(cfg.reward)
    dt = env_cfg.substep_dt
    window = int(round(1.0 / dt))
    outcome = EpisodeOutcome()
    plan = None
    while True:
        if plan is None:
            lane = int(sim.lane[EGO])
            own = sim._lane_view(EGO, lane)
            left = sim._lane_view(EGO, lane + 1) if lane + 1 < env_cfg.n_lanes else None
            right = sim._lane_view(EGO, lane - 1) if lane - 1 >= 0 else None
            d = lane_change_decision(float(sim.v[EGO]), env_cfg.ego_max_speed, lane,
                                     env_cfg.n_lanes, own, left, right, sim.kp, sim.lp)
            if d != 0:
                plan = start_lane_change(lane, d, env_cfg.lane_width, dt, cfg.controller)
                sim.set_ego_indicators(d > 0, d < 0)
        v_start = float(sim.v[EGO])
        x_start = float(sim.x[EGO])
        flags = EventFlags()
        executed = 0
        for _ in range(window):
            lead = sim.leader_of_ego(env_cfg.sensor_range)
            gap, v_lead = (np.inf, 0.0) if lead is None else lead
            noise = float(sim.rng.random())
            v_next = krauss_next_speed(float(sim.v[EGO]), v_lead, gap,
                                       env_cfg.ego_max_speed, sim.kp, dt, noise)
            accel = (float(v_next) - float(sim.v[EGO])) / dt
            rate = 0.0
            if plan is not None and plan.active:
                rate = plan.next_rate(float(sim.y[EGO]), dt)
            f = sim.substep(accel, rate)
            executed += 1
            if plan is not None and not plan.active:
                if not sim.done and 0 <= plan.target_lane < env_cfg.n_lanes:
                    sim.y[EGO] = plan.target_y
                    sim.lane[EGO] = plan.target_lane
                plan = None
                sim.set_ego_indicators(False, False)
            flags = flags.merge(f)
            if f.terminal:
                break
        dt_elapsed = executed * dt
        dist = float(sim.x[EGO]) - x_start
        v_t = float(sim.v[EGO])
        summary = StepSummary(v_t=v_t, mean_v=dist / dt_elapsed,
                              mean_a=(v_t - v_start) / dt_elapsed,
                              dt=dt_elapsed, dist=dist, flags=flags,
                              t_total=sim.time if flags.target_reached else None)
        e = energy_step(summary.mean_v, summary.mean_a, summary.dt, tcop)
        outcome.steps += 1
        outcome.duration += summary.dt
        outcome.distance += summary.dist
        outcome.energy_kwh += e
        outcome.energy_cost += tcop.C_el * e
        outcome.driver_cost += tcop.C_dr * summary.dt / 3600.0
        if flags.terminal:
            outcome.cause = sim.term_cause
            break
        if outcome.steps >= env_cfg.max_rl_steps:
            outcome.cause = "truncated"
            break
    return outcome


def run_rule_based_ego(cfg: RunConfig, n_episodes: int, seed: int
                       ) -> Tuple[MetricsTable, List[EpisodeOutcome]]:
    """Drive the truck with the surrounding-traffic rules and tabulate.

    The ego follows the same stochastic safe-speed and lane-change logic
    as the cars (desired speed = its own cap), but keeps the truck's
    gradual lateral actuation. No learning, no reward; pure cost audit.
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    rng = np.random.default_rng(seed)
    outcomes = [_rule_based_episode(cfg, int(rng.integers(2 ** 63)))
                for _ in range(n_episodes)]
    return table_from_outcomes(outcomes), outcomes


def write_table(table: MetricsTable, out_dir, stem: str) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt = out_dir / f"{stem}.txt"
    csv = out_dir / f"{stem}.csv"
    txt.write_text(table.to_text() + "\n")
    csv.write_text(table.to_csv())
    return txt, csv
