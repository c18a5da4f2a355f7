"""Training runs: the interaction loop, curriculum staging and artifacts.

A run covers one or more seeds. Each seed writes its own directory with
a learning curve (one row per finished episode), checkpoints and
metadata; optionally a per-step audit log from which every reward can be
recomputed offline. Runs are deterministic given (config, seed), and a
checkpoint taken mid-run restores bit-identical continuation, including
the environment mid-episode.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__ as package_version
from .agents import make_agent
from .config import (ConfigError, RunConfig, canonical_json, config_from_dict,
                     config_hash, config_to_dict)
from .env import make_env
from .rewards import CurriculumStage

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
DEFAULT_STAGE_BOUNDARIES = (700_000, 1_200_000)

CURVE_HEADER = "step,episode_return,episode_length,stage"
AUDIT_HEADER = ("step,stage,normalized,reward,v_t,mean_v,mean_a,dt,dist,"
                "collision,near_collision,off_road,target_reached,"
                "lane_change_started,t_total")


def curriculum_stage(step: int, boundaries: Sequence[int] = DEFAULT_STAGE_BOUNDARIES) -> int:
    """Stage index (1..3) active at a given global env step."""
    if step < boundaries[0]:
        return 1
    if step < boundaries[1]:
        return 2
    return 3


def scaled_steps(cfg: RunConfig) -> Tuple[int, Tuple[int, int]]:
    """Total steps and stage boundaries after the desk-scale factor."""
    s = cfg.training.scale
    total = max(0, int(round(cfg.training.total_steps * s)))
    b = tuple(int(round(x * s)) for x in cfg.training.stage_boundaries)
    return total, b


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path, agent, cfg: RunConfig, env_state: Optional[dict] = None,
                    loop_state: Optional[dict] = None,
                    include_buffer: bool = False) -> None:
    state = agent.get_state(include_buffer=include_buffer)
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "package_version": package_version,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "agent_meta": state["meta"],
        "env_state": env_state,
        "loop_state": loop_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, meta=np.asarray(json.dumps(meta)), **state["arrays"])


def load_checkpoint(path) -> dict:
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unsupported checkpoint format "
                              f"{meta.get('format_version')!r}")
        arrays = {k: z[k] for k in z.files if k != "meta"}
    return {"meta": meta, "arrays": arrays}


def agent_from_checkpoint(ck: dict):
    """Rebuild (agent, config) from a loaded checkpoint dict."""
    cfg = config_from_dict(ck["meta"]["config"])
    am = ck["meta"]["agent_meta"]
    agent = make_agent(am["algorithm"], int(am["obs_dim"]), int(am["n_actions"]),
                       cfg.agent, seed=0, total_steps=int(am["total_steps"]))
    agent.set_state({"meta": am, "arrays": ck["arrays"]})
    return agent, cfg


# ----------------------------------------------------------------- staging

def _active_stage(cfg: RunConfig, step: int, boundaries) -> Optional[CurriculumStage]:
    """Which reward stage applies at this step, or None for fixed kinds."""
    if cfg.reward.kind not in ("curriculum", "curriculum_normalized"):
        return None
    norm = cfg.reward.kind == "curriculum_normalized"
    if cfg.training.fixed_stage is not None:
        return CurriculumStage(cfg.training.fixed_stage, norm)
    if cfg.training.curriculum:
        return CurriculumStage(curriculum_stage(step, boundaries), norm)
    return CurriculumStage(3, norm)


# ---------------------------------------------------------------- artifacts

@dataclass
class SeedArtifacts:
    seed: int
    dir: str
    curve_path: str
    final_checkpoint: str
    stage_checkpoints: Dict[str, str] = field(default_factory=dict)
    curve: Optional[List[tuple]] = None


@dataclass
class RunArtifacts:
    run_dir: str
    config_hash: str
    seeds: List[int]
    per_seed: List[SeedArtifacts]


def _write_curve(path: Path, rows: List[tuple]) -> None:
    lines = [CURVE_HEADER]
    for step, ret, length, stage in rows:
        lines.append(f"{step},{repr(float(ret))},{length},{stage}")
    path.write_text("\n".join(lines) + "\n")


def read_curve(path) -> List[tuple]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        step, ret, length, stage = line.split(",")
        rows.append((int(step), float(ret), int(length), int(stage)))
    return rows


def _write_audit(path: Path, rows: List[tuple]) -> None:
    lines = [AUDIT_HEADER]
    for r in rows:
        lines.append(",".join(r))
    path.write_text("\n".join(lines) + "\n")


# -------------------------------------------------------------- single seed

def train_single_seed(cfg: RunConfig, seed: int, seed_dir,
                      resume_state: Optional[dict] = None,
                      stop_after: Optional[int] = None) -> SeedArtifacts:
    """Run one seed, writing artifacts under seed_dir.

    stop_after cuts the run short at that global step (an interruption);
    the final checkpoint then carries resume state from which
    resume_single_seed continues exactly as if never stopped.
    """
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    total, boundaries = scaled_steps(cfg)
    end_step = total if stop_after is None else min(int(stop_after), total)
    env = make_env(cfg)
    ss = np.random.SeedSequence(seed)
    agent_ss, ep_ss = ss.spawn(2)
    agent = make_agent(cfg.agent.algorithm, env.obs_dim, env.n_actions, cfg.agent,
                       seed=agent_ss, total_steps=total)
    ep_rng = np.random.default_rng(ep_ss)
    curve: List[tuple] = []
    audit: Optional[List[tuple]] = [] if cfg.training.audit_log else None
    started_at = time.time()

    stage: Optional[CurriculumStage] = None
    stage_checkpoints: Dict[str, str] = {}

    def apply_stage(step):
        nonlocal stage
        want = _active_stage(cfg, step, boundaries)
        if want is not None and want != stage:
            env.set_stage(want)
            stage = want
            log.info("seed %d: stage %d active from step %d", seed, want.index, step)

    start_step = 0
    if resume_state is None:
        apply_stage(0)
        obs = env.reset(int(ep_rng.integers(2 ** 63)))
        ep_return, ep_length = 0.0, 0
    else:
        loop = resume_state["loop_state"]
        start_step = int(loop["global_step"])
        agent_state = resume_state["agent_state"]
        agent.set_state(agent_state)
        env.set_state(resume_state["env_state"])
        ep_rng.bit_generator.state = loop["ep_rng_state"]
        curve = [tuple(r) for r in loop["curve"]]
        ep_return = float(loop["ep_return"])
        ep_length = int(loop["ep_length"])
        apply_stage(start_step)
        obs = env.current_observation()

    for step in range(start_step, end_step):
        apply_stage(step)
        action = agent.act(obs)
        next_obs, reward, terminated, truncated, summary = env.step(action)
        agent.observe(obs, action, reward, next_obs, terminated, truncated)
        ep_return += reward
        ep_length += 1
        if audit is not None:
            f = summary.flags
            audit.append((
                str(step), str(stage.index if stage else 0),
                str(int(stage.normalized)) if stage else "0",
                repr(float(reward)), repr(summary.v_t), repr(summary.mean_v),
                repr(summary.mean_a), repr(summary.dt), repr(summary.dist),
                str(int(f.collision)), str(int(f.near_collision)),
                str(int(f.off_road)), str(int(f.target_reached)),
                str(int(f.lane_change_started)),
                "" if summary.t_total is None else repr(summary.t_total)))
        if terminated or truncated:
            curve.append((step + 1, ep_return, ep_length,
                          stage.index if stage else 0))
            obs = env.reset(int(ep_rng.integers(2 ** 63)))
            ep_return, ep_length = 0.0, 0
        else:
            obs = next_obs
        done_steps = step + 1
        if cfg.training.curriculum and cfg.reward.kind.startswith("curriculum") \
                and done_steps in boundaries and done_steps < total:
            name = f"ckpt_stage{curriculum_stage(step, boundaries)}.npz"
            p = seed_dir / name
            save_checkpoint(p, agent, cfg)
            stage_checkpoints[name] = str(p)

    final_path = seed_dir / "final.npz"
    save_checkpoint(final_path, agent, cfg,
                    env_state=env.get_state(),
                    loop_state={
                        "seed": seed,
                        "global_step": end_step,
                        "ep_rng_state": ep_rng.bit_generator.state,
                        "curve": [list(r) for r in curve],
                        "ep_return": ep_return,
                        "ep_length": ep_length,
                    },
                    include_buffer=cfg.training.checkpoint_buffer)
    curve_path = seed_dir / "curve.csv"
    _write_curve(curve_path, curve)
    if audit is not None:
        _write_audit(seed_dir / "audit.csv", audit)
    meta = {
        "seed": seed,
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "total_steps": total,
        "completed_steps": end_step,
        "stage_boundaries": list(boundaries),
        "package_version": package_version,
        "started_at": started_at,
        "finished_at": time.time(),
        "episodes": len(curve),
    }
    (seed_dir / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return SeedArtifacts(seed=seed, dir=str(seed_dir), curve_path=str(curve_path),
                         final_checkpoint=str(final_path),
                         stage_checkpoints=stage_checkpoints, curve=curve)


def resume_single_seed(cfg: RunConfig, checkpoint_path, seed_dir) -> SeedArtifacts:
    """Continue a run from a resume-capable checkpoint (exact continuation)."""
    ck = load_checkpoint(checkpoint_path)
    if ck["meta"]["config_hash"] != config_hash(cfg):
        raise ConfigError(
            f"checkpoint {checkpoint_path} was written by config "
            f"{ck['meta']['config_hash']}, current config is {config_hash(cfg)}")
    if ck["meta"]["env_state"] is None or ck["meta"]["loop_state"] is None:
        raise ConfigError(f"checkpoint {checkpoint_path} does not carry resume state")
    seed = int(ck["meta"]["loop_state"].get("seed", cfg.seed))
    resume_state = {
        "agent_state": {"meta": ck["meta"]["agent_meta"], "arrays": ck["arrays"]},
        "env_state": ck["meta"]["env_state"],
        "loop_state": ck["meta"]["loop_state"],
    }
    return train_single_seed(cfg, seed, seed_dir, resume_state=resume_state)


# ---------------------------------------------------------------- full runs

def _seed_job(args):
    cfg_dict, seed, seed_dir = args
    cfg = config_from_dict(cfg_dict)
    art = train_single_seed(cfg, seed, seed_dir)
    art.curve = None    # keep the parent-process payload small
    return art


def run_training(cfg: RunConfig, out_root=None, run_id: Optional[str] = None) -> RunArtifacts:
    """Train cfg.training.n_seeds seeds and collect the artifacts."""
    h = config_hash(cfg)
    if run_id is None:
        run_id = time.strftime("%Y%m%d-%H%M%S") + "-" + h
    root = Path(out_root if out_root is not None else cfg.output_dir)
    run_dir = root / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(cfg.training.n_seeds)]
    jobs = [(config_to_dict(cfg), s, str(run_dir / f"seed_{s}")) for s in seeds]
    per_seed: List[SeedArtifacts]
    if cfg.training.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.training.workers) as ex:
            per_seed = list(ex.map(_seed_job, jobs))
    else:
        per_seed = [train_single_seed(cfg, s, d) for _, s, d in jobs]
    (run_dir / "config.json").write_text(canonical_json(cfg) + "\n")
    run_meta = {
        "config_hash": h,
        "seeds": seeds,
        "package_version": package_version,
        "run_id": run_id,
    }
    (run_dir / "run.json").write_text(json.dumps(run_meta, indent=2) + "\n")
    return RunArtifacts(run_dir=str(run_dir), config_hash=h, seeds=seeds,
                        per_seed=per_seed)


# ------------------------------------------------------------------ curves

def smooth_returns(rows: List[tuple], window: int = 100) -> List[float]:
    """Trailing-window mean of episode returns, one value per episode."""
    out = []
    acc = 0.0
    returns = [r[1] for r in rows]
    for i, r in enumerate(returns):
        acc += r
        if i >= window:
            acc -= returns[i - window]
        out.append(acc / min(i + 1, window))
    return out


def aggregate_curves(curves: List[List[tuple]], bin_width: int,
                     total_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Mean episode return per aligned step bin, averaged across seeds.

    Bin edges are deterministic: [0, bin_width, 2*bin_width, ...]. A
    seed contributes a bin mean only where it has episodes; bins empty
    for every seed yield NaN.
    """
    edges = np.arange(0, total_steps + bin_width, bin_width)
    n_bins = len(edges) - 1
    per_seed = np.full((len(curves), n_bins), np.nan)
    for i, rows in enumerate(curves):
        if not rows:
            continue
        steps = np.array([r[0] for r in rows])
        rets = np.array([r[1] for r in rows])
        which = np.clip(np.searchsorted(edges, steps, side="right") - 1, 0, n_bins - 1)
        for b in range(n_bins):
            m = which == b
            if m.any():
                per_seed[i, b] = rets[m].mean()
    counts = np.sum(~np.isnan(per_seed), axis=0)
    sums = np.nansum(per_seed, axis=0)
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return edges[:-1], mean
