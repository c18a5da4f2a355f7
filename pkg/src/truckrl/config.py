"""Run configuration: typed sections, JSON round-trip, stable hashing.

Config files are partial JSON documents merged over the defaults below.
Serialisation always writes the full document with sorted keys, and the
run hash is the sha256 of that canonical form, so two configs that differ
only in key order or in spelled-out defaults hash identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys, bad types or inconsistent settings."""


ARCHITECTURES = ("hierarchical", "baseline")
REWARD_KINDS = ("basic", "tcop_weighted", "tcop_plain", "curriculum", "curriculum_normalized")
ALGORITHMS = ("dqn", "a2c", "ppo")


@dataclass
class EnvSection:
    architecture: str = "hierarchical"
    include_d_lead: bool = True
    n_lanes: int = 3
    lane_width: float = 3.2
    road_length: float = 4000.0
    ego_start_x: float = 800.0
    ego_start_speed: float = 0.0
    target_x: float = 3000.0
    substep_dt: float = 0.1
    sensor_range: float = 200.0
    max_rl_steps: int = 500
    n_cars: int = 15
    car_speed_min: float = 15.0
    car_speed_max: float = 35.0
    ego_max_speed: float = 25.0
    ego_length: float = 16.0
    car_length: float = 5.0
    ego_width: float = 2.55
    car_width: float = 1.8
    min_init_gap: float = 10.0
    near_collision_gap: float = 2.0
    near_collision_ttc: float = 1.0


@dataclass
class TrafficSection:
    accel: float = 2.6
    decel: float = 4.5
    tau: float = 1.0
    sigma: float = 0.5
    politeness: float = 0.5
    advantage_threshold: float = 0.2
    safe_decel_limit: float = 4.0
    decision_period_s: float = 1.0


@dataclass
class ControllerSection:
    idm_a: float = 1.0
    idm_b: float = 2.0
    idm_s0: float = 2.0
    idm_delta: float = 4.0
    time_gaps: tuple = (1.0, 2.0, 3.0)
    initial_time_gap: float = 2.0
    initial_desired_speed: float = 25.0
    speed_step: float = 1.0
    accel_min: float = -4.0
    lateral_rate: float = 0.8
    lane_change_duration_s: float = 4.0


@dataclass
class RewardSection:
    kind: str = "basic"
    max_v: float = 25.0
    # simple shaping weights
    basic_P_l: float = 1.0
    basic_P_c: float = 10.0
    basic_P_nc: float = 10.0
    basic_P_o: float = 10.0
    basic_R_tar: float = 100.0
    # operating-cost weights (currency units)
    P_l: float = 0.1
    P_c: float = 1000.0
    P_nc: float = 1000.0
    P_o: float = 1000.0
    R_tar: float = 2.78
    W_tar: float = 1.0
    C_el: float = 0.5
    C_dr: float = 50.0
    dd_floor: float = 0.1
    # vehicle and road physics for the energy term
    mass: float = 40000.0
    C_d: float = 0.36
    A_f: float = 10.0
    rho_air: float = 1.225
    g: float = 9.81
    C_r: float = 0.005
    slope_pct: float = 0.0


@dataclass
class AgentSection:
    algorithm: str = "ppo"
    gamma: float = 0.99
    hidden_sizes: tuple = (64, 64)
    lr: float | None = None  # None -> per-algorithm default
    max_grad_norm: float | None = None
    ent_coef_start: float = 0.01
    ent_coef_end: float = 0.001
    # ppo
    ppo_rollout: int = 2048
    ppo_minibatch: int = 64
    ppo_epochs: int = 10
    ppo_clip: float = 0.2
    gae_lambda: float = 0.95
    adv_norm: bool | None = None  # None -> per-algorithm default
    # a2c
    a2c_rollout: int = 5
    # dqn
    dqn_buffer: int = 100_000
    dqn_batch: int = 32
    dqn_target_sync: int = 10_000
    dqn_train_freq: int = 4
    dqn_learning_starts: int = 1000
    dqn_eps_start: float = 1.0
    dqn_eps_end: float = 0.05
    dqn_eps_fraction: float = 0.1

    LR_DEFAULTS = {"dqn": 1e-4, "a2c": 7e-4, "ppo": 3e-4}
    GRAD_NORM_DEFAULTS = {"dqn": 10.0, "a2c": 0.5, "ppo": 0.5}
    ADV_NORM_DEFAULTS = {"dqn": False, "a2c": False, "ppo": True}

    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else self.LR_DEFAULTS[self.algorithm]

    def resolved_grad_norm(self) -> float:
        if self.max_grad_norm is not None:
            return self.max_grad_norm
        return self.GRAD_NORM_DEFAULTS[self.algorithm]

    def resolved_adv_norm(self) -> bool:
        if self.adv_norm is not None:
            return self.adv_norm
        return self.ADV_NORM_DEFAULTS[self.algorithm]


@dataclass
class TrainingSection:
    total_steps: int = 1_700_000
    scale: float = 1.0
    curriculum: bool = False
    stage_boundaries: tuple = (700_000, 1_200_000)
    fixed_stage: int | None = None
    n_seeds: int = 1
    workers: int = 1
    audit_log: bool = False
    checkpoint_buffer: bool = False
    smooth_window: int = 100


@dataclass
class EvalSection:
    n_episodes: int = 100
    n_seeds: int = 5
    record_traces: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    env: EnvSection = field(default_factory=EnvSection)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    reward: RewardSection = field(default_factory=RewardSection)
    agent: AgentSection = field(default_factory=AgentSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        if self.env.architecture not in ARCHITECTURES:
            raise ConfigError(f"env.architecture must be one of {ARCHITECTURES}, got {self.env.architecture!r}")
        if self.reward.kind not in REWARD_KINDS:
            raise ConfigError(f"reward.kind must be one of {REWARD_KINDS}, got {self.reward.kind!r}")
        if self.agent.algorithm not in ALGORITHMS:
            raise ConfigError(f"agent.algorithm must be one of {ALGORITHMS}, got {self.agent.algorithm!r}")
        if self.env.n_lanes < 1 or self.env.n_cars < 0:
            raise ConfigError("env.n_lanes must be >= 1 and env.n_cars >= 0")
        if self.env.target_x <= self.env.ego_start_x:
            raise ConfigError("env.target_x must lie ahead of env.ego_start_x")
        if self.training.fixed_stage is not None and self.training.fixed_stage not in (1, 2, 3):
            raise ConfigError("training.fixed_stage must be 1, 2, 3 or null")
        b = self.training.stage_boundaries
        if len(b) != 2 or not (0 < b[0] < b[1]):
            raise ConfigError("training.stage_boundaries must be two increasing positive step counts")
        if self.eval.n_episodes < 1 or self.eval.n_seeds < 1:
            raise ConfigError("eval.n_episodes and eval.n_seeds must be >= 1")
        return self


def _coerce(value, target, path):
    """Coerce a JSON value to the type of a dataclass default."""
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(target, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    if target is None:
        # optional field: null, boolean or number
        if value is None or isinstance(value, (bool, int, float)):
            return value
        raise ConfigError(f"{path}: expected a number, boolean or null, got {value!r}")
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _fill_section(obj, data: dict, path: str):
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {path}.{key}")
        current = getattr(obj, key)
        setattr(obj, key, _coerce(value, current, f"{path}.{key}"))
    return obj


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from a (possibly partial) plain dict."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = RunConfig()
    for key, value in data.items():
        if key == "seed":
            cfg.seed = _coerce(value, 0, "seed")
        elif key == "output_dir":
            cfg.output_dir = _coerce(value, "", "output_dir")
        elif key in ("env", "traffic", "controller", "reward", "agent", "training", "eval"):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            _fill_section(getattr(cfg, key), value, key)
        else:
            raise ConfigError(f"unknown config key: {key}")
    return cfg.validate()


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)

    def tuples_to_lists(node):
        if isinstance(node, dict):
            return {k: tuples_to_lists(v) for k, v in node.items()}
        if isinstance(node, tuple):
            return [tuples_to_lists(v) for v in node]
        return node

    return tuples_to_lists(out)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    """12-hex-digit digest of the canonical serialised config."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:12]


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n")


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings may be given unquoted


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted-path overrides ("reward.W_tar=36") to a config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key component")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-object")
        node[keys[-1]] = _parse_override_value(raw)
    return data
