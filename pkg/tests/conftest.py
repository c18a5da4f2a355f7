import numpy as np
import pytest

from truckrl.config import RunConfig, config_from_dict
from truckrl.sim import EventFlags
from truckrl.rewards import StepSummary


@pytest.fixture
def default_cfg() -> RunConfig:
    return RunConfig().validate()


@pytest.fixture
def empty_road_cfg() -> RunConfig:
    return config_from_dict({"env": {"n_cars": 0}})


def make_summary(v_t=20.0, mean_v=None, mean_a=0.0, dt=1.0, dist=None,
                 collision=False, near=False, off_road=False, target=False,
                 lane_change=False, t_total=None) -> StepSummary:
    if mean_v is None:
        mean_v = v_t
    if dist is None:
        dist = mean_v * dt
    flags = EventFlags(collision=collision, near_collision=near,
                       off_road=off_road, target_reached=target,
                       lane_change_started=lane_change)
    return StepSummary(v_t=v_t, mean_v=mean_v, mean_a=mean_a, dt=dt,
                       dist=dist, flags=flags, t_total=t_total)


def rollout_episode(env, agent_fn, seed):
    """Run one episode; agent_fn(obs) -> action. Returns outcome."""
    obs = env.reset(seed)
    total = 0.0
    while not env.finished:
        obs, r, _, _, _ = env.step(agent_fn(obs))
        total += r
    return env.outcome, total


def rng(seed=0) -> np.random.Generator:
    return np.random.default_rng(seed)
