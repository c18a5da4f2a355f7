import numpy as np
import pytest

from truckrl.config import ControllerSection, config_from_dict
from truckrl.env import (BaseCommand, DrivingEnv, HierCommand,
                         build_observation, decode_baseline,
                         decode_hierarchical, encode_baseline,
                         encode_hierarchical, make_env, n_actions,
                         observation_dim)
from truckrl.sim import EGO

from conftest import rollout_episode

CTL = ControllerSection()


def empty_env(**env_over):
    d = {"env": {"n_cars": 0}}
    d["env"].update(env_over)
    return make_env(config_from_dict(d))


# ------------------------------------------------------------- actions

def test_action_space_sizes():
    assert n_actions("hierarchical", CTL) == 8
    assert n_actions("baseline", CTL) == 12


def test_hierarchical_decoding():
    assert decode_hierarchical(0, CTL) == HierCommand("gap", 1.0)
    assert decode_hierarchical(1, CTL) == HierCommand("gap", 2.0)
    assert decode_hierarchical(2, CTL) == HierCommand("gap", 3.0)
    assert decode_hierarchical(3, CTL) == HierCommand("speed", 1.0)
    assert decode_hierarchical(4, CTL) == HierCommand("speed", -1.0)
    assert decode_hierarchical(5, CTL) == HierCommand("hold")
    assert decode_hierarchical(6, CTL) == HierCommand("lane", 1)
    assert decode_hierarchical(7, CTL) == HierCommand("lane", -1)
    with pytest.raises(ValueError):
        decode_hierarchical(8, CTL)


def test_baseline_decoding():
    # index = longitudinal * 3 + lateral
    assert decode_baseline(0, CTL) == BaseCommand(0.0, 0)
    assert decode_baseline(1, CTL) == BaseCommand(0.0, 1)
    assert decode_baseline(2, CTL) == BaseCommand(0.0, -1)
    assert decode_baseline(3, CTL) == BaseCommand(1.0, 0)
    assert decode_baseline(5, CTL) == BaseCommand(1.0, -1)
    assert decode_baseline(6, CTL) == BaseCommand(-1.0, 0)
    assert decode_baseline(9, CTL) == BaseCommand(-4.0, 0)
    assert decode_baseline(11, CTL) == BaseCommand(-4.0, -1)
    with pytest.raises(ValueError):
        decode_baseline(12, CTL)


def test_encode_inverts_decode():
    for a in range(8):
        assert encode_hierarchical(decode_hierarchical(a, CTL), CTL) == a
    for a in range(12):
        assert encode_baseline(decode_baseline(a, CTL), CTL) == a


# --------------------------------------------------------- observation

def test_observation_width():
    assert observation_dim(15) == 111
    cfg = config_from_dict({})
    env = make_env(cfg)
    assert env.obs_dim == 111
    obs = env.reset(3)
    assert obs.shape == (111,)
    assert np.all(np.isfinite(obs))


def test_ego_features_on_empty_road():
    env = empty_env()
    obs = env.reset(0)
    assert obs[0] == 0.0                          # standing start
    assert obs[1] == 0.0                          # no lateral motion
    assert obs[2] == env.sim.lane[EGO] / 2.0
    assert obs[3] == 0.0 and obs[4] == 0.0        # indicators off
    assert obs[5] == 1.0                          # free road reads full range
    assert obs.shape == (6,)                      # zero cars, zero slots


def test_car_slots_sorted_by_distance():
    env = make_env(config_from_dict({"env": {"n_cars": 3}}))
    env.reset(0)
    sim = env.sim
    sim.x[0] = 800.0
    sim.lane[0] = 0
    sim.y[0] = 0.0
    sim.v[0] = 20.0
    sim.x[1:] = [890.0, 830.0, 760.0]
    sim.v[1:] = [25.0, 18.0, 20.0]
    sim.lane[1:] = [0, 1, 2]
    sim.y[1:] = [0.0, 3.2, 6.4]
    obs = build_observation(sim)
    # nearest first: d_x 30, then -40, then 90
    assert obs[6] == pytest.approx(30.0 / 200.0)
    assert obs[6 + 7] == pytest.approx(-40.0 / 200.0)
    assert obs[6 + 14] == pytest.approx(90.0 / 200.0)
    # the d_x=30 car: one lane left, 2 m/s slower
    assert obs[7] == pytest.approx(3.2 / 9.6)
    assert obs[8] == pytest.approx(-2.0 / 35.0)
    assert obs[10] == pytest.approx(1.0 / 2.0)


def test_out_of_range_car_becomes_filler():
    env = make_env(config_from_dict({"env": {"n_cars": 2}}))
    env.reset(0)
    sim = env.sim
    sim.x[0] = 800.0
    sim.x[1:] = [830.0, 1050.0]     # second car 250 m ahead, out of range
    obs = build_observation(sim)
    assert obs[6] == pytest.approx((830.0 - 800.0) / 200.0)
    block = obs[6 + 7: 6 + 14]
    assert block[0] == 1.0
    assert np.all(block[1:] == 0.0)


def test_d_lead_ablation_zeroes_feature():
    base = {"env": {"n_cars": 1}}
    env = make_env(config_from_dict(base))
    env.reset(0)
    env.sim.x[0] = 800.0
    env.sim.v[0] = 20.0
    env.sim.lane[0] = 0
    env.sim.y[0] = 0.0
    env.sim.x[1] = 851.0            # front bumper 51 ahead, rear gap 46
    env.sim.lane[1] = 0
    env.sim.y[1] = 0.0
    obs = build_observation(env.sim, include_d_lead=True)
    assert obs[5] == pytest.approx(46.0 / 200.0)
    obs = build_observation(env.sim, include_d_lead=False)
    assert obs[5] == 0.0
    # and the config switch feeds through the env
    ab = make_env(config_from_dict({"env": {"n_cars": 1, "include_d_lead": False}}))
    ab.reset(0)
    assert ab.current_observation()[5] == 0.0


# ------------------------------------------------------ window semantics

def test_ordinary_decision_is_one_second():
    env = empty_env()
    env.reset(0)
    _, _, _, _, s = env.step(5)
    assert s.dt == pytest.approx(1.0)
    assert env.sim.time == pytest.approx(1.0)


def test_lane_change_decision_is_four_seconds():
    env = empty_env()
    env.reset(0)
    lane0 = int(env.sim.lane[EGO])
    direction = 1 if lane0 < 2 else -1
    obs, _, term, trunc, s = env.step(6 if direction == 1 else 7)
    assert s.dt == pytest.approx(4.0)
    assert s.flags.lane_change_started
    assert not term and not trunc
    # the ramp has landed exactly on the neighbouring centre line
    assert env.sim.y[EGO] == (lane0 + direction) * 3.2
    assert int(env.sim.lane[EGO]) == lane0 + direction
    assert env.plan is None
    assert obs[1] == 0.0


def test_gap_and_speed_commands_move_setpoints():
    env = empty_env()
    env.reset(0)
    env.step(0)
    assert env.acc.time_gap == 1.0
    env.step(2)
    assert env.acc.time_gap == 3.0
    env.step(3)
    assert env.acc.desired_speed == 25.0    # clamped at the cap
    env.step(4)
    env.step(4)
    assert env.acc.desired_speed == 23.0


def test_baseline_lane_change_spans_windows():
    env = empty_env(architecture="baseline")
    env.reset(0)
    lane0 = int(env.sim.lane[EGO])
    lat_action = 1 if lane0 < 2 else 2      # lon 0 with left or right
    direction = 1 if lane0 < 2 else -1
    _, _, _, _, s = env.step(lat_action)
    assert s.flags.lane_change_started
    assert s.dt == pytest.approx(1.0)       # baseline keeps the 1 s cadence
    assert env.plan is not None and env.plan.active
    # repeating the command continues the same manoeuvre, no new start
    _, _, _, _, s = env.step(lat_action)
    assert not s.flags.lane_change_started
    for _ in range(2):
        env.step(lat_action)
    assert env.plan is None
    assert env.sim.y[EGO] == (lane0 + direction) * 3.2


def test_baseline_abort_reverses_to_origin():
    env = empty_env(architecture="baseline")
    env.reset(0)
    lane0 = int(env.sim.lane[EGO])
    out_act, back_act = (1, 2) if lane0 < 2 else (2, 1)
    env.step(out_act)
    y_mid = float(env.sim.y[EGO])
    assert y_mid != lane0 * 3.2
    _, _, _, _, s = env.step(back_act)
    assert s.flags.lane_change_started      # the reversal bills as a new move
    while env.plan is not None and not env.finished:
        env.step(0)
    assert env.sim.y[EGO] == lane0 * 3.2
    assert int(env.sim.lane[EGO]) == lane0


def test_step_after_finish_raises():
    env = empty_env(max_rl_steps=2)
    env.reset(0)
    env.step(5)
    env.step(5)
    assert env.finished
    with pytest.raises(RuntimeError):
        env.step(5)


def test_truncation_cause():
    env = empty_env(max_rl_steps=3)
    env.reset(0)
    for _ in range(3):
        _, _, term, trunc, _ = env.step(5)
    assert trunc and not term
    assert env.outcome.cause == "truncated"


# ------------------------------------------------------- whole episodes

def test_hold_forever_reaches_target():
    env = empty_env()
    outcome, _ = rollout_episode(env, lambda o: 5, seed=4)
    assert outcome.cause == "target"
    assert outcome.reached_target and not outcome.hazard
    # 2200 m from a standing start with a gentle 1 m/s^2 ramp-up
    assert outcome.mean_speed > 21.0
    assert outcome.distance >= 2200.0
    assert outcome.duration == pytest.approx(env.sim.time)


def test_driving_off_the_road_terminates():
    env = empty_env()
    for seed in range(30):
        env.reset(seed)
        if int(env.sim.lane[EGO]) == 0:
            break
    assert int(env.sim.lane[EGO]) == 0
    _, _, term, _, s = env.step(7)          # lane change right, off the road
    assert term
    assert s.flags.off_road
    assert env.outcome.cause == "off_road"
    assert s.dt < 4.0                       # the event cut the window short


def test_mean_speed_is_distance_over_time():
    env = empty_env()
    env.reset(1)
    for a in (5, 3, 5, 0):
        _, _, _, _, s = env.step(a)
        assert s.mean_v == pytest.approx(s.dist / s.dt, abs=1e-12)
    out = env.outcome
    assert out.mean_speed == pytest.approx(out.distance / out.duration)


def test_outcome_cost_bookkeeping():
    env = empty_env()
    outcome, _ = rollout_episode(env, lambda o: 5, seed=2)
    assert outcome.energy_cost == pytest.approx(0.5 * outcome.energy_kwh, rel=1e-12)
    assert outcome.driver_cost == pytest.approx(50.0 * outcome.duration / 3600.0,
                                                rel=1e-12)
    assert outcome.tcop == outcome.energy_cost + outcome.driver_cost


def test_state_round_trip_resumes_bit_exact():
    cfg = config_from_dict({})
    env = make_env(cfg)
    env.reset(11)
    script = [5, 5, 3, 6, 1, 5, 0, 4]
    for a in script[:3]:
        if env.finished:
            break
        env.step(a)
    saved = env.get_state()
    after = []
    for a in script[3:]:
        if env.finished:
            break
        after.append(env.step(a)[:2])
    env2 = make_env(cfg)
    env2.reset(11)                  # prime the generator state holders
    env2.set_state(saved)
    replay = []
    for a in script[3:]:
        if env2.finished:
            break
        replay.append(env2.step(a)[:2])
    assert len(after) == len(replay)
    for (o1, r1), (o2, r2) in zip(after, replay):
        assert r1 == r2
        assert np.array_equal(o1, o2)
