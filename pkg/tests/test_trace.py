import pytest

from truckrl.config import config_from_dict, config_hash
from truckrl.env import StepSummary
from truckrl.evaluate import ConstantAgent, run_validation
from truckrl.trace import (TRACE_MAGIC, TraceError, load_trace, replay_trace,
                           verify_trace, write_trace)


@pytest.fixture(scope="module")
def recorded(tmp_path_factory):
    cfg = config_from_dict({"env": {"n_cars": 3}})
    _, _, traces = run_validation(ConstantAgent(5), cfg, n_episodes=1, seed=4,
                                  collect_traces=1)
    ep_seed, rows = traces[0]
    path = write_trace(tmp_path_factory.mktemp("trace") / "ep.csv",
                       cfg, ep_seed, rows)
    return cfg, ep_seed, rows, path


def test_round_trip_preserves_everything(recorded):
    cfg, ep_seed, rows, path = recorded
    got_cfg, got_seed, got_rows = load_trace(path)
    assert config_hash(got_cfg) == config_hash(cfg)
    assert got_seed == ep_seed
    assert got_rows == [tuple(r) for r in rows]
    assert path.read_text().startswith(TRACE_MAGIC + "\n")


def test_faithful_file_verifies_clean(recorded):
    _, _, rows, path = recorded
    assert verify_trace(path) is None
    cfg, seed, stored = load_trace(path)
    new_rows, divergence, steps = replay_trace(cfg, seed, stored)
    assert divergence is None
    assert new_rows == stored
    n_decisions = sum(1 for r in stored if r[2] != "")
    assert len(steps) == n_decisions
    for action, reward, summary in steps:
        assert action == 5
        assert isinstance(summary, StepSummary)
        assert reward == reward  # finite, not NaN


def test_edited_state_row_is_located(recorded, tmp_path):
    _, _, _, path = recorded
    lines = path.read_text().splitlines()
    # header is magic + 3 fields + column line; pick a row deep in the body
    row_idx = len(lines) - 40
    parts = lines[row_idx].split(",")
    parts[5] = parts[5] + "1"          # nudge the ego speed, still a float
    lines[row_idx] = ",".join(parts)
    bad = tmp_path / "edited.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert verify_trace(bad) == row_idx - 5


def test_truncated_file_diverges_at_missing_row(recorded, tmp_path):
    _, _, rows, path = recorded
    lines = path.read_text().splitlines()
    # cut inside the second-to-last decision window so the replayed window
    # keeps going past the end of the file (a cut exactly on a window
    # boundary just looks like a shorter episode, which replays clean)
    action_rows = [k for k, r in enumerate(rows) if r[2] != ""]
    cut = action_rows[-2] + 1
    bad = tmp_path / "short.csv"
    bad.write_text("\n".join(lines[:5 + cut]) + "\n")
    assert verify_trace(bad) == cut


def test_edited_config_is_refused(recorded, tmp_path):
    _, _, _, path = recorded
    text = path.read_text()
    assert '"n_cars":3' in text       # canonical json, no spaces
    bad = tmp_path / "cfg.csv"
    bad.write_text(text.replace('"n_cars":3', '"n_cars":4'))
    with pytest.raises(TraceError, match="hash mismatch"):
        load_trace(bad)


def test_non_trace_and_incomplete_headers_rejected(tmp_path):
    plain = tmp_path / "plain.csv"
    plain.write_text("time,x\n0.1,800.0\n")
    with pytest.raises(TraceError, match="not a trace"):
        load_trace(plain)
    partial = tmp_path / "partial.csv"
    partial.write_text(TRACE_MAGIC + "\n# seed=1\ntime\n")
    with pytest.raises(TraceError, match="config_hash"):
        load_trace(partial)


def test_wrong_column_header_rejected(recorded, tmp_path):
    _, _, _, path = recorded
    lines = path.read_text().splitlines()
    lines[4] = lines[4].replace("rl_step", "rl_stepp")
    bad = tmp_path / "cols.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceError, match="column header"):
        load_trace(bad)
