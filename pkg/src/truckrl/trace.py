"""Episode trace files: write, load, and bit-exact replay verification.

A trace stores every substep of one episode (full vehicle state plus
event flags) together with the config that produced it and the episode
seed. Floats are serialized with repr so a replay on the same platform
must reproduce the file byte for byte; any drift in the dynamics shows
up as a first-divergence row index rather than a vague checksum error.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .config import RunConfig, canonical_json, config_from_dict, config_hash
from .env import make_env

TRACE_MAGIC = "# truckrl trace v1"


class TraceError(Exception):
    pass


def _columns(n_vehicles: int) -> List[str]:
    cols = ["time", "rl_step", "action"]
    for i in range(n_vehicles):
        cols.extend((f"x{i}", f"y{i}", f"v{i}", f"lane{i}"))
    cols.extend(("collision", "near_collision", "off_road", "target_reached"))
    return cols


def write_trace(path, cfg: RunConfig, seed: int, rows: Sequence[tuple]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        TRACE_MAGIC,
        f"# config_hash={config_hash(cfg)}",
        f"# seed={seed}",
        f"# config={canonical_json(cfg)}",
        ",".join(_columns(cfg.env.n_cars + 1)),
    ]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_trace(path) -> Tuple[RunConfig, int, List[tuple]]:
    """Parse a trace file, refusing one whose config hash does not match
    the embedded config (someone edited it after the fact)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != TRACE_MAGIC:
        raise TraceError(f"{path}: not a trace file")
    header = {}
    body_at = None
    for k, line in enumerate(lines[1:], start=1):
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            header[key] = value
        else:
            body_at = k
            break
    for need in ("config_hash", "seed", "config"):
        if need not in header:
            raise TraceError(f"{path}: missing header field {need}")
    cfg = config_from_dict(json.loads(header["config"]))
    if config_hash(cfg) != header["config_hash"]:
        raise TraceError(f"{path}: config hash mismatch, file was modified "
                         f"(claimed {header['config_hash']}, "
                         f"actual {config_hash(cfg)})")
    if body_at is None or lines[body_at] != ",".join(_columns(cfg.env.n_cars + 1)):
        raise TraceError(f"{path}: column header missing or malformed")
    rows = [tuple(line.split(",")) for line in lines[body_at + 1:] if line]
    return cfg, int(header["seed"]), rows


def replay_trace(cfg: RunConfig, seed: int, rows: Sequence[tuple]
                 ) -> Tuple[List[tuple], Optional[int], List[tuple]]:
    """Re-run the recorded actions and compare substep rows exactly.

    Returns the regenerated rows, the index of the first mismatching row
    (None when the replay reproduces the file, length included), and the
    per-decision record [(action, reward, StepSummary), ...].
    """
    actions = [int(r[2]) for r in rows if len(r) > 2 and r[2] != ""]
    env = make_env(cfg)
    env.reset(seed)
    env.start_trace()
    steps = []
    for a in actions:
        if env.finished:
            break
        _, reward, _, _, summary = env.step(a)
        steps.append((a, reward, summary))
    new_rows = [tuple(r) for r in env.trace]
    for k, (a, b) in enumerate(zip(new_rows, rows)):
        if a != b:
            return new_rows, k, steps
    if len(new_rows) != len(rows):
        return new_rows, min(len(new_rows), len(rows)), steps
    return new_rows, None, steps


def verify_trace(path) -> Optional[int]:
    """Load and replay; None means the file is a faithful recording."""
    cfg, seed, rows = load_trace(path)
    _, divergence, _ = replay_trace(cfg, seed, rows)
    return divergence
