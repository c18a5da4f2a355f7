"""Train a small agent and look at what it learned.

Runs a deliberately short PPO training on the hierarchical action space
(a few minutes on one core), then evaluates the final policy over 50
episodes and prints the metrics table. Bump STEPS for a real run, or
use the CLI with a preset from presets/ instead.
"""

import tempfile
import time
from pathlib import Path

from truckrl.config import config_from_dict
from truckrl.evaluate import run_validation
from truckrl.training import (agent_from_checkpoint, load_checkpoint,
                              train_single_seed)

STEPS = 30_000
SEED = 0


def main():
    cfg = config_from_dict({
        "agent": {"algorithm": "ppo"},
        "training": {"total_steps": STEPS},
    })
    out = Path(tempfile.mkdtemp(prefix="truckrl_demo_"))
    print(f"training ppo/hierarchical for {STEPS} env steps (seed {SEED})")
    t0 = time.perf_counter()
    art = train_single_seed(cfg, SEED, out / "quickstart")
    print(f"done in {time.perf_counter() - t0:.0f} s, "
          f"checkpoint at {art.final_checkpoint}")

    agent, _ = agent_from_checkpoint(load_checkpoint(art.final_checkpoint))
    table, _, _ = run_validation(agent, cfg, n_episodes=50, seed=1234)
    print()
    print(table.to_text())


if __name__ == "__main__":
    main()
