"""Walk through the operating-cost arithmetic behind the reward.

First the closed-form reference trip: 2200 m at a constant 22 m/s on a
flat road, metered with the same traction-force integral the
environment uses. Then the same route driven by the rule-based truck in
live traffic, which pays extra for every throttle cycle and detour.
"""

from truckrl.config import config_from_dict
from truckrl.evaluate import run_rule_based_ego
from truckrl.rewards import TcopParams, energy_step, ideal_revenue


def main():
    p = TcopParams()
    speed, duration = 22.0, 100.0
    energy = energy_step(speed, 0.0, duration, p)
    energy_cost = p.C_el * energy
    driver_cost = p.C_dr * duration / 3600.0
    total = energy_cost + driver_cost
    revenue = ideal_revenue(p)

    print(f"reference trip: {speed * duration:.0f} m at {speed} m/s")
    print(f"  energy      {energy:8.4f} kWh")
    print(f"  energy cost {energy_cost:8.4f} EUR")
    print(f"  driver cost {driver_cost:8.4f} EUR")
    print(f"  total cost  {total:8.4f} EUR")
    print(f"  revenue     {revenue:8.4f} EUR "
          f"(margin {revenue - total:+.4f})")
    print()

    cfg = config_from_dict({})
    print("rule-based truck in default traffic, 10 episodes:")
    table, _ = run_rule_based_ego(cfg, n_episodes=10, seed=600)
    print(table.to_text())
    print()
    print(f"the gap to {total:.3f} EUR is what acceleration, braking and "
          "traffic cost on top of the ideal cruise")


if __name__ == "__main__":
    main()
