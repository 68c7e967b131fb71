"""Plan one source's task, run the one-pair scenario and list its meetings.

    python demos/pair_walkthrough.py [scenario]
"""

import sys

from relaymeet.scenario import load_scenario
from relaymeet.sim import Simulation


def main(name="tiny_1x1"):
    sim = Simulation(load_scenario(name)).run()
    for rid, plan in sim.plans.items():
        print(f"{rid}: prefix {plan.prefix_states} cost {plan.prefix_cost:.2f}")
        print(f"{' ' * len(rid)}  suffix {plan.suffix_states} cost {plan.suffix_cost:.2f}")
    for e in sim.log.events:
        if e["kind"] in ("meet_start", "upload"):
            extra = e.get("peer") or f"{e['units']} units of type {e['data_type']}"
            print(f"{e['t']:7.2f}  {e['robot']:>3} {e['kind']:<10} {extra}")
    s = sim.summary()
    print(f"uploaded {s['uploaded_total']} units, sources waited {s['source_wait_total']:.1f} s")


if __name__ == "__main__":
    main(*sys.argv[1:2])
