"""Command line: run one scheme on a scenario, or compare the three schemes.

Exit codes: 0 ok, 2 invalid scenario, 3 invariant violation, 4 size bound.
Set RELAYMEET_LOG to a logging level name (default WARNING) for more output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .baselines import (StaticOneSimulation, StaticTwoSimulation, centralized_synthesize,
                        distributed_suffix_cost)
from .errors import InvariantViolation, ScenarioError, SizeBoundExceeded
from .scenario import BUNDLED, load_scenario
from .sim import Simulation, write_outputs

log = logging.getLogger("relaymeet")

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT, EXIT_SIZE = 0, 2, 3, 4
SCHEMES = {"dynamic": Simulation, "static1": StaticOneSimulation, "static2": StaticTwoSimulation}


def _scenario(args):
    sc = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.noise is not None:
        overrides["velocity_noise"] = args.noise
    return sc.with_sim(**overrides) if overrides else sc


def simulate(sc, mode, out_dir=None, record_metrics=True):
    """Run one scheme; write the standard outputs when ``out_dir`` is given."""
    t0 = time.perf_counter()
    sim = SCHEMES[mode](sc, record_metrics=record_metrics)
    sim.run()
    sim.wall_clock = time.perf_counter() - t0
    if out_dir is None:
        return sim, sim.summary()
    return sim, write_outputs(out_dir, sim)


def cmd_run(args):
    sc = _scenario(args)
    out = Path(args.out)
    if args.mode == "centralized":
        return run_centralized(sc, out)
    _, summary = simulate(sc, args.mode, out)
    print(f"{sc.name} [{args.mode}, seed {sc.sim.seed}]: uploaded {summary['uploaded_total']} "
          f"units, source wait {summary['source_wait_total']:.1f} s -> {out}")
    return EXIT_OK


def run_centralized(sc, out):
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = centralized_synthesize(sc)
    except SizeBoundExceeded as e:
        summary = {"mode": "centralized", "scenario": sc.name, "refused": True,
                   "state_estimate": e.estimate, "bound": e.bound}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"{sc.name} [centralized]: refused, ~{e.estimate:.3g} joint states "
              f"exceed the bound {e.bound:.3g}", file=sys.stderr)
        return EXIT_SIZE
    dist_cost, dist_time = distributed_suffix_cost(sc)
    summary = {"mode": "centralized", "scenario": sc.name, "refused": False,
               "prefix_cost": round(res.prefix_cost, 4), "suffix_cost": round(res.suffix_cost, 4),
               "states_explored": res.states_explored, "state_estimate": res.estimate,
               "wall_clock_s": round(res.wall_clock, 3),
               "distributed_suffix_cost": round(dist_cost, 4),
               "distributed_wall_clock_s": round(dist_time, 3)}
    plan = {"prefix": [_joint(n) for n in res.prefix], "suffix": [_joint(n) for n in res.suffix]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "plan.json").write_text(json.dumps(plan) + "\n")
    print(f"{sc.name} [centralized]: suffix {res.suffix_cost:.2f} s "
          f"(distributed {dist_cost:.2f} s), {res.states_explored} states, "
          f"{res.wall_clock:.2f} s -> {out}")
    return EXIT_OK


def _joint(node):
    srcs, rels, qs = node
    return {"sources": [[st[0], st[1], buf] for st, buf in srcs],
            "relays": list(rels), "automaton": list(qs)}


def cmd_compare(args):
    base = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed0 = base.sim.seed
    jobs = [(seed0 + k, mode) for k in range(args.seeds) for mode in SCHEMES]

    def one(job):
        seed, mode = job
        sub = out / f"seed_{seed}" / mode if args.seeds > 1 else out / mode
        sim, summary = simulate(base.with_seed(seed), mode, sub)
        series = [(row["time"], sum(row["uploaded"].values())) for row in sim.metrics]
        return seed, mode, summary, series

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, jobs))

    types = sorted({int(t) for _, _, s, _ in results for t in s["uploaded_by_type"]})
    rows = []
    for seed, mode, summary, _ in results:
        by = summary["uploaded_by_type"]
        rows.append([seed, mode] + [by.get(str(t), 0) for t in types]
                    + [summary["uploaded_total"]])
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "mode"] + [f"type_{t}" for t in types] + ["total"])
        w.writerows(rows)
    # cumulative uploads over time for the first seed
    first = {mode: series for seed, mode, _, series in results if seed == seed0}
    with open(out / "cumulative.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + list(SCHEMES))
        n = min(len(s) for s in first.values())
        for i in range(n):
            w.writerow([f"{first['dynamic'][i][0]:.3f}"] + [first[m][i][1] for m in SCHEMES])

    totals = {}
    for seed, mode, summary, _ in results:
        totals.setdefault(seed, {})[mode] = summary["uploaded_total"]
    ordered = sum(1 for t in totals.values() if t["dynamic"] > t["static1"] > t["static2"])
    print(f"{'seed':>6} " + " ".join(f"{m:>8}" for m in SCHEMES))
    for seed in sorted(totals):
        print(f"{seed:>6} " + " ".join(f"{totals[seed][m]:>8}" for m in SCHEMES))
    print(f"dynamic > static1 > static2 in {ordered}/{len(totals)} seeds -> {out}")
    return EXIT_OK


def cmd_validate(args):
    sc = load_scenario(args.scenario)
    print(f"{sc.name}: ok ({len(sc.sources)} sources, {len(sc.relays)} relays)")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="relaymeet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help=f"scenario file or bundled name ({', '.join(BUNDLED)})")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--horizon", type=float, default=None, help="seconds")
        sp.add_argument("--noise", type=float, default=None,
                        help="relative velocity noise, e.g. 0.2")

    r = sub.add_parser("run", help="run one scheme")
    common(r)
    r.add_argument("--mode", choices=list(SCHEMES) + ["centralized"], default="dynamic")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run the three schemes on identical seeds")
    common(c)
    c.add_argument("--out", required=True)
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    c.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="load and check a scenario")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("RELAYMEET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as e:
        print("invalid scenario:", file=sys.stderr)
        for err in e.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_INVALID
    except SizeBoundExceeded as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_SIZE
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
