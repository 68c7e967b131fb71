import copy
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from relaymeet.scenario import from_dict, load_scenario  # noqa: E402


def scenario_variant(name, **edits):
    """Bundled scenario with top-level sections patched by ``edits``
    (callables receive the document and mutate it)."""
    doc = copy.deepcopy(load_scenario(name).to_dict())
    for fn in edits.values():
        fn(doc)
    return from_dict(doc, name)


def events_of(sim, kind=None, robot=None):
    return [e for e in sim.log.events
            if (kind is None or e["kind"] == kind) and (robot is None or e["robot"] == robot)]


def state_trace_consistent(sim):
    """Every source's executed states follow its plan order exactly."""
    for rid, plan in sim.plans.items():
        ks = [e for e in events_of(sim, "state", rid)]
        for i, e in enumerate(ks):
            if e["k"] != i + 1:
                return False, f"{rid}: state #{i} has index {e['k']}"
            region, action = plan.state(e["k"])
            if (e["region"], e["action"]) != (region, action):
                return False, f"{rid}: state {e['k']} is {(e['region'], e['action'])}"
    return True, ""


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
