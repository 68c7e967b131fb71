"""Scenario documents: loading, validation, saving, and the bundled set."""

from __future__ import annotations

import copy
import math
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import GeometryError, LtlSyntaxError, ScenarioError, UnknownPropositionError
from .ltl import parse_ltl
from .model import IDLE
from .workspace import Workspace, build_roadmap

SCHEMA = 1
BUNDLED = ("tiny_1x1", "tiny_1x2", "tiny_1x3", "paper_12robot",
           "paper_12robot_faults", "paper_12robot_center")
HOME = "r0"


@dataclass
class RobotSpec:
    id: str
    role: str  # source | relay
    start: list
    v_ref: object  # float, or [lo, hi] drawn per seed
    w_ref: object
    range: float = 1.0
    capacity: int = 5
    heading: float = 0.0
    regions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    task: str = ""
    near: str | None = None  # joiners: spawn next to this robot

    @property
    def is_source(self):
        return self.role == "source"


@dataclass
class SimSettings:
    dt: float = 0.05
    horizon: float = 100.0
    arrival_tolerance: float = 0.05
    angular_tolerance: float = 0.05
    transfer_duration: float = 2.0
    upload_duration: float = 2.0
    seed: int = 0
    velocity_noise: float = 0.0


@dataclass
class Variants:
    centers: dict = field(default_factory=dict)  # relay id -> [x, y]
    fault_policy: dict = field(default_factory=lambda: {"enabled": False, "t_max": 30.0})
    faults: list = field(default_factory=list)  # {time, robot}
    joins: list = field(default_factory=list)  # {time, robot: RobotSpec dict}
    leaves: list = field(default_factory=list)  # {time, robot}
    swap: bool = True
    state_bound: float = 2e6


@dataclass
class Scenario:
    name: str
    workspace: dict
    roadmap: dict
    regions: dict  # label -> [x, y]
    actions: dict  # label -> {duration, units, type}
    robots: list
    sim: SimSettings = field(default_factory=SimSettings)
    variants: Variants = field(default_factory=Variants)
    schema: int = SCHEMA

    # derived, not serialized
    _ws: object = field(default=None, repr=False, compare=False)
    _rm: object = field(default=None, repr=False, compare=False)

    def robot(self, rid):
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(rid)

    @property
    def sources(self):
        return [r for r in self.robots if r.is_source]

    @property
    def relays(self):
        return [r for r in self.robots if not r.is_source]

    def workspace_obj(self):
        if self._ws is None:
            self._ws = Workspace(self.workspace["boundary"],
                                 self.workspace.get("obstacles", []))
        return self._ws

    def roadmap_obj(self):
        if self._rm is None:
            key = _roadmap_key(self)
            rm = _ROADMAPS.get(key)
            if rm is None:
                cfg = dict(self.roadmap)
                rm = build_roadmap(self.workspace_obj(), **cfg)
                _ROADMAPS[key] = rm
            self._rm = rm
        return self._rm

    def alphabet(self, desc):
        return set(desc.regions) | {HOME} | set(desc.actions) | {IDLE}

    def to_dict(self):
        return {
            "schema": self.schema,
            "name": self.name,
            "workspace": self.workspace,
            "roadmap": self.roadmap,
            "regions": self.regions,
            "actions": self.actions,
            "robots": [_robot_dict(r) for r in self.robots],
            "sim": asdict(self.sim),
            "variants": asdict(self.variants),
        }

    def with_seed(self, seed):
        s = copy.copy(self)
        s.sim = SimSettings(**{**asdict(self.sim), "seed": seed})
        return s

    def with_sim(self, **kw):
        s = copy.copy(self)
        s.sim = SimSettings(**{**asdict(self.sim), **kw})
        return s

    def resolved_speeds(self):
        """Per-robot ``(v_ref, w_ref)``; ranges are drawn from the seed."""
        rng = random.Random(self.sim.seed)
        out = {}
        for r in self.robots + [RobotSpec(**j["robot"]) for j in self.variants.joins]:
            out[r.id] = (_draw(rng, r.v_ref), _draw(rng, r.w_ref))
        return out


_ROADMAPS = {}


def _roadmap_key(s):
    return repr((s.workspace, sorted(s.roadmap.items())))


def _draw(rng, desc):
    if isinstance(desc, (list, tuple)):
        lo, hi = desc
        return round(rng.uniform(lo, hi), 3)
    return float(desc)


def _robot_dict(r):
    d = asdict(r)
    if d["near"] is None:
        del d["near"]
    if r.role != "source":
        for k in ("regions", "actions", "task"):
            d.pop(k)
    return d


def _robot(d, path, errors):
    known = set(RobotSpec.__dataclass_fields__)
    extra = set(d) - known
    if extra:
        errors.append(f"{path}: unknown fields {sorted(extra)}")
    try:
        return RobotSpec(**{k: v for k, v in d.items() if k in known})
    except TypeError as e:
        errors.append(f"{path}: {e}")
        return None


def from_dict(doc, name=None):
    errors = []
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario document must be a mapping"])
    if doc.get("schema") != SCHEMA:
        errors.append(f"schema: expected {SCHEMA}, got {doc.get('schema')!r}")
    for key in ("workspace", "regions", "actions", "robots"):
        if key not in doc:
            errors.append(f"{key}: missing")
    if errors:
        raise ScenarioError(errors)
    robots = []
    for i, rd in enumerate(doc["robots"]):
        r = _robot(rd, f"robots[{i}]", errors)
        if r is not None:
            robots.append(r)
    try:
        sim = SimSettings(**doc.get("sim", {}))
    except TypeError as e:
        errors.append(f"sim: {e}")
        sim = SimSettings()
    try:
        variants = Variants(**doc.get("variants", {}))
    except TypeError as e:
        errors.append(f"variants: {e}")
        variants = Variants()
    if errors:
        raise ScenarioError(errors)
    s = Scenario(
        name=doc.get("name", name or "scenario"),
        workspace=doc["workspace"],
        roadmap=doc.get("roadmap", {"builder": "lattice", "pitch": 0.5}),
        regions={k: list(v) for k, v in doc["regions"].items()},
        actions=doc["actions"],
        robots=robots,
        sim=sim,
        variants=variants,
        schema=doc["schema"],
    )
    validate(s)
    return s


def validate(s):
    errors = []
    try:
        ws = s.workspace_obj()
    except (GeometryError, KeyError, TypeError, ValueError) as e:
        raise ScenarioError([f"workspace: {e}"])
    for lbl, p in s.regions.items():
        if lbl in (HOME, IDLE):
            errors.append(f"regions.{lbl}: label is reserved")
        if not ws.is_free(p):
            errors.append(f"regions.{lbl}: center {p} is not in free space")
    for lbl, a in s.actions.items():
        if lbl == IDLE:
            errors.append(f"actions.{lbl}: the idle action is implicit")
        if a.get("duration", 0) <= 0:
            errors.append(f"actions.{lbl}.duration: must be positive")
        if int(a.get("units", 0)) < 0:
            errors.append(f"actions.{lbl}.units: must be nonnegative")
    st = s.sim
    for k in ("dt", "horizon", "arrival_tolerance", "angular_tolerance"):
        if getattr(st, k) <= 0:
            errors.append(f"sim.{k}: must be positive")
    for k in ("transfer_duration", "upload_duration", "velocity_noise"):
        if getattr(st, k) < 0:
            errors.append(f"sim.{k}: must be nonnegative")
    ids = [r.id for r in s.robots] + [j.get("robot", {}).get("id") for j in s.variants.joins]
    if len(set(ids)) != len(ids):
        errors.append("robots: duplicate robot ids")
    if not s.relays:
        errors.append("robots: at least one relay is required")
    for i, r in enumerate(s.robots):
        _validate_robot(s, r, f"robots[{i}]", errors, ws, initial=True)
    for i, j in enumerate(s.variants.joins):
        try:
            r = RobotSpec(**j["robot"])
        except (TypeError, KeyError) as e:
            errors.append(f"variants.joins[{i}]: {e}")
            continue
        _validate_robot(s, r, f"variants.joins[{i}].robot", errors, ws, initial=False)
    known = set(ids)
    for key in ("faults", "leaves"):
        for i, ev in enumerate(getattr(s.variants, key)):
            if ev.get("robot") not in known:
                errors.append(f"variants.{key}[{i}].robot: unknown robot {ev.get('robot')!r}")
            if ev.get("time", -1) < 0:
                errors.append(f"variants.{key}[{i}].time: must be nonnegative")
    for rid, p in s.variants.centers.items():
        if rid not in known:
            errors.append(f"variants.centers.{rid}: unknown robot")
        elif not ws.is_free(p):
            errors.append(f"variants.centers.{rid}: not in free space")
    fp = s.variants.fault_policy
    if fp.get("t_max", 30.0) <= 0:
        errors.append("variants.fault_policy.t_max: must be positive")
    # assumption: every initial source talks to some relay at t = 0
    relays = [r for r in s.robots if not r.is_source]
    for i, r in enumerate(s.robots):
        if not r.is_source:
            continue
        if not any(math.dist(r.start, q.start) <= min(r.range, q.range) for q in relays):
            errors.append(f"robots[{i}] ({r.id}): not within range of any relay at t=0")
    if not errors:
        try:
            rm = s.roadmap_obj()
        except (GeometryError, ValueError, TypeError) as e:
            errors.append(f"roadmap: {e}")
        else:
            if not rm.is_connected():
                errors.append("roadmap: waypoint graph is disconnected")
    if errors:
        raise ScenarioError(errors)
    return s


def _validate_robot(s, r, path, errors, ws, initial):
    if r.role not in ("source", "relay"):
        errors.append(f"{path}.role: must be 'source' or 'relay'")
        return
    for k in ("v_ref", "w_ref"):
        v = getattr(r, k)
        vals = v if isinstance(v, (list, tuple)) else [v]
        if len(vals) not in (1, 2) or any(not isinstance(x, (int, float)) or x <= 0 for x in vals):
            errors.append(f"{path}.{k}: must be positive (number or [lo, hi])")
        elif len(vals) == 2 and vals[0] > vals[1]:
            errors.append(f"{path}.{k}: range lower bound exceeds upper bound")
    if r.range <= 0:
        errors.append(f"{path}.range: must be positive")
    if not isinstance(r.capacity, int) or r.capacity < (0 if r.is_source else 1):
        errors.append(f"{path}.capacity: must be a nonnegative integer (relays >= 1)")
    if r.near is None or initial:
        if not isinstance(r.start, (list, tuple)) or len(r.start) != 2:
            errors.append(f"{path}.start: must be [x, y]")
        elif not ws.is_free(r.start):
            errors.append(f"{path}.start: not in free space")
    if not r.is_source:
        return
    for lbl in r.regions:
        if lbl not in s.regions:
            errors.append(f"{path}.regions: unknown region {lbl!r}")
    gathers = False
    for lbl in r.actions:
        if lbl not in s.actions:
            errors.append(f"{path}.actions: unknown action {lbl!r}")
            continue
        units = int(s.actions[lbl].get("units", 0))
        gathers = gathers or units > 0
        if units > r.capacity:
            errors.append(f"{path}.capacity: action {lbl} gathers {units} > capacity {r.capacity}")
    if not gathers:
        errors.append(f"{path}.actions: no action gathers data")
    if not r.task:
        errors.append(f"{path}.task: missing")
        return
    try:
        parse_ltl(r.task, s.alphabet(r))
    except (LtlSyntaxError, UnknownPropositionError) as e:
        errors.append(f"{path}.task: {e}")


def load_scenario(path_or_name):
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(str(path_or_name))
    if not p.exists() and str(path_or_name) in BUNDLED:
        text = resources.files("relaymeet.scenarios").joinpath(f"{path_or_name}.yaml").read_text()
        name = str(path_or_name)
    else:
        try:
            text = p.read_text()
        except OSError as e:
            raise ScenarioError([f"{path_or_name}: {e.strerror or e}"])
        name = p.stem
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError([f"parse error: {e}"])
    return from_dict(doc, name)


def dump_scenario(s):
    return yaml.safe_dump(s.to_dict(), sort_keys=False, default_flow_style=None)


def save_scenario(s, path):
    Path(path).write_text(dump_scenario(s))


# --------------------------------------------------------------------------
# randomized family used by the safety sweeps


CATEGORY_TASKS = [
    (["r1", "r2", "r3"], ["g1", "g2", "g3"],
     "[]<>(r2 && g2) && []<>(r1 && g1) && []<>(r3 && g3)"),
    (["r4", "r5", "r6"], ["g4", "g5"],
     "[]<>(((r4 && g4) && X(r4 && g5)) && <>(r6 && g4)) && []<>(r5 && g5)"),
    (["r7", "r8", "r9"], ["g6", "g7"],
     "[]<>(r8 && g7) && []<>(r7 && g6) && []<>(r9 && g6)"),
]


def random_scenario(seed, n_min=2, n_max=12, horizon=100.0):
    """A scenario from the twelve-robot workspace family: 2-12 robots, random roles,
    tasks drawn from three templates, random capacities and speeds."""
    base = load_scenario("paper_12robot")
    rng = random.Random(10_000 + seed)
    n = rng.randint(n_min, n_max)
    n_relay = max(1, min(n - 1, round(n / 4) + rng.randint(-1, 1)))
    n_src = n - n_relay
    starts = [r.start for r in base.robots]
    anchors = sorted({tuple(p) for p in starts})
    robots = []
    relay_pos = []
    for j in range(n_relay):
        p = list(anchors[j % len(anchors)])
        relay_pos.append(p)
        robots.append(RobotSpec(f"l{j}", "relay", p, [0.5, 0.8], [0.1, 0.3], 1.0, 5))
    for i in range(n_src):
        regions, actions, task = CATEGORY_TASKS[rng.randrange(3)]
        if rng.random() < 0.3:
            # single-region variant of the template
            k = rng.randrange(len(regions))
            regions = [regions[k]]
            act = actions[min(k, len(actions) - 1)]
            actions = [act]
            task = f"[]<>({regions[0]} && {act})"
        cap = rng.randint(3, 5)
        units = max(int(base.actions[a]["units"]) for a in actions)
        cap = max(cap, units)
        p = list(relay_pos[rng.randrange(n_relay)])
        robots.append(RobotSpec(f"a{i}", "source", p, [0.5, 0.8], [0.1, 0.3], 1.0, cap,
                                0.0, list(regions), list(actions), task))
    s = Scenario(
        name=f"random_{seed}",
        workspace=base.workspace,
        roadmap=base.roadmap,
        regions=base.regions,
        actions=base.actions,
        robots=robots,
        sim=SimSettings(**{**asdict(base.sim), "seed": seed, "horizon": horizon}),
        variants=Variants(),
    )
    return validate(s)
