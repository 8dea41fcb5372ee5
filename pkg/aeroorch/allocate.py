"""The allocation model: decision variables, energy aggregate, acceptance,
constraint checks and the objective."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Tuple

import yaml

from .environment import link_latency, move_energy
from .utils import export

TOL = 1e-9


@export
class StructuralError(IndexError):
    """An allocation refers to frames, requests, nodes, links, channels or
    paths that do not exist in the problem."""

    pass


@export
@dataclass
class Allocation:
    """Sparse binary decision state over frames [start, stop).

    Sets hold the 1-entries of X̃ (t, r, f), Ỹ (t, f, n), Z̃ (t, slot, r, c),
    B̃ (t, u, n) and R⃗ (t, r, p). Node areas S̃ are a map (t, n) -> a, so a
    node occupies at most one area per frame. ``initial_areas`` holds node
    positions just before ``start``."""

    start: int = 0
    stop: int = 0
    x_select: set = field(default_factory=set)
    y_place: set = field(default_factory=set)
    z_channel: set = field(default_factory=set)
    s_area: dict = field(default_factory=dict)
    b_poa: set = field(default_factory=set)
    r_path: set = field(default_factory=set)
    initial_areas: dict = field(default_factory=dict)

    @property
    def frames(self):
        return range(self.start, self.stop)

    def select(self, t, r, f):
        self.x_select.add((t, r, f))

    def place(self, t, f, n):
        self.y_place.add((t, f, n))

    def assign_channel(self, t, slot, r, c):
        self.z_channel.add((t, slot, r, c))

    def set_area(self, t, n, a):
        self.s_area[(t, n)] = a

    def bind(self, t, u, n):
        self.b_poa.add((t, u, n))

    def route(self, t, r, p):
        self.r_path.add((t, r, p))

    def s_area_bit(self, t, n, a):
        return int(self.s_area.get((t, n)) == a)

    def node_area(self, t, n):
        if t < self.start:
            return self.initial_areas.get(n)
        return self.s_area.get((t, n))

    def areas_at(self, t):
        return {n: a for (tt, n), a in self.s_area.items() if tt == t}

    def poa(self, t, u):
        nodes = sorted(n for (tt, uu, n) in self.b_poa if tt == t and uu == u)
        return nodes[0] if len(nodes) == 1 else None

    def paths_of(self, t, r):
        return sorted(p for (tt, rr, p) in self.r_path if tt == t and rr == r)

    def selected(self, t, r):
        return any(tt == t and rr == r for (tt, rr, _) in self.x_select)

    def placements(self, t, f):
        return {n for (tt, ff, n) in self.y_place if tt == t and ff == f}

    def slice(self, t0, t1=None):
        """Entries of frames [t0, t1) with node positions carried in."""
        t1 = t0 + 1 if t1 is None else t1
        keep = lambda key: t0 <= key[0] < t1
        carried = {}
        for (t, n), a in self.s_area.items():
            if t == t0 - 1:
                carried[n] = a
        initial = dict(self.initial_areas) if t0 == self.start else carried
        return Allocation(
            t0,
            t1,
            set(filter(keep, self.x_select)),
            set(filter(keep, self.y_place)),
            set(filter(keep, self.z_channel)),
            {k: v for k, v in self.s_area.items() if keep(k)},
            set(filter(keep, self.b_poa)),
            set(filter(keep, self.r_path)),
            initial,
        )

    def merge(self, other):
        """Adds every entry of ``other`` and widens the frame range."""
        if self.stop == self.start:
            self.start, self.initial_areas = other.start, dict(other.initial_areas)
        self.start = min(self.start, other.start)
        self.stop = max(self.stop, other.stop)
        self.x_select |= other.x_select
        self.y_place |= other.y_place
        self.z_channel |= other.z_channel
        self.s_area.update(other.s_area)
        self.b_poa |= other.b_poa
        self.r_path |= other.r_path
        return self

    def copy(self):
        return self.slice(self.start, self.stop)

    def key(self):
        """Total order used for deterministic tie-breaking."""
        return (
            tuple(sorted(self.s_area.items())),
            tuple(sorted(self.b_poa)),
            tuple(sorted(self.z_channel)),
            tuple(sorted(self.y_place)),
            tuple(sorted(self.r_path)),
            tuple(sorted(self.x_select)),
        )

    def to_dict(self):
        return {
            "start": self.start,
            "stop": self.stop,
            "x_select": [list(e) for e in sorted(self.x_select)],
            "y_place": [list(e) for e in sorted(self.y_place)],
            "z_channel": [list(e) for e in sorted(self.z_channel)],
            "s_area": [[t, n, a] for (t, n), a in sorted(self.s_area.items())],
            "b_poa": [list(e) for e in sorted(self.b_poa)],
            "r_path": [list(e) for e in sorted(self.r_path)],
            "initial_areas": {int(n): int(a) for n, a in sorted(self.initial_areas.items())},
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            doc["start"],
            doc["stop"],
            {tuple(e) for e in doc.get("x_select", [])},
            {tuple(e) for e in doc.get("y_place", [])},
            {tuple(e) for e in doc.get("z_channel", [])},
            {(t, n): a for t, n, a in doc.get("s_area", [])},
            {tuple(e) for e in doc.get("b_poa", [])},
            {tuple(e) for e in doc.get("r_path", [])},
            {int(n): int(a) for n, a in (doc.get("initial_areas") or {}).items()},
        )


@export
class Problem(object):
    """An instance together with its realized exogenous trajectories.

    ``tail_rule`` selects the frame whose PoA terminates an inquiry path:
    ``window_end`` uses the last frame of the request's window (offline
    allocations) and ``current`` the frame being routed (online frames)."""

    def __init__(self, instance, realization, tail_rule="window_end"):
        if tail_rule not in ("window_end", "current"):
            raise ValueError(f"unknown tail rule {tail_rule}")
        self.instance = instance
        self.realization = realization
        self.tail_rule = tail_rule
        self.requests = tuple(realization.requests)
        self._by_id = {r.id: r for r in self.requests}

    @property
    def topology(self):
        return self.instance.topology

    @property
    def horizon(self):
        return self.realization.frames

    def request(self, r):
        return self._by_id[r]

    def ue_area(self, t, u):
        return int(self.realization.ue_areas[t, u])

    def quality(self, t, slot, c, a):
        return int(self.realization.quality[t, slot, c, a])

    def active(self, t):
        return [r for r in self.requests if r.is_active(t)]

    def tail_frame(self, r, t):
        if self.tail_rule == "current":
            return t
        return min(r.last_frame, self.horizon - 1)


@export
@dataclass
class EnergyBreakdown:
    placement: float = 0.0
    movement: float = 0.0
    transmission: float = 0.0
    channel: float = 0.0

    @property
    def total(self):
        return self.placement + self.movement + self.transmission + self.channel

    def __add__(self, other):
        return EnergyBreakdown(
            self.placement + other.placement,
            self.movement + other.movement,
            self.transmission + other.transmission,
            self.channel + other.channel,
        )


@export
@dataclass
class ObjectiveReport:
    accepted_count: int
    total_energy: float
    objective_value: float
    alpha: float
    energy: EnergyBreakdown = field(default_factory=EnergyBreakdown)
    violations: int = 0

    @property
    def feasible(self):
        return self.violations == 0

    def to_dict(self):
        return {
            "accepted_count": self.accepted_count,
            "total_energy": float(self.total_energy),
            "objective_value": float(self.objective_value),
            "alpha": float(self.alpha),
            "energy": {k: float(v) for k, v in vars(self.energy).items()},
            "violations": self.violations,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            doc["accepted_count"], doc["total_energy"], doc["objective_value"], doc["alpha"],
            EnergyBreakdown(**doc.get("energy", {})), doc.get("violations", 0),
        )


@export
@dataclass(frozen=True)
class ConstraintViolation:
    constraint: str
    entity: Tuple
    detail: str

    def __str__(self):
        return f"{self.constraint} {self.entity}: {self.detail}"


def check_structure(alloc, problem):
    inst = problem.instance
    topo = inst.topology
    frames = range(alloc.start, alloc.stop)
    slots = inst.time.slots_per_frame
    requests = problem._by_id
    functions = set(inst.functions)

    def need(ok, what):
        if not ok:
            raise StructuralError(f"allocation refers to {what}")

    need(0 <= alloc.start <= alloc.stop <= max(problem.horizon, alloc.stop), "an empty frame range")
    for t, r, f in alloc.x_select:
        need(t in frames and r in requests and f in functions, f"selection {(t, r, f)}")
    for t, f, n in alloc.y_place:
        need(t in frames and f in functions and 0 <= n < len(topo.nodes), f"placement {(t, f, n)}")
    for t, s, r, c in alloc.z_channel:
        need(t in frames and 0 <= s < slots and r in requests and 0 <= c < len(inst.channels), f"slot {(t, s, r, c)}")
    for (t, n), a in alloc.s_area.items():
        need(t in frames and 0 <= n < len(topo.nodes) and 0 <= a < topo.grid.n_areas, f"area {(t, n, a)}")
    for t, u, n in alloc.b_poa:
        need(t in frames and 0 <= u < inst.n_ues and 0 <= n < len(topo.nodes), f"binding {(t, u, n)}")
    for t, r, p in alloc.r_path:
        need(t in frames and r in requests and 0 <= p < len(topo.paths), f"route {(t, r, p)}")
    need(max(frames, default=-1) < problem.horizon, f"frames beyond the horizon {problem.horizon}")


@export
def load_fractions(alloc, problem, t):
    """Committed bandwidth share of every link during frame t-1."""
    topo = problem.topology
    used = defaultdict(float)
    for tt, r, p in alloc.r_path:
        if tt == t - 1:
            for l in topo.paths[p].link_sequence:
                used[l] += problem.request(r).bandwidth_req
    return {l: min(1.0, used[l] / topo.links[l].bandwidth_capacity) for l in used}


@export
def path_latency(topology, path, request, loads):
    return sum(link_latency(topology.links[l], request, loads.get(l, 0.0)) for l in path.link_sequence)


@export
def request_latency(alloc, problem, r):
    """Σ over the window of the latency of every selected path."""
    req = problem.request(r) if isinstance(r, int) else r
    topo = problem.topology
    total = 0.0
    for t in req.window(alloc.stop):
        loads = load_fractions(alloc, problem, t)
        for p in alloc.paths_of(t, req.id):
            total += path_latency(topo, topo.paths[p], req, loads)
    return total


@export
def frame_energy(alloc, problem, frames=None):
    inst = problem.instance
    topo = inst.topology
    frames = set(alloc.frames if frames is None else frames)
    e = EnergyBreakdown()
    for t, f, n in alloc.y_place:
        if t in frames:
            e.placement += topo.nodes[n].deploy_energy
    for node in topo.uavs:
        for t in sorted(frames):
            prev, cur = alloc.node_area(t - 1, node.id), alloc.node_area(t, node.id)
            if t == alloc.start and prev is None:
                prev = node.initial_area
            if prev is not None and cur is not None and prev != cur:
                e.movement += move_energy(topo.grid, node, prev, cur)
    for t, r, p in alloc.r_path:
        if t in frames:
            e.transmission += sum(topo.links[l].transmit_energy for l in topo.paths[p].link_sequence)
    for t, s, r, c in alloc.z_channel:
        if t in frames:
            e.channel += inst.channels[c].use_energy
    return e


@export
def total_energy(alloc, problem):
    """W̄ with every term exposed; raises StructuralError on bad indices."""
    check_structure(alloc, problem)
    return frame_energy(alloc, problem)


@export
def acceptance(alloc, r):
    """X̃_r: 1 iff every function is selected in every frame of the window
    (clipped to the allocation's frames). Empty windows are not accepted."""
    window = r.window(alloc.stop)
    if len(window) == 0:
        return 0
    return int(all((t, r.id, f) in alloc.x_select for t in window for f in r.capacity_req))


@export
def covers_chain(path, chain, placed):
    """First function of ``chain`` the path misses in order, or None when
    the path visits a node of ``placed(f)`` for every f in sequence."""
    pos = 0
    seq = path.node_sequence
    for f in chain:
        nodes = placed(f)
        j = next((j for j in range(pos, len(seq)) if seq[j] in nodes), None)
        if j is None:
            return f
        pos = j
    return None


@export
def check_constraints(alloc, problem, frames=None):
    """Evaluates C3-C12 over ``frames`` (default: all frames of the
    allocation) and returns every violation found."""
    inst = problem.instance
    topo = inst.topology
    frames = list(alloc.frames if frames is None else frames)
    frame_set = set(frames)
    out = []
    add = lambda c, entity, detail: out.append(ConstraintViolation(c, tuple(entity), detail))

    channels_of = defaultdict(set)
    cells = defaultdict(list)
    quality_slots = defaultdict(int)
    for t, s, r, c in alloc.z_channel:
        if t not in frame_set:
            continue
        req = problem.request(r)
        a = problem.ue_area(t, req.ue)
        channels_of[(t, s, r)].add(c)
        cells[(t, s, c, a)].append(r)
        quality_slots[(t, r)] += problem.quality(t, s, c, a)
    # C3
    for (t, s, r), chans in sorted(channels_of.items()):
        if len(chans) > 1:
            add("C3", (t, s, r), f"request uses {len(chans)} channels in one slot")
    # C4
    for (t, s, c, a), rs in sorted(cells.items()):
        if len(rs) > 1:
            add("C4", (c, a, t, s), f"requests {sorted(rs)} share channel {c} in area {a}")

    selected = defaultdict(set)
    for t, r, f in alloc.x_select:
        if t in frame_set:
            selected[(t, r)].add(f)
    # C5
    demand = defaultdict(int)
    deployed = defaultdict(int)
    for (t, r), fs in selected.items():
        for f in fs:
            demand[(t, f)] += 1
    for t, f, n in alloc.y_place:
        deployed[(t, f)] += 1
    for t in frames:
        active = max(len(problem.active(t)), 1)
        for f in inst.functions:
            if deployed[(t, f)] < demand[(t, f)] / active - TOL:
                add("C5", (t, f), "selected function is not deployed on any node")
    # C6
    for (t, r), fs in sorted(selected.items()):
        req = problem.request(r)
        if quality_slots[(t, r)] < req.required_slots:
            add("C6", (t, r), f"{quality_slots[(t, r)]} quality slots for {req.required_slots} required")
    # C7
    routed = {(t, r) for (t, r, _) in alloc.r_path if t in frame_set}
    for t, r in sorted(set(selected) | routed):
        paths = alloc.paths_of(t, r)
        if (t, r) not in selected:
            if len(paths) > 1:
                add("C7", (t, r), f"{len(paths)} paths for one request")
            continue
        if len(paths) != 1:
            add("C7", (t, r), f"expected exactly one path, found {len(paths)}")
            continue
        req = problem.request(r)
        path = topo.paths[paths[0]]
        head = alloc.poa(req.entry_frame, req.ue)
        tail = alloc.poa(problem.tail_frame(req, t), req.ue)
        if head is None or path.head != head:
            add("C7", (t, r, path.id), f"path head {path.head} is not the entry PoA {head}")
        if tail is None or path.tail != tail:
            add("C7", (t, r, path.id), f"path tail {path.tail} is not the PoA {tail}")
        areas = alloc.areas_at(t)
        if len(areas) == len(topo.nodes):
            if not topo.available_links(areas).issuperset(path.link_sequence):
                add("C7", (t, r, path.id), "path uses a link unavailable in this frame")
        missing = covers_chain(path, inst.service(req.service).chain, lambda f: alloc.placements(t, f))
        if missing is not None:
            add("C7", (t, r, path.id), f"function {missing} not visited in chain order")
    # C8
    load = defaultdict(float)
    for (t, r), fs in selected.items():
        req = problem.request(r)
        for f in fs:
            for n in alloc.placements(t, f):
                load[(t, n)] += req.capacity_req[f]
    for (t, n), v in sorted(load.items()):
        if v > topo.nodes[n].processing_capacity + TOL:
            add("C8", (t, n), f"load {v:.3f} exceeds capacity {topo.nodes[n].processing_capacity:.3f}")
    # C9
    bandwidth = defaultdict(float)
    for t, r, p in alloc.r_path:
        if t in frame_set:
            for l in topo.paths[p].link_sequence:
                bandwidth[(t, l)] += problem.request(r).bandwidth_req
    for (t, l), v in sorted(bandwidth.items()):
        if v > topo.links[l].bandwidth_capacity + TOL:
            add("C9", (t, l), f"bandwidth {v:.3f} exceeds {topo.links[l].bandwidth_capacity:.3f}")
    # C10
    for t in frames:
        for node in topo.nodes:
            a = alloc.s_area.get((t, node.id))
            if a is None:
                add("C10", (t, node.id), "node has no area")
            elif not node.is_uav and a != node.fixed_area:
                add("C10", (t, node.id), f"fixed node moved to area {a}")
    # C11
    bound = defaultdict(list)
    for t, u, n in alloc.b_poa:
        if t in frame_set:
            bound[(t, u)].append(n)
    for (t, u), nodes in sorted(bound.items()):
        if len(nodes) > 1:
            add("C11", (t, u), f"UE bound to {len(nodes)} PoAs")
        for n in nodes:
            if not topo.nodes[n].has_radio or alloc.s_area.get((t, n)) != problem.ue_area(t, u):
                add("C11", (t, u, n), "PoA outside the UE's area")
    # C12
    for req in problem.requests:
        window = req.window(alloc.stop)
        if len(window) == 0 or window[-1] not in frame_set or not acceptance(alloc, req):
            continue
        latency = request_latency(alloc, problem, req)
        if latency > req.latency_req + TOL:
            add("C12", (req.id,), f"latency {latency:.3f} ms exceeds {req.latency_req:.3f} ms")
    return out


@export
def accepted_requests(alloc, problem):
    return [r for r in problem.requests if acceptance(alloc, r)]


@export
def objective(alloc, problem, alpha=0.001):
    """Σ_r X̃_r − α·W̄; infeasible allocations still get a diagnostic value
    with the violation count recorded."""
    energy = total_energy(alloc, problem)
    accepted = len(accepted_requests(alloc, problem))
    violations = len(check_constraints(alloc, problem))
    if violations:
        logging.debug(f"objective of an infeasible allocation ({violations} violations)")
    return ObjectiveReport(accepted, energy.total, accepted - alpha * energy.total, alpha, energy, violations)


@export
def save_certificate(path, alloc, report, explored=None):
    doc = {"allocation": alloc.to_dict(), "objective": report.to_dict()}
    if explored is not None:
        doc["explored"] = int(explored)
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


@export
def load_certificate(path):
    with open(path) as f:
        doc = yaml.safe_load(f)
    return Allocation.from_dict(doc["allocation"]), ObjectiveReport.from_dict(doc["objective"])
