"""Static domain types of the UAV-assisted edge-cloud network: time base, area
grid, nodes, links, paths, services, requests and channels, together with
topology construction, path enumeration, validation and the YAML instance
document."""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np
import yaml
from scipy.integrate import trapezoid

from .utils import export, seed_stream


@export
class DimensionError(ValueError):
    """Raised when a grid or time base is built with empty dimensions."""

    pass


@export
class InstanceError(ValueError):
    """Raised when an instance document cannot be turned into a model."""

    pass


@export
class NodeKind(str, Enum):
    CORE = "core"
    RSU = "rsu"
    UAV = "uav"


@export
class Heading(str, Enum):
    N = "N"
    S = "S"
    E = "E"
    W = "W"

    @property
    def delta(self):
        return {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}[self.value]

    def left(self):
        return {"N": Heading.W, "W": Heading.S, "S": Heading.E, "E": Heading.N}[self.value]

    def right(self):
        return {"N": Heading.E, "E": Heading.S, "S": Heading.W, "W": Heading.N}[self.value]

    def reverse(self):
        return {"N": Heading.S, "S": Heading.N, "E": Heading.W, "W": Heading.E}[self.value]


@export
@dataclass(frozen=True)
class TimeBase:
    total_frames: int
    slots_per_frame: int
    current_frame: int = 0
    current_slot: int = 0

    def __post_init__(self):
        if self.slots_per_frame < 1:
            raise DimensionError(f"slots_per_frame must be >= 1, got {self.slots_per_frame}")
        if self.total_frames < 0:
            raise DimensionError(f"total_frames must be >= 0, got {self.total_frames}")
        if not 0 <= self.current_slot < self.slots_per_frame:
            raise DimensionError(f"current_slot {self.current_slot} outside [0,{self.slots_per_frame})")

    def global_slot(self, frame, slot):
        return frame * self.slots_per_frame + slot


@export
@dataclass(frozen=True)
class AreaGrid:
    """Rectangular grid of areas, numbered row-major, with per-area LoS
    probabilities. ``cell_size`` is the side of one area in meters."""

    rows: int
    cols: int
    los_probability: Tuple[float, ...]
    cell_size: float = 2000.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"grid dimensions must be >= 1, got {self.rows}x{self.cols}")

    @property
    def n_areas(self):
        return self.rows * self.cols

    @property
    def area_ids(self):
        return range(self.n_areas)

    def coords(self, a):
        return divmod(a, self.cols)

    def area_at(self, row, col):
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row * self.cols + col
        return None

    def neighbor(self, a, heading):
        row, col = self.coords(a)
        dr, dc = Heading(heading).delta
        return self.area_at(row + dr, col + dc)

    @cached_property
    def adjacency(self):
        return tuple(
            frozenset(n for h in Heading if (n := self.neighbor(a, h)) is not None)
            for a in self.area_ids
        )

    def center(self, a):
        row, col = self.coords(a)
        return ((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def manhattan(self, a1, a2):
        (r1, c1), (r2, c2) = self.coords(a1), self.coords(a2)
        return abs(r1 - r2) + abs(c1 - c2)

    def distance(self, a1, a2):
        (x1, y1), (x2, y2) = self.center(a1), self.center(a2)
        return math.hypot(x1 - x2, y1 - y2)

    def poa_distance(self, a_ue, a_poa):
        """Distance used by the channel model; half a cell inside one area."""
        return max(self.distance(a_ue, a_poa), self.cell_size / 2)


@export
@dataclass(frozen=True)
class VelocityProfile:
    """Piecewise-linear speed profile V_w(t) given by knots (times, speeds).
    Speeds are held constant outside the knot range."""

    times: Tuple[float, ...]
    speeds: Tuple[float, ...]

    def __post_init__(self):
        if len(self.times) != len(self.speeds) or len(self.times) < 1:
            raise ValueError("velocity profile needs matching, non-empty knots")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise ValueError("velocity profile knot times must be strictly increasing")

    def __call__(self, t):
        return np.interp(t, self.times, self.speeds)

    @property
    def cruise_speed(self):
        if len(self.times) == 1:
            return float(self.speeds[0])
        span = self.times[-1] - self.times[0]
        return float(trapezoid(self.speeds, self.times) / span)


@export
@dataclass(frozen=True)
class UAVParams:
    weight: float = 5.0
    induced_power: float = 0.08
    air_density: float = 1.225
    rotor_disk_area: float = 0.6
    drag_coeff: float = 0.05
    frontal_area: float = 0.25
    velocity_profile: Union[float, VelocityProfile] = 10.0

    @property
    def cruise_speed(self):
        if isinstance(self.velocity_profile, VelocityProfile):
            return self.velocity_profile.cruise_speed
        return float(self.velocity_profile)


@export
@dataclass(frozen=True)
class NodeSpec:
    id: int
    kind: NodeKind
    processing_capacity: float
    deploy_energy: float
    fixed_area: Optional[int] = None
    uav_params: Optional[UAVParams] = None
    initial_area: Optional[int] = None

    @property
    def is_uav(self):
        return self.kind == NodeKind.UAV

    @property
    def has_radio(self):
        return self.kind != NodeKind.CORE

    @property
    def home_area(self):
        return self.initial_area if self.is_uav else self.fixed_area


@export
@dataclass(frozen=True)
class LinkSpec:
    id: int
    endpoints: Tuple[int, int]
    bandwidth_capacity: float
    transmit_energy: float
    base_latency: float


@export
@dataclass(frozen=True)
class PathSpec:
    id: int
    node_sequence: Tuple[int, ...]
    link_sequence: Tuple[int, ...]

    @property
    def head(self):
        return self.node_sequence[0]

    @property
    def tail(self):
        return self.node_sequence[-1]

    @property
    def hops(self):
        return len(self.link_sequence)

    def membership(self, link):
        """J_{p,l}"""
        return int(link in self.link_sequence)


@export
@dataclass(frozen=True)
class ServiceSpec:
    id: int
    functions: Tuple[int, ...]
    duration_frames: int
    data_graph: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.data_graph and len(self.functions) > 1:
            chain = tuple(zip(self.functions, self.functions[1:]))
            object.__setattr__(self, "data_graph", chain)

    @property
    def chain(self):
        """Functions in data-graph order (a topological order of the DAG)."""
        g = nx.DiGraph()
        g.add_nodes_from(self.functions)
        g.add_edges_from(self.data_graph)
        return tuple(nx.lexicographical_topological_sort(g, key=self.functions.index))


@export
@dataclass(frozen=True)
class Request:
    id: int
    ue: int
    service: int
    entry_frame: int
    duration_frames: int
    bandwidth_req: float
    capacity_req: Mapping[int, float] = field(hash=False)
    latency_req: float
    required_slots: int

    def __post_init__(self):
        values = [self.bandwidth_req, self.latency_req, self.required_slots, self.duration_frames]
        if min(values) <= 0 or any(v <= 0 for v in self.capacity_req.values()):
            raise ValueError(f"request {self.id}: requirement values must be > 0")

    @property
    def active_window(self):
        return range(self.entry_frame, self.entry_frame + self.duration_frames)

    @property
    def last_frame(self):
        return self.entry_frame + self.duration_frames - 1

    def is_active(self, t):
        return self.entry_frame <= t <= self.last_frame

    def window(self, horizon):
        """Active window clipped to frames [0, horizon)."""
        return range(self.entry_frame, min(self.entry_frame + self.duration_frames, horizon))

    @property
    def total_capacity(self):
        return float(sum(self.capacity_req.values()))


@export
@dataclass(frozen=True)
class ChannelPhysics:
    transmit_power: float = 0.1
    noise_density: float = 3.98e-21
    subcarrier_spacing: float = 180e3
    path_loss_exponent: float = 4.5
    reference_distance: float = 1.0
    quality_threshold: float = 1.0
    rayleigh_scale: float = 0.5


@export
@dataclass(frozen=True)
class ChannelSpec:
    id: int
    use_energy: float
    phys: ChannelPhysics = ChannelPhysics()


@export
class NetworkTopology(object):
    """Grid, nodes and links of the network plus the enumerated path catalog.

    Links touching a UAV are wireless and only usable while both endpoints'
    areas lie within ``uav_link_range`` grid hops of each other."""

    def __init__(self, grid, nodes, links, uav_link_range=2, max_hops=4):
        self.grid = grid
        self.nodes = tuple(nodes)
        self.links = tuple(links)
        self.uav_link_range = uav_link_range
        self.max_hops = max_hops

    def node(self, n):
        return self.nodes[n]

    @property
    def uavs(self):
        return tuple(n for n in self.nodes if n.is_uav)

    @cached_property
    def graph(self):
        g = nx.Graph()
        g.add_nodes_from(n.id for n in self.nodes)
        for link in self.links:
            g.add_edge(*link.endpoints, link=link.id)
        return g

    def link_between(self, a, b):
        return self.graph.edges[a, b]["link"]

    @cached_property
    def paths(self):
        """Catalog ℙ: single-node paths then every simple path up to max_hops."""
        sequences = [p.node_sequence for p in enumerate_paths(self, 0)]
        if self.max_hops > 0:
            sequences += [p.node_sequence for p in enumerate_paths(self, self.max_hops)]
        return tuple(self._as_path(i, seq) for i, seq in enumerate(sequences))

    @cached_property
    def paths_by_ends(self):
        index = {}
        for p in self.paths:
            index.setdefault((p.head, p.tail), []).append(p)
        return index

    def paths_between(self, head, tail):
        return self.paths_by_ends.get((head, tail), [])

    def _as_path(self, pid, seq):
        links = tuple(self.link_between(a, b) for a, b in zip(seq, seq[1:]))
        return PathSpec(pid, tuple(seq), links)

    def is_wireless(self, link):
        a, b = self.links[link].endpoints
        return self.nodes[a].is_uav or self.nodes[b].is_uav

    def available_links(self, node_areas):
        """Link ids usable given the node areas of one frame."""
        available = set()
        for link in self.links:
            a, b = link.endpoints
            if not self.is_wireless(link.id):
                available.add(link.id)
            elif self.grid.manhattan(node_areas[a], node_areas[b]) <= self.uav_link_range:
                available.add(link.id)
        return frozenset(available)

    def available_paths(self, node_areas):
        links = self.available_links(node_areas)
        return [p for p in self.paths if links.issuperset(p.link_sequence)]

    def __repr__(self):
        return (
            f"NetworkTopology({self.grid.rows}x{self.grid.cols} areas, "
            f"{len(self.nodes)} nodes, {len(self.links)} links)"
        )


@export
@dataclass
class Instance:
    """A complete static problem: topology, service catalog, channels,
    optional scripted requests and the UE population."""

    topology: NetworkTopology
    services: Tuple[ServiceSpec, ...]
    channels: Tuple[ChannelSpec, ...]
    time: TimeBase
    n_ues: int
    requests: Tuple[Request, ...] = ()
    seeds: Mapping[str, int] = field(default_factory=lambda: {"root": 0})
    arrival_rate: float = 0.0
    ue_initial_areas: Optional[Tuple[int, ...]] = None

    @property
    def grid(self):
        return self.topology.grid

    @property
    def functions(self):
        return tuple(sorted({f for s in self.services for f in s.functions}))

    def service(self, s):
        return self.services[s]

    @property
    def seed(self):
        return int(self.seeds.get("root", 0))


@export
@dataclass
class TopologyViolation:
    entity: str
    detail: str


@export
@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, entity, detail):
        self.violations.append(TopologyViolation(entity, detail))

    def __str__(self):
        if self.ok:
            return "0 violations"
        return "\n".join(f"{v.entity}: {v.detail}" for v in self.violations)


@export
def build_grid(rows, cols, los_range=(0.2, 0.8), rng_seed=0, cell_size=2000.0):
    """Builds a rows x cols area grid with LoS probabilities drawn uniformly
    from ``los_range`` using a generator seeded by ``rng_seed``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"grid dimensions must be >= 1, got {rows}x{cols}")
    lo, hi = los_range
    rng = seed_stream(rng_seed, "grid")
    los = rng.uniform(lo, hi, size=rows * cols) if hi > lo else np.full(rows * cols, lo)
    return AreaGrid(rows, cols, tuple(float(p) for p in los), cell_size)


@export
def enumerate_paths(topology, max_hops):
    """All directed simple paths with 1..max_hops links, or the single-node
    paths when max_hops is 0. Ids follow (hops, node sequence) order."""
    g = topology.graph
    if max_hops == 0:
        sequences = [(n,) for n in sorted(g.nodes)]
    else:
        sequences = []
        for s in sorted(g.nodes):
            for t in sorted(g.nodes):
                if s != t:
                    sequences += [tuple(p) for p in nx.all_simple_paths(g, s, t, cutoff=max_hops)]
        sequences.sort(key=lambda seq: (len(seq), seq))
    return [topology._as_path(i, seq) for i, seq in enumerate(sequences)]


@export
def validate_topology(topology):
    report = ValidationReport()
    grid = topology.grid
    if len(grid.los_probability) != grid.n_areas:
        report.add("grid", f"{len(grid.los_probability)} LoS entries for {grid.n_areas} areas")
    for a, p in enumerate(grid.los_probability):
        if not 0.0 <= p <= 1.0:
            report.add(f"area {a}", f"LoS probability {p} outside [0,1]")
    for i, node in enumerate(topology.nodes):
        name = f"node {node.id}"
        if node.id != i:
            report.add(name, f"id does not match position {i}")
        if node.is_uav and node.uav_params is None:
            report.add(name, "missing aerodynamic parameters")
        if not node.is_uav and node.uav_params is not None:
            report.add(name, "aerodynamic parameters on a non-UAV node")
        if not node.is_uav and node.fixed_area is None:
            report.add(name, "missing fixed area")
        for label, area in (("fixed_area", node.fixed_area), ("initial_area", node.initial_area)):
            if area is not None and not 0 <= area < grid.n_areas:
                report.add(name, f"{label} {area} outside grid")
        if node.processing_capacity <= 0:
            report.add(name, "processing capacity must be positive")
        if node.deploy_energy < 0:
            report.add(name, "deploy energy must be non-negative")
        if node.uav_params is not None:
            u = node.uav_params
            positives = [u.weight, u.air_density, u.rotor_disk_area, u.cruise_speed]
            if min(positives) <= 0 or min(u.induced_power, u.drag_coeff, u.frontal_area) < 0:
                report.add(name, "aerodynamic parameters out of range")
    seen = set()
    for i, link in enumerate(topology.links):
        name = f"link {link.id}"
        a, b = link.endpoints
        if link.id != i:
            report.add(name, f"id does not match position {i}")
        if a == b:
            report.add(name, "endpoints must be distinct")
        if not (0 <= a < len(topology.nodes) and 0 <= b < len(topology.nodes)):
            report.add(name, "endpoint is not a node")
        if frozenset((a, b)) in seen:
            report.add(name, "parallel link")
        seen.add(frozenset((a, b)))
        if link.bandwidth_capacity <= 0:
            report.add(name, "bandwidth capacity must be positive")
        if link.base_latency <= 0:
            report.add(name, "base latency must be positive")
        if link.transmit_energy < 0:
            report.add(name, "transmit energy must be non-negative")
    return report


@export
def validate_instance(instance):
    """Topology checks plus the service, request and channel invariants."""
    report = validate_topology(instance.topology)
    slots = instance.time.slots_per_frame
    for i, s in enumerate(instance.services):
        name = f"service {s.id}"
        if s.id != i:
            report.add(name, f"id does not match position {i}")
        if not s.functions:
            report.add(name, "no functions")
        if s.duration_frames < 1:
            report.add(name, "duration must be >= 1 frame")
        g = nx.DiGraph(list(s.data_graph))
        if not nx.is_directed_acyclic_graph(g):
            report.add(name, "data graph has a cycle")
    for r in instance.requests:
        name = f"request {r.id}"
        if not 0 <= r.service < len(instance.services):
            report.add(name, f"unknown service {r.service}")
            continue
        service = instance.services[r.service]
        if r.duration_frames != service.duration_frames:
            report.add(name, "active window length differs from service duration")
        if set(r.capacity_req) != set(service.functions):
            report.add(name, "capacity requirements do not cover the service functions")
        if r.required_slots > slots:
            report.add(name, f"required slots {r.required_slots} exceed {slots} slots per frame")
        if not 0 <= r.ue < instance.n_ues:
            report.add(name, f"unknown UE {r.ue}")
    for c in instance.channels:
        name = f"channel {c.id}"
        if c.use_energy < 0:
            report.add(name, "use energy must be non-negative")
        if c.phys.quality_threshold <= 0:
            report.add(name, "quality threshold must be positive")
        if c.phys.subcarrier_spacing <= 0:
            report.add(name, "subcarrier spacing must be positive")
    return report


def _spread_areas(rng, n, n_areas):
    if n <= n_areas:
        return [int(a) for a in rng.permutation(n_areas)[:n]]
    return [int(a) for a in rng.integers(0, n_areas, size=n)]


@export
def generate_instance(
    *,
    nodes=6,
    uav_share=0.5,
    rows=4,
    cols=4,
    channels=4,
    services=4,
    functions=6,
    max_chain=3,
    duration=(3, 10),
    ues=20,
    frames=200,
    slots=10,
    arrival_rate=3.0,
    max_hops=4,
    uav_link_range=2,
    seed=0,
):
    """Random instance drawn from the default parameter ranges. Every entity class draws from its own
    named seed stream so that scaling one class leaves the others intact."""
    if nodes < 2:
        raise InstanceError(f"need at least a core node and one edge node, got {nodes}")
    grid = build_grid(rows, cols, (0.2, 0.8), seed)
    n_uav = max(1, int(round((nodes - 1) * uav_share)))
    n_rsu = nodes - 1 - n_uav
    node_rng = seed_stream(seed, "nodes")
    area_rng = seed_stream(seed, "placement")
    rsu_areas = _spread_areas(area_rng, n_rsu + 1, grid.n_areas)
    uav_areas = _spread_areas(area_rng, n_uav, grid.n_areas)
    specs = []
    for i in range(nodes):
        capacity, energy = node_rng.uniform(25, 70), node_rng.uniform(12, 36)
        weight, speed = node_rng.uniform(4, 6), node_rng.uniform(8, 12)
        if i == 0:
            specs.append(NodeSpec(i, NodeKind.CORE, capacity, energy, fixed_area=rsu_areas[0]))
        elif i <= n_rsu:
            specs.append(NodeSpec(i, NodeKind.RSU, capacity, energy, fixed_area=rsu_areas[i]))
        else:
            params = UAVParams(weight=weight, velocity_profile=speed)
            specs.append(
                NodeSpec(i, NodeKind.UAV, capacity, energy, uav_params=params,
                         initial_area=uav_areas[i - n_rsu - 1])
            )
    pairs = [(0, r) for r in range(1, n_rsu + 1)]
    pairs += [(r, r + 1) for r in range(1, n_rsu)]
    uav_ids = range(n_rsu + 1, nodes)
    pairs += [(u, v) for u in uav_ids for v in range(n_rsu + 1)]
    pairs += [(u, v) for u in uav_ids for v in uav_ids if u < v]
    link_rng = seed_stream(seed, "links")
    links = [
        LinkSpec(i, pair, link_rng.uniform(10, 30), link_rng.uniform(5, 8), link_rng.uniform(4, 16))
        for i, pair in enumerate(pairs)
    ]
    topology = NetworkTopology(grid, specs, links, uav_link_range, max_hops)

    service_rng = seed_stream(seed, "services")
    catalog = []
    for s in range(services):
        k = int(service_rng.integers(1, min(max_chain, functions) + 1))
        chain = tuple(int(f) for f in service_rng.choice(functions, size=k, replace=False))
        catalog.append(ServiceSpec(s, chain, int(service_rng.integers(duration[0], duration[1] + 1))))

    channel_rng = seed_stream(seed, "channels")
    chans = []
    for c in range(channels):
        energy, scale = channel_rng.uniform(2, 8), channel_rng.uniform(0.2, 0.8)
        chans.append(ChannelSpec(c, energy, ChannelPhysics(rayleigh_scale=scale)))

    instance = Instance(
        topology,
        tuple(catalog),
        tuple(chans),
        TimeBase(frames, slots),
        ues,
        seeds={"root": seed},
        arrival_rate=arrival_rate,
    )
    logging.info(f"generated instance {topology} with {services} services, {channels} channels")
    return instance


def _profile_to_doc(profile):
    if isinstance(profile, VelocityProfile):
        return {"times": list(profile.times), "speeds": list(profile.speeds)}
    return float(profile)


def _profile_from_doc(doc):
    if isinstance(doc, dict):
        return VelocityProfile(tuple(doc["times"]), tuple(doc["speeds"]))
    return float(doc)


@export
def request_to_dict(r):
    return {
        "id": r.id,
        "ue": r.ue,
        "service": r.service,
        "entry_frame": r.entry_frame,
        "duration_frames": r.duration_frames,
        "bandwidth_req": float(r.bandwidth_req),
        "capacity_req": {int(f): float(v) for f, v in r.capacity_req.items()},
        "latency_req": float(r.latency_req),
        "required_slots": r.required_slots,
    }


@export
def request_from_dict(doc):
    return Request(
        doc["id"], doc["ue"], doc["service"], doc["entry_frame"], doc["duration_frames"], doc["bandwidth_req"],
        {int(f): float(v) for f, v in doc["capacity_req"].items()}, doc["latency_req"], doc["required_slots"],
    )


@export
def instance_to_dict(instance):
    topo = instance.topology
    nodes = []
    for n in topo.nodes:
        entry = {
            "id": n.id,
            "kind": n.kind.value,
            "processing_capacity": float(n.processing_capacity),
            "deploy_energy": float(n.deploy_energy),
        }
        if n.fixed_area is not None:
            entry["fixed_area"] = n.fixed_area
        if n.initial_area is not None:
            entry["initial_area"] = n.initial_area
        if n.uav_params is not None:
            u = n.uav_params
            entry["uav_params"] = {
                "weight": float(u.weight),
                "induced_power": u.induced_power,
                "air_density": u.air_density,
                "rotor_disk_area": u.rotor_disk_area,
                "drag_coeff": u.drag_coeff,
                "frontal_area": u.frontal_area,
                "velocity_profile": _profile_to_doc(u.velocity_profile),
            }
        nodes.append(entry)
    doc = {
        "grid": {
            "rows": topo.grid.rows,
            "cols": topo.grid.cols,
            "los_probability": [float(p) for p in topo.grid.los_probability],
            "cell_size": topo.grid.cell_size,
            "uav_link_range": topo.uav_link_range,
            "max_hops": topo.max_hops,
        },
        "time": {"total_frames": instance.time.total_frames, "slots_per_frame": instance.time.slots_per_frame},
        "nodes": nodes,
        "links": [
            {
                "id": l.id,
                "endpoints": list(l.endpoints),
                "bandwidth_capacity": float(l.bandwidth_capacity),
                "transmit_energy": float(l.transmit_energy),
                "base_latency": float(l.base_latency),
            }
            for l in topo.links
        ],
        "services": [
            {
                "id": s.id,
                "functions": list(s.functions),
                "data_graph": [list(e) for e in s.data_graph],
                "duration_frames": s.duration_frames,
            }
            for s in instance.services
        ],
        "channels": [
            {"id": c.id, "use_energy": float(c.use_energy), "phys": {k: float(v) for k, v in vars(c.phys).items()}}
            for c in instance.channels
        ],
        "requests": [request_to_dict(r) for r in instance.requests],
        "ues": {"count": instance.n_ues, "arrival_rate": float(instance.arrival_rate)},
        "seeds": {k: int(v) for k, v in instance.seeds.items()},
    }
    if instance.ue_initial_areas is not None:
        doc["ues"]["initial_areas"] = list(instance.ue_initial_areas)
    return doc


@export
def instance_from_dict(doc):
    try:
        g = doc["grid"]
        grid = AreaGrid(g["rows"], g["cols"], tuple(g["los_probability"]), g.get("cell_size", 2000.0))
        nodes = []
        for n in doc["nodes"]:
            params = n.get("uav_params")
            if params is not None:
                params = dict(params)
                params["velocity_profile"] = _profile_from_doc(params.get("velocity_profile", 10.0))
                params = UAVParams(**params)
            nodes.append(
                NodeSpec(
                    n["id"], NodeKind(n["kind"]), n["processing_capacity"], n["deploy_energy"],
                    n.get("fixed_area"), params, n.get("initial_area"),
                )
            )
        links = [
            LinkSpec(l["id"], tuple(l["endpoints"]), l["bandwidth_capacity"], l["transmit_energy"], l["base_latency"])
            for l in doc.get("links", [])
        ]
        topology = NetworkTopology(grid, nodes, links, g.get("uav_link_range", 2), g.get("max_hops", 4))
        services = tuple(
            ServiceSpec(s["id"], tuple(s["functions"]), s["duration_frames"],
                        tuple(tuple(e) for e in s.get("data_graph", [])))
            for s in doc["services"]
        )
        channels = tuple(
            ChannelSpec(c["id"], c["use_energy"], ChannelPhysics(**c.get("phys", {})))
            for c in doc["channels"]
        )
        requests = tuple(request_from_dict(r) for r in doc.get("requests") or [])
        t = doc.get("time", {})
        ues = doc.get("ues", {})
        initial = ues.get("initial_areas")
        return Instance(
            topology,
            services,
            channels,
            TimeBase(t.get("total_frames", 1), t.get("slots_per_frame", 10)),
            ues.get("count", 1 + max((r.ue for r in requests), default=0)),
            requests,
            dict(doc.get("seeds") or {"root": 0}),
            ues.get("arrival_rate", 0.0),
            tuple(initial) if initial is not None else None,
        )
    except (KeyError, TypeError) as e:
        raise InstanceError(f"malformed instance document: {e!r}") from e


@export
def save_instance(instance, path):
    with open(path, "w") as f:
        yaml.safe_dump(instance_to_dict(instance), f, sort_keys=False)


@export
def load_instance(path):
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise InstanceError(f"empty instance document {path}")
    instance = instance_from_dict(doc)
    logging.info(f"loaded instance {instance.topology} from {path}")
    return instance
