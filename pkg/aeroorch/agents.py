"""Trajectory planning (TP) and placement (PL) agents.

TP moves the UAVs once per frame from a window of per-area demand and UAV
positions, one factored decision per UAV. PL activates one node per
demanded function under an action mask and then routes every served
request along the cheapest feasible inquiry path."""
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .allocate import TOL, covers_chain, path_latency
from .environment import move_energy
from .learning import (
    EpsilonSchedule,
    NoValidActionError,
    QFunction,
    ReplayMemory,
    Transition,
    decay,
    epsilon_greedy,
    train_step,
)
from .nn import DuelingMLP
from .utils import export


@export
@dataclass
class AgentConfig:
    hidden: Tuple[int, ...] = (64, 64)
    tp_activation: str = "tanh"
    pl_activation: str = "leaky_relu"
    history: int = 4
    mac_lambda: float = 0.3
    route_penalty: float = -1.0
    predictor: str = "reference"
    learning_rate: float = 0.001
    discount: float = 0.8
    batch_size: int = 32
    sync_period: int = 200
    tp_memory: int = 2000
    pl_memory: int = 1000
    epsilon: float = 1.0
    epsilon_decrement: float = 0.00005
    epsilon_floor: float = 0.0001
    max_hops: int = 4
    jit: bool = True

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown agent settings {sorted(unknown)}")
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        if doc.get("predictor", "reference") not in ("reference", "learned"):
            raise ValueError(f"predictor must be reference or learned, got {doc['predictor']}")
        return cls(**doc)

    def to_dict(self):
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @property
    def schedule(self):
        return EpsilonSchedule(self.epsilon, self.epsilon_decrement, self.epsilon_floor)


@export
@dataclass(frozen=True)
class TPFrame:
    """One history entry: per-area demand and the UAV areas of a frame."""

    demand: np.ndarray
    uav_areas: Tuple[int, ...]


@export
def area_demand(ue_areas, requests, n_areas):
    """Σ_r Σ_f A_{u_r,a}·Ǐ_{r,f} for every area."""
    demand = np.zeros(n_areas)
    for r in requests:
        demand[ue_areas[r.ue]] += r.total_capacity
    return demand


@export
def tp_encode(history, n_areas, n_uavs, horizon=4):
    """Flat TP state: ``horizon`` blocks, oldest first, each the per-area
    demand followed by a one-hot area row per UAV. Missing early frames are
    zero blocks."""
    block = n_areas * (1 + n_uavs)
    out = np.zeros(horizon * block)
    frames = list(history)[-horizon:]
    offset = (horizon - len(frames)) * block
    for k, frame in enumerate(frames):
        base = offset + k * block
        out[base : base + n_areas] = frame.demand
        for i, a in enumerate(frame.uav_areas):
            out[base + n_areas * (1 + i) + a] = 1.0
    return out


def tp_query(state, i, n_uavs):
    onehot = np.zeros(n_uavs)
    onehot[i] = 1.0
    return np.concatenate([state, onehot])


@export
def select_poa(ue_areas, node_areas, nodes, residual):
    """UE -> PoA node: among radio nodes in the UE's area the one with the
    largest residual capacity, ties by id; None when the area is uncovered."""
    bound = {}
    for u, a in enumerate(ue_areas):
        candidates = [n.id for n in nodes if n.has_radio and node_areas.get(n.id) == a]
        bound[u] = min(candidates, key=lambda n: (-residual.get(n, 0.0), n)) if candidates else None
    return bound


@export
def relocation_energy(grid, uavs, before, after):
    """Λ summed over UAVs that change area."""
    return sum(move_energy(grid, n, before[n.id], after[n.id]) for n in uavs if before[n.id] != after[n.id])


@export
def tp_reward(poa_next, requests, movement_energy, alpha=0.001):
    """Covered requests minus α times the relocation energy."""
    covered = sum(1 for r in requests if poa_next.get(r.ue) is not None)
    return covered - alpha * movement_energy


@export
def tp_step(qf, state, uavs, schedule, rng, n_areas):
    """Per-UAV epsilon-greedy area choice; returns node id -> area."""
    return {
        node.id: epsilon_greedy(qf, tp_query(state, i, len(uavs)), schedule, np.ones(n_areas, dtype=bool), rng)
        for i, node in enumerate(uavs)
    }


@export
class TrajectoryPlanner(object):
    """TP agent: Q-function, schedule, replay memory and demand history.

    Transitions of a frame wait in ``pending`` until the next state is known."""

    def __init__(self, topology, config, rng, seed=0):
        self.topology = topology
        self.config = config
        self.uavs = topology.uavs
        self.n_areas = topology.grid.n_areas
        self.rng = rng
        nin = config.history * self.n_areas * (1 + len(self.uavs)) + len(self.uavs)
        self.qf = QFunction(
            lambda: DuelingMLP(nin, self.n_areas, config.hidden, config.tp_activation, seed),
            config.learning_rate,
            config.discount,
            config.sync_period,
            config.jit,
        )
        self.schedule = config.schedule
        self.memory = ReplayMemory(config.tp_memory, rng)
        self.history = deque(maxlen=config.history)
        self.pending = []

    def state(self, predicted=None):
        """O_TP; with ``predicted`` the newest block is that demand paired
        with the current UAV areas."""
        frames = list(self.history)
        if predicted is not None:
            last = frames[-1].uav_areas if frames else tuple(n.initial_area for n in self.uavs)
            frames = frames[1:] if len(frames) == self.config.history else frames
            frames.append(TPFrame(np.asarray(predicted, dtype=float), last))
        return tp_encode(frames, self.n_areas, len(self.uavs), self.config.history)

    def act(self, state, random=False):
        if random:
            return {n.id: int(self.rng.integers(self.n_areas)) for n in self.uavs}
        moves = tp_step(self.qf, state, self.uavs, self.schedule, self.rng, self.n_areas)
        self.pending = [(state, i, moves[n.id]) for i, n in enumerate(self.uavs)]
        return moves

    def record(self, frame):
        self.history.append(frame)

    def learn(self, reward, next_state, done=False):
        """Pushes the pending per-UAV transitions with ``reward`` and trains."""
        k = len(self.uavs)
        for state, i, action in self.pending:
            self.memory.push(Transition(tp_query(state, i, k), action, reward, tp_query(next_state, i, k), done))
        self.pending = []
        loss = None
        if len(self.memory) >= self.config.batch_size:
            loss = train_step(self.qf, self.memory.sample(self.config.batch_size))
        self.schedule = decay(self.schedule)
        return loss

    def get_state(self):
        """Demand history and the transitions still waiting for a reward."""
        return {
            "history": [[f.demand.tolist(), [int(a) for a in f.uav_areas]] for f in self.history],
            "pending": [[s.tolist(), int(i), int(a)] for s, i, a in self.pending],
        }

    def set_state(self, doc):
        self.history.clear()
        self.history.extend(TPFrame(np.array(d, dtype=float), tuple(a)) for d, a in doc["history"])
        self.pending = [(np.array(s, dtype=float), i, a) for s, i, a in doc["pending"]]


@export
def function_demand(requests, functions, served=None):
    """Σ Ǐ_{r,f} per function over requests holding a resource block."""
    index = {f: i for i, f in enumerate(functions)}
    out = np.zeros(len(functions))
    for r in requests:
        if served is None or r.id in served:
            for f, cap in r.capacity_req.items():
                out[index[f]] += cap
    return out


@export
def pl_state(demand, residual, energy):
    """O_PL: per-function demand, then (Ĉ_n, Ē_n) per node."""
    return np.concatenate([demand, np.stack([residual, energy], axis=1).ravel()])


@export
def pl_mask(demand, residual, predicted=None):
    """(f, n) validity: f must have demand and n must hold it within its
    residual. With ``predicted`` a row counts as demanded when either the
    prediction or the current demand is positive, so a function already
    requested this frame stays placeable when the prediction misses it;
    rows with neither are masked."""
    demand = np.asarray(demand, dtype=float)
    residual = np.asarray(residual, dtype=float)
    predicted = demand if predicted is None else np.maximum(np.asarray(predicted, dtype=float), demand)
    rows = predicted > 0
    fits = (residual[None, :] > TOL) & (demand[:, None] <= residual[None, :] + TOL)
    return rows[:, None] & fits


@export
def infeasible_functions(mask, demand):
    """Indices of demanded functions with every node masked."""
    return [i for i in range(len(demand)) if demand[i] > 0 and not mask[i].any()]


@export
@dataclass
class Placement:
    """Sequential PL pass: function -> node, the decision steps taken and
    the demanded functions left without a valid node."""

    nodes: Dict[int, int] = field(default_factory=dict)
    steps: List[Tuple[np.ndarray, int, np.ndarray]] = field(default_factory=list)
    infeasible: List[int] = field(default_factory=list)
    residual: Optional[np.ndarray] = None


@export
def pl_place(qf, functions, demand, capacity, energy, schedule, rng, predicted=None, random=False):
    """One placement decision per demanded function, ascending id. Every
    step masks all other rows, commits the chosen node's capacity and feeds
    the updated state to the next step."""
    n_nodes = len(capacity)
    residual = np.array(capacity, dtype=float)
    out = Placement()
    for i, f in enumerate(functions):
        if demand[i] <= 0:
            continue
        mask = pl_mask(demand, residual, predicted)
        row = np.zeros_like(mask)
        row[i] = mask[i]
        state = pl_state(demand, residual, energy)
        if not row.any():
            out.infeasible.append(f)
            continue
        flat = row.ravel()
        if random:
            valid = np.flatnonzero(flat)
            action = int(valid[rng.integers(len(valid))])
        else:
            try:
                action = epsilon_greedy(qf, state, schedule, flat, rng)
            except NoValidActionError:
                out.infeasible.append(f)
                continue
        n = action % n_nodes
        residual[n] -= demand[i]
        out.nodes[f] = n
        out.steps.append((state, action, pl_state(demand, residual, energy)))
    if out.infeasible:
        logging.warning(f"no node can host demanded functions {out.infeasible}")
    out.residual = residual
    return out


@export
@dataclass
class RouteResult:
    routes: Dict[int, int] = field(default_factory=dict)
    failed: List[int] = field(default_factory=list)
    latency: Dict[int, float] = field(default_factory=dict)
    bandwidth: Dict[int, float] = field(default_factory=dict)


@export
def pl_route(topology, services, placed, requests, ends, node_areas, loads=None, spent=None, rng=None):
    """Routes ``requests`` ascending by latency budget.

    ``ends`` maps request id -> (head, tail) PoAs and ``placed`` function ->
    nodes. A path qualifies when its links are available, it visits the
    service chain in order, leaves bandwidth for the request on every link
    and keeps the accumulated latency (``spent`` so far plus this frame)
    within budget. The cheapest path by Σξ̄ wins, then fewer hops, then
    lower id; with ``rng`` a qualifying path is drawn uniformly."""
    loads = {} if loads is None else loads
    spent = {} if spent is None else spent
    available = topology.available_links(node_areas)
    out = RouteResult()
    for r in sorted(requests, key=lambda r: (r.latency_req, r.id)):
        head, tail = ends.get(r.id, (None, None))
        if head is None or tail is None:
            out.failed.append(r.id)
            continue
        chain = services[r.service].chain
        feasible = []
        for path in topology.paths_between(head, tail):
            if not available.issuperset(path.link_sequence):
                continue
            if covers_chain(path, chain, lambda f: placed.get(f, ())) is not None:
                continue
            if any(
                out.bandwidth.get(l, 0.0) + r.bandwidth_req > topology.links[l].bandwidth_capacity + TOL
                for l in path.link_sequence
            ):
                continue
            latency = path_latency(topology, path, r, loads)
            if spent.get(r.id, 0.0) + latency > r.latency_req + TOL:
                continue
            cost = sum(topology.links[l].transmit_energy for l in path.link_sequence)
            feasible.append((cost, path.hops, path.id, latency))
        if not feasible:
            out.failed.append(r.id)
            continue
        if rng is not None:
            choice = feasible[int(rng.integers(len(feasible)))]
        else:
            choice = min(feasible)
        _, _, pid, latency = choice
        out.routes[r.id] = pid
        out.latency[r.id] = latency
        for l in topology.paths[pid].link_sequence:
            out.bandwidth[l] = out.bandwidth.get(l, 0.0) + r.bandwidth_req
    return out


@export
def pl_reward(alloc, topology, requests, alpha=0.001, failed=0, penalty=-1.0):
    """Requests with every function selected in the frame, minus α times
    placement and link energy, plus ``penalty`` per routing failure.

    Only deployments of functions some request selected are charged, so a
    frame whose routes all fail scores exactly ``penalty * failed``."""
    t = alloc.start
    accepted = sum(
        1 for r in requests.values() if r.capacity_req and all((t, r.id, f) in alloc.x_select for f in r.capacity_req)
    )
    used = {f for (_, _, f) in alloc.x_select}
    placement = sum(topology.nodes[n].deploy_energy for (_, f, n) in alloc.y_place if f in used)
    links = sum(
        topology.links[l].transmit_energy for (_, _, p) in alloc.r_path for l in topology.paths[p].link_sequence
    )
    return accepted - alpha * (placement + links) + penalty * failed


@export
class PlacementAgent(object):
    """PL agent over (function, node) actions."""

    def __init__(self, instance, config, rng, seed=0):
        self.instance = instance
        self.config = config
        self.rng = rng
        self.functions = instance.functions
        self.nodes = instance.topology.nodes
        nin = len(self.functions) + 2 * len(self.nodes)
        n_actions = len(self.functions) * len(self.nodes)
        self.qf = QFunction(
            lambda: DuelingMLP(nin, n_actions, config.hidden, config.pl_activation, seed + 1),
            config.learning_rate,
            config.discount,
            config.sync_period,
            config.jit,
        )
        self.schedule = config.schedule
        self.memory = ReplayMemory(config.pl_memory, rng)
        self.pending = []

    @property
    def capacity(self):
        return np.array([n.processing_capacity for n in self.nodes])

    @property
    def energy(self):
        return np.array([n.deploy_energy for n in self.nodes])

    def place(self, demand, predicted=None, random=False):
        placement = pl_place(
            self.qf, self.functions, demand, self.capacity, self.energy, self.schedule, self.rng, predicted, random
        )
        self.pending = [] if random else placement.steps
        return placement

    def learn(self, reward, done=False):
        for state, action, next_state in self.pending:
            self.memory.push(Transition(state, action, reward, next_state, done))
        self.pending = []
        loss = None
        if len(self.memory) >= self.config.batch_size:
            loss = train_step(self.qf, self.memory.sample(self.config.batch_size))
        self.schedule = decay(self.schedule)
        return loss

    def get_state(self):
        return {"pending": [[s.tolist(), int(a), n.tolist()] for s, a, n in self.pending]}

    def set_state(self, doc):
        self.pending = [(np.array(s, dtype=float), a, np.array(n, dtype=float)) for s, a, n in doc["pending"]]
