"""The frame loop: predictor, trajectory planning, channel access and
placement in that order, with hierarchical reward propagation once the
low-level policies have had their warm-up share of the horizon."""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import h5py
import numpy as np
from tqdm.auto import tqdm

from .agents import (
    AgentConfig,
    PlacementAgent,
    TPFrame,
    TrajectoryPlanner,
    area_demand,
    function_demand,
    pl_reward,
    pl_route,
    relocation_energy,
    select_poa,
    tp_reward,
)
from .allocate import (
    Allocation,
    Problem,
    acceptance,
    check_constraints,
    frame_energy,
    load_fractions,
    objective,
    path_latency,
    request_latency,
)
from .environment import Environment, Realization, WeatherState
from .learning import load_checkpoint, save_checkpoint
from .mac import (
    ChannelBeliefTable,
    allocate_channels,
    compute_priorities,
    frame_observations,
    mac_reward,
    observe_and_update,
    served_quality_slots,
)
from .model import InstanceError, instance_from_dict, instance_to_dict, validate_instance
from .predictor import LearnedPredictor, make_predictor, observe_frame
from .utils import export, seed_stream

STRUCTURAL = ("C3", "C4", "C10", "C11")
WORLD_FILE = "world.h5"


@export
class ConstraintDefect(AssertionError):
    """A frame allocation broke a constraint that holds by construction."""

    pass


@export
class PolicyKind(str, Enum):
    PERFECT = "perfect"
    RANDOM = "random"
    ORACLE_REPLAY = "oracle-replay"


@export
class Phase(str, Enum):
    LOW_LEVEL = "low-level"
    HIERARCHICAL = "hierarchical"


@export
@dataclass
class FrameOutcome:
    """One frame of an episode. ``selected`` counts requests routed this
    frame; acceptance needs every frame of a request's window."""

    frame: int
    allocation: Allocation
    rewards: Dict[str, float]
    selected: int
    energy: float
    latency: Dict[int, float] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)
    events: List[str] = field(default_factory=list)

    def to_record(self):
        return {
            "frame": self.frame,
            "allocation": self.allocation.to_dict(),
            "rewards": {k: float(v) for k, v in self.rewards.items()},
            "selected": int(self.selected),
            "energy": float(self.energy),
            "latency": {str(r): float(v) for r, v in sorted(self.latency.items())},
            "violations": list(self.violations),
            "events": list(self.events),
        }

    @classmethod
    def from_record(cls, doc):
        return cls(
            doc["frame"],
            Allocation.from_dict(doc["allocation"]),
            dict(doc["rewards"]),
            doc["selected"],
            doc["energy"],
            {int(r): v for r, v in doc.get("latency", {}).items()},
            list(doc.get("violations", [])),
            list(doc.get("events", [])),
        )


@export
def hierarchical_reward(r_tp, r_mac, r_pl, chi=0.5, kappa=0.8):
    """R_HL = R_TP + χ·R_MAC + κ·R_PL"""
    return r_tp + chi * r_mac + kappa * r_pl


@export
@dataclass
class EpisodeConfig:
    policy: PolicyKind = PolicyKind.PERFECT
    frames: Optional[int] = None
    seed: Optional[int] = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    phase_fraction: float = 0.25
    alpha: float = 0.001
    chi: float = 0.5
    kappa: float = 0.8
    arrival_rate: Optional[float] = None
    requests_per_frame: Optional[int] = None
    eval_fraction: float = 1.0
    test_mode: bool = False
    progress: bool = False

    def __post_init__(self):
        self.policy = PolicyKind(self.policy)
        if not 0.0 <= self.phase_fraction <= 1.0:
            raise ValueError(f"phase fraction must lie in [0,1], got {self.phase_fraction}")
        if not 0.0 < self.eval_fraction <= 1.0:
            raise ValueError(f"eval fraction must lie in (0,1], got {self.eval_fraction}")
        if self.frames is not None and self.frames < 0:
            raise ValueError(f"frames must be >= 0, got {self.frames}")
        if self.requests_per_frame is not None and self.requests_per_frame < 0:
            raise ValueError(f"requests per frame must be >= 0, got {self.requests_per_frame}")

    def to_dict(self):
        doc = asdict(self)
        doc["policy"] = self.policy.value
        doc["agent"] = self.agent.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["agent"] = AgentConfig.from_dict(doc.get("agent"))
        return cls(**doc)


class _Recorder(object):
    """Preallocated exogenous arrays so the checker can read frames so far."""

    def __init__(self, instance, frames):
        self.ue_areas = np.zeros((frames, instance.n_ues), dtype=np.int64)
        shape = (frames, instance.time.slots_per_frame, len(instance.channels), instance.grid.n_areas)
        self.quality = np.zeros(shape, dtype=np.int8)
        self.weather = []

    def add(self, state):
        self.ue_areas[state.frame] = state.ue_areas
        self.quality[state.frame] = state.quality
        self.weather.append(state.weather)

    def realization(self, requests):
        return Realization(self.ue_areas, self.quality, tuple(self.weather), tuple(requests))


@export
class Orchestrator(object):
    """Owns one simulated world and the agents acting on it."""

    def __init__(self, instance, config=None, certificate=None):
        self.instance = instance
        self.config = EpisodeConfig() if config is None else config
        cfg = self.config
        self.frames = instance.time.total_frames if cfg.frames is None else cfg.frames
        self.seed = instance.seed if cfg.seed is None else cfg.seed
        if cfg.policy == PolicyKind.ORACLE_REPLAY and certificate is None:
            raise ValueError("oracle-replay needs a certificate allocation")
        self.certificate = certificate
        self.env = Environment(instance, self.seed, cfg.arrival_rate, cfg.requests_per_frame)
        self.recorder = _Recorder(instance, self.frames)
        topo = instance.topology
        self.topology = topo
        self.planner = TrajectoryPlanner(topo, cfg.agent, seed_stream(self.seed, "tp"), self.seed)
        self.placer = PlacementAgent(instance, cfg.agent, seed_stream(self.seed, "pl"), self.seed)
        self.predictor = make_predictor(cfg.agent.predictor, instance.grid, instance.n_ues, len(instance.services), self.seed)
        self.policy_rng = seed_stream(self.seed, "policy")
        self.beliefs = ChannelBeliefTable(len(instance.channels), instance.grid.n_areas, cfg.agent.mac_lambda)
        self.node_areas = {n.id: n.home_area for n in topo.nodes}
        self.allocation = Allocation(0, 0, initial_areas=dict(self.node_areas))
        self.entry_poa = {}
        self.spent = {}
        self.bandwidth = {}
        self.tp_reward = None
        self.trace = []

    @property
    def frame(self):
        return self.env.frame + 1

    def phase(self, t):
        boundary = int(np.ceil(self.config.phase_fraction * self.frames))
        return Phase.LOW_LEVEL if t < boundary else Phase.HIERARCHICAL

    def problem(self, tail_rule="current"):
        return Problem(self.instance, self.recorder.realization(self.env.requests), tail_rule)

    def _uav_moves(self, t, random, predicted):
        state = self.planner.state(predicted)
        if self.tp_reward is not None and self.config.policy == PolicyKind.PERFECT:
            self.planner.learn(self.tp_reward, state)
        if self.config.policy == PolicyKind.ORACLE_REPLAY:
            return {n.id: self.certificate.s_area[(t, n.id)] for n in self.topology.uavs}
        return self.planner.act(state, random)

    def run_frame(self):
        cfg = self.config
        inst = self.instance
        topo = self.topology
        t = self.frame
        if t >= self.frames:
            raise IndexError(f"frame {t} beyond the horizon {self.frames}")
        perfect = cfg.policy == PolicyKind.PERFECT
        random = cfg.policy == PolicyKind.RANDOM
        replay = cfg.policy == PolicyKind.ORACLE_REPLAY
        events = []

        # predictor
        predicted_areas = predicted_functions = None
        if perfect:
            report = self.predictor.predict()
            carried = [r for r in self.env.active_requests(t - 1) if r.is_active(t)]
            predicted_areas = self.predictor.area_demand(report, carried)
            predicted_functions = report.function_demand(inst.services, inst.functions)

        # TP
        moves = self._uav_moves(t, random, predicted_areas)
        before = dict(self.node_areas)
        after = dict(before)
        after.update(moves)
        movement = relocation_energy(inst.grid, topo.uavs, before, after)
        self.node_areas = after

        state = self.env.advance()
        self.recorder.add(state)
        active = self.env.active_requests(t)
        capacity = {n.id: n.processing_capacity for n in topo.nodes}
        if replay:
            poa = {u: self.certificate.poa(t, u) for u in range(inst.n_ues)}
        else:
            poa = select_poa(state.ue_areas, after, topo.nodes, capacity)
        for r in state.arrivals:
            self.entry_poa[r.id] = poa.get(r.ue)

        frame_alloc = Allocation(t, t + 1, initial_areas=before)
        for n, a in after.items():
            frame_alloc.set_area(t, n, a)
        for u, n in poa.items():
            if n is not None:
                frame_alloc.bind(t, u, n)

        if replay:
            frame_alloc = self.certificate.slice(t)
            frame_alloc.initial_areas = before
            r_mac, latency, failed = self._replay_frame(t, frame_alloc, active, state.quality)
        else:
            latency, failed, r_mac = self._low_level(t, frame_alloc, poa, active, state, random, predicted_functions, events)

        r_tp = tp_reward(poa, active, movement, cfg.alpha)
        r_pl = pl_reward(frame_alloc, topo, {r.id: r for r in active}, cfg.alpha, len(failed), cfg.agent.route_penalty)
        r_hl = hierarchical_reward(r_tp, r_mac, r_pl, cfg.chi, cfg.kappa)
        phase = self.phase(t)
        if perfect:
            tp_target, pl_target = (r_hl, r_hl) if phase == Phase.HIERARCHICAL else (r_tp, r_pl)
            self.placer.learn(pl_target)
            self.tp_reward = tp_target
        uav_areas = tuple(after[n.id] for n in topo.uavs)
        self.planner.record(TPFrame(area_demand(state.ue_areas, active, inst.grid.n_areas), uav_areas))
        self.predictor.observe(observe_frame(self.env.ues, state.arrivals))

        problem = self.problem()
        violations = [str(v) for v in check_constraints(frame_alloc, problem, [t]) if v.constraint in STRUCTURAL]
        if violations:
            if cfg.test_mode:
                raise ConstraintDefect(f"frame {t}: {violations[0]}")
            logging.warning(f"frame {t}: {len(violations)} constraint violations, first {violations[0]}")
        energy = frame_energy(frame_alloc, problem, [t]).total
        selected = len({r for (_, r, _) in frame_alloc.x_select})
        outcome = FrameOutcome(
            t,
            frame_alloc,
            {"tp": float(r_tp), "mac": float(r_mac), "pl": float(r_pl), "hl": float(r_hl)},
            selected,
            float(energy),
            latency,
            violations,
            events,
        )
        self.allocation.merge(frame_alloc)
        self.trace.append(outcome)
        logging.debug(f"frame {t} ({phase.value}): {selected} requests selected, energy {energy:.2f}, R_HL {r_hl:.3f}")
        return outcome

    def _low_level(self, t, frame_alloc, poa, active, state, random, predicted_functions, events):
        inst = self.instance
        topo = self.topology
        radio = {n.id: frame_alloc.s_area[(t, n.id)] for n in topo.nodes if n.has_radio}

        # MAC
        priorities = compute_priorities(active, t)
        grid = allocate_channels(
            poa, radio, priorities, self.beliefs, inst.time.slots_per_frame,
            rng=self.policy_rng if random else None,
        )
        frame_alloc.z_channel |= grid.z_entries(t)
        r_mac = mac_reward(grid, state.quality, active)
        self.beliefs = observe_and_update(self.beliefs, frame_observations(state.quality, radio.values()))

        # PL
        served = set(grid.blocks)
        demand = function_demand(active, inst.functions, served)
        placement = self.placer.place(demand, predicted_functions, random)
        events += [f"function {f} infeasible" for f in placement.infeasible]
        placed = {}
        for f, n in placement.nodes.items():
            frame_alloc.place(t, f, n)
            placed[f] = {n}
        ready = [
            r for r in active
            if r.id in served and served_quality_slots(grid, state.quality, r.id) >= r.required_slots
        ]
        ends = {r.id: (self.entry_poa.get(r.id), poa.get(r.ue)) for r in ready}
        loads = {l: min(1.0, v / topo.links[l].bandwidth_capacity) for l, v in self.bandwidth.items()}
        result = pl_route(
            topo, inst.services, placed, ready, ends, frame_alloc.areas_at(t), loads, self.spent,
            self.policy_rng if random else None,
        )
        for r in active:
            if r.id in result.routes:
                frame_alloc.route(t, r.id, result.routes[r.id])
                for f in r.capacity_req:
                    frame_alloc.select(t, r.id, f)
                self.spent[r.id] = self.spent.get(r.id, 0.0) + result.latency[r.id]
        self.bandwidth = result.bandwidth
        return result.latency, result.failed, r_mac

    def _replay_frame(self, t, frame_alloc, active, quality):
        problem = self.problem("window_end")
        inst = self.instance
        shares = []
        for r in active:
            a = problem.ue_area(t, r.ue)
            got = sum(int(quality[s, c, a]) for (tt, s, rr, c) in frame_alloc.z_channel if tt == t and rr == r.id)
            shares.append(min(got, r.required_slots) / r.required_slots)
        r_mac = float(np.mean(shares)) if shares else 0.0
        latency = {}
        loads = load_fractions(self.allocation, problem, t)
        for _, r, p in frame_alloc.r_path:
            latency[r] = path_latency(inst.topology, inst.topology.paths[p], problem.request(r), loads)
        return r_mac, latency, []

    def finish(self):
        """Closes TP learning with a terminal transition."""
        if self.tp_reward is not None and self.config.policy == PolicyKind.PERFECT and self.planner.pending:
            self.planner.learn(self.tp_reward, self.planner.pending[0][0], done=True)
        self.tp_reward = None

    def save(self, directory):
        """Agents (parameters, schedules, replay) and the whole world at a
        frame boundary: stream positions, recorded exogenous arrays, UAV
        areas, the merged allocation, per-request bookkeeping and the trace."""
        os.makedirs(directory, exist_ok=True)
        save_checkpoint(
            os.path.join(directory, "tp.h5"), self.planner.qf, self.planner.schedule, self.planner.memory,
            frame=self.frame,
        )
        save_checkpoint(os.path.join(directory, "pl.h5"), self.placer.qf, self.placer.schedule, self.placer.memory)
        if isinstance(self.predictor, LearnedPredictor):
            p = self.predictor
            save_checkpoint(os.path.join(directory, "predictor.h5"), p.qf, p.schedule, p.memory)
        doc = {
            "episode": {"policy": self.config.policy.value, "frames": self.frames, "seed": self.seed},
            "env": self.env.get_state(),
            "weather": [None if w is None else w.regime for w in self.recorder.weather],
            "beliefs": self.beliefs.belief.tolist(),
            "node_areas": {int(n): (None if a is None else int(a)) for n, a in self.node_areas.items()},
            "allocation": self.allocation.to_dict(),
            "entry_poa": {int(r): (None if n is None else int(n)) for r, n in self.entry_poa.items()},
            "spent": {int(r): float(v) for r, v in self.spent.items()},
            "bandwidth": {int(l): float(v) for l, v in self.bandwidth.items()},
            "tp_reward": None if self.tp_reward is None else float(self.tp_reward),
            "policy_rng": self.policy_rng.bit_generator.state,
            "planner": self.planner.get_state(),
            "placer": self.placer.get_state(),
            "predictor": self.predictor.get_state(),
            "trace": [o.to_record() for o in self.trace],
        }
        with h5py.File(os.path.join(directory, WORLD_FILE), "w") as f:
            f.attrs["frame"] = self.frame
            f.create_dataset("state", data=json.dumps(doc))
            f.create_dataset("ue_areas", data=self.recorder.ue_areas)
            f.create_dataset("quality", data=self.recorder.quality)
        logging.info(f"saved frame {self.frame} of seed {self.seed} to {directory}")

    def restore(self, directory, world=True):
        """Loads the agents saved in ``directory``; with ``world`` also the
        world, so that running on continues the saved episode exactly."""
        self.planner.schedule, counters = load_checkpoint(
            os.path.join(directory, "tp.h5"), self.planner.qf, self.planner.memory
        )
        self.placer.schedule, _ = load_checkpoint(os.path.join(directory, "pl.h5"), self.placer.qf, self.placer.memory)
        if isinstance(self.predictor, LearnedPredictor):
            p = self.predictor
            p.schedule, _ = load_checkpoint(os.path.join(directory, "predictor.h5"), p.qf, p.memory)
        with h5py.File(os.path.join(directory, WORLD_FILE), "r") as f:
            doc = json.loads(f["state"][()])
            ue_areas, quality = f["ue_areas"][()], f["quality"][()]
        self.beliefs = ChannelBeliefTable(*self.beliefs.belief.shape, lam=self.beliefs.lam, belief=doc["beliefs"])
        if not world:
            return counters
        saved = doc["episode"]
        mine = {"policy": self.config.policy.value, "frames": self.frames, "seed": self.seed}
        if saved != mine:
            raise ValueError(f"{directory} holds episode {saved}, this orchestrator runs {mine}")
        self.recorder.ue_areas[...] = ue_areas
        self.recorder.quality[...] = quality
        self.recorder.weather = [None if w is None else WeatherState(w) for w in doc["weather"]]
        t = doc["env"]["frame"]
        self.env.set_state(doc["env"], quality[t] if t >= 0 else None)
        self.node_areas = {int(n): a for n, a in doc["node_areas"].items()}
        self.allocation = Allocation.from_dict(doc["allocation"])
        self.entry_poa = {int(r): n for r, n in doc["entry_poa"].items()}
        self.spent = {int(r): v for r, v in doc["spent"].items()}
        self.bandwidth = {int(l): v for l, v in doc["bandwidth"].items()}
        self.tp_reward = doc["tp_reward"]
        self.policy_rng.bit_generator.state = doc["policy_rng"]
        self.planner.set_state(doc["planner"])
        self.placer.set_state(doc["placer"])
        self.predictor.set_state(doc["predictor"])
        self.trace = [FrameOutcome.from_record(r) for r in doc["trace"]]
        logging.info(f"resumed seed {self.seed} at frame {self.frame} from {directory}")
        return counters


@export
def checkpoint_frame(directory):
    """First frame still to run after the checkpoint in ``directory``, or
    None when there is none."""
    path = os.path.join(directory, WORLD_FILE)
    if not os.path.exists(path):
        return None
    with h5py.File(path, "r") as f:
        return int(f.attrs["frame"])


@export
@dataclass
class EpisodeResult:
    trace: List[FrameOutcome]
    allocation: Allocation
    problem: Problem
    report: object
    metrics: Dict[str, float]
    orchestrator: Orchestrator


@export
def episode_metrics(allocation, problem, report, eval_fraction=1.0):
    """Acceptance %, energy per eligible request and mean E2E latency of
    accepted requests, over requests entering the trailing ``eval_fraction``
    of the horizon."""
    first = int(np.floor((1.0 - eval_fraction) * problem.horizon))
    eligible = [r for r in problem.requests if first <= r.entry_frame < problem.horizon]
    accepted = [r for r in eligible if acceptance(allocation, r)]
    latencies = [request_latency(allocation, problem, r) for r in accepted]
    return {
        "acceptance_pct": 100.0 * len(accepted) / len(eligible) if eligible else 0.0,
        "energy_per_request": report.total_energy / len(eligible) if eligible else report.total_energy,
        "latency_ms": float(np.mean(latencies)) if latencies else float("nan"),
        "objective": report.objective_value,
    }


@export
def run_episode(instance, config=None, certificate=None, orchestrator=None, on_frame=None):
    """Runs the frames of one episode still to go and scores the merged
    allocation. ``on_frame`` is called with the orchestrator after each frame."""
    config = EpisodeConfig() if config is None else config
    report = validate_instance(instance)
    if not report.ok:
        raise InstanceError(f"invalid instance: {report}")
    orch = Orchestrator(instance, config, certificate) if orchestrator is None else orchestrator
    if config.policy == PolicyKind.ORACLE_REPLAY and certificate.stop < orch.frames:
        raise ValueError(f"certificate covers {certificate.stop} frames, episode needs {orch.frames}")
    for _ in tqdm(range(orch.frame, orch.frames), desc=f"{config.policy.value} seed {orch.seed}", disable=not config.progress):
        orch.run_frame()
        if on_frame is not None:
            on_frame(orch)
    orch.finish()
    tail_rule = "window_end" if config.policy == PolicyKind.ORACLE_REPLAY else "current"
    problem = orch.problem(tail_rule)
    allocation = orch.allocation
    score = objective(allocation, problem, config.alpha)
    metrics = episode_metrics(allocation, problem, score, config.eval_fraction)
    metrics["reward"] = float(np.mean([o.rewards["hl"] for o in orch.trace])) if orch.trace else 0.0
    logging.info(
        f"{config.policy.value} seed {orch.seed}: {score.accepted_count} accepted, "
        f"energy {score.total_energy:.1f}, objective {score.objective_value:.3f}, {score.violations} violations"
    )
    return EpisodeResult(orch.trace, allocation, problem, score, metrics, orch)


@export
def write_trace(path, instance, config, outcomes):
    """NDJSON: a header record with the instance and episode settings, then
    one record per frame."""
    with open(path, "w") as f:
        header = {"instance": instance_to_dict(instance), "episode": config.to_dict()}
        f.write(json.dumps({"header": header}) + "\n")
        for o in outcomes:
            f.write(json.dumps(o.to_record()) + "\n")


@export
def read_trace(path):
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or "header" not in lines[0]:
        raise ValueError(f"{path}: missing trace header")
    header = lines[0]["header"]
    return header, [FrameOutcome.from_record(doc) for doc in lines[1:]]


@export
def replay_trace(path):
    """Re-runs the episode a trace was recorded from; returns the rerun and
    the frame numbers whose records differ."""
    header, outcomes = read_trace(path)
    instance = instance_from_dict(header["instance"])
    config = EpisodeConfig.from_dict(header["episode"])
    if config.policy == PolicyKind.ORACLE_REPLAY:
        certificate = Allocation()
        for o in outcomes:
            certificate.merge(o.allocation)
    else:
        certificate = None
    result = run_episode(instance, config, certificate)
    saved = [json.dumps(o.to_record(), sort_keys=True) for o in outcomes]
    rerun = [json.dumps(o.to_record(), sort_keys=True) for o in result.trace]
    mismatched = [i for i, (a, b) in enumerate(zip(saved, rerun)) if a != b]
    if len(saved) != len(rerun):
        mismatched.append(min(len(saved), len(rerun)))
    return result, mismatched
