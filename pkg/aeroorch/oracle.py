"""Exhaustive exact solver for micro instances.

The search fixes the accepted request set first, then UAV areas for every
frame, the PoA bindings the inquiry paths need, and finally per frame the
channel slots, the host set of every demanded function and the routes.
Candidates are generated so that C3, C5, C6, C7, C10 and C11 hold by
construction; with ``prune`` the partial C4, C8, C9 and C12 checks and an
objective bound cut branches early, without it every leaf is checked in full."""
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass

from .allocate import TOL, Allocation, covers_chain, objective, path_latency
from .environment import move_energy
from .utils import export


@export
class SizeLimitError(RuntimeError):
    """The instance is too large for exhaustive enumeration."""

    pass


@export
@dataclass
class OracleLimits:
    max_nodes: int = 4
    max_uavs: int = 2
    max_areas: int = 4
    max_channels: int = 2
    max_slots: int = 3
    max_frames: int = 2
    max_requests: int = 2
    max_functions: int = 3

    def exceeded(self, problem):
        inst = problem.instance
        sizes = {
            "max_nodes": len(inst.topology.nodes),
            "max_uavs": len(inst.topology.uavs),
            "max_areas": inst.grid.n_areas,
            "max_channels": len(inst.channels),
            "max_slots": inst.time.slots_per_frame,
            "max_frames": problem.horizon,
            "max_requests": len(problem.requests),
            "max_functions": len(inst.functions),
        }
        return [f"{k}={v} > {getattr(self, k)}" for k, v in sizes.items() if v > getattr(self, k)]

    def fits(self, problem):
        return not self.exceeded(problem)


@export
@dataclass
class OracleResult:
    allocation: Allocation
    report: object
    explored: int


class _Search(object):
    def __init__(self, problem, alpha, prune):
        self.problem = problem
        self.alpha = alpha
        self.prune = prune
        self.inst = problem.instance
        self.topo = self.inst.topology
        self.T = problem.horizon
        # every non-empty set of hosts for one function, smallest first
        nodes = self.topo.nodes
        self.subsets = [c for k in range(1, len(nodes) + 1) for c in itertools.combinations(nodes, k)]
        self.best = None
        self.explored = 0

    # ordering: objective, then lower energy, then the smaller allocation key
    def _better(self, alloc, report):
        if self.best is None:
            return True
        best, b = self.best
        if abs(report.objective_value - b.objective_value) > 1e-12:
            return report.objective_value > b.objective_value
        if abs(report.total_energy - b.total_energy) > 1e-12:
            return report.total_energy < b.total_energy
        return alloc.key() < best.key()

    def _bound_cut(self, energy):
        if not self.prune or self.best is None:
            return False
        return len(self.accepted) - self.alpha * energy < self.best[1].objective_value - 1e-6

    def run(self):
        candidates = [r for r in sorted(self.problem.requests, key=lambda r: r.id) if len(r.window(self.T))]
        for bits in itertools.product((1, 0), repeat=len(candidates)):
            self.accepted = [r for r, b in zip(candidates, bits) if b]
            self._areas()
        return self.best, self.explored

    def _areas(self):
        topo = self.topo
        uavs = topo.uavs
        alloc = Allocation(0, self.T, initial_areas={n.id: n.home_area for n in topo.nodes})
        for t in range(self.T):
            for n in topo.nodes:
                if not n.is_uav:
                    alloc.set_area(t, n.id, n.fixed_area)
        grid = topo.grid
        for choice in itertools.product(grid.area_ids, repeat=len(uavs) * self.T):
            energy = 0.0
            for i, node in enumerate(uavs):
                prev = node.initial_area
                for t in range(self.T):
                    a = choice[t * len(uavs) + i]
                    alloc.set_area(t, node.id, a)
                    if a != prev:
                        energy += move_energy(grid, node, prev, a)
                    prev = a
            if self._bound_cut(energy):
                continue
            self._bindings(alloc, energy)

    def _bindings(self, alloc, energy):
        p = self.problem
        needed = set()
        for r in self.accepted:
            frames = r.window(self.T) if p.tail_rule == "current" else [r.entry_frame, p.tail_frame(r, r.entry_frame)]
            needed.update((t, r.ue) for t in frames)
        needed = sorted(needed)
        options = []
        for t, u in needed:
            a = p.ue_area(t, u)
            nodes = [n.id for n in self.topo.nodes if n.has_radio and alloc.node_area(t, n.id) == a]
            if not nodes:
                return
            options.append(nodes)
        for choice in itertools.product(*options):
            alloc.b_poa = {(t, u, n) for (t, u), n in zip(needed, choice)}
            self.steps = []
            for t in range(self.T):
                active = [r for r in self.accepted if t in r.window(self.T)]
                self.steps += [("Z", t, r) for r in active]
                funcs = sorted({f for r in active for f in r.capacity_req})
                self.steps += [("Y", t, f) for f in funcs]
                self.steps += [("R", t, r) for r in active]
            state = {
                "cells": set(),
                "load": defaultdict(float),
                "bandwidth": defaultdict(float),
                "latency": defaultdict(float),
            }
            self._descend(0, alloc, energy, state)
        alloc.b_poa = set()

    def _descend(self, i, alloc, energy, state):
        if self._bound_cut(energy):
            return
        if i == len(self.steps):
            return self._leaf(alloc, energy)
        kind, t, item = self.steps[i]
        getattr(self, "_step_" + kind)(i, t, item, alloc, energy, state)

    def _step_Z(self, i, t, r, alloc, energy, state):
        p = self.problem
        a = p.ue_area(t, r.ue)
        slots = self.inst.time.slots_per_frame
        usable = {s: [c.id for c in self.inst.channels if p.quality(t, s, c.id, a)] for s in range(slots)}
        usable = {s: cs for s, cs in usable.items() if cs}
        for chosen in itertools.combinations(sorted(usable), r.required_slots):
            for chans in itertools.product(*[usable[s] for s in chosen]):
                cells = {(t, s, c, a) for s, c in zip(chosen, chans)}
                if self.prune and cells & state["cells"]:
                    continue
                entries = {(t, s, r.id, c) for s, c in zip(chosen, chans)}
                cost = sum(self.inst.channels[c].use_energy for c in chans)
                alloc.z_channel |= entries
                state["cells"] |= cells
                self._descend(i + 1, alloc, energy + cost, state)
                alloc.z_channel -= entries
                state["cells"] -= cells

    def _step_Y(self, i, t, f, alloc, energy, state):
        demand = sum(r.capacity_req[f] for r in self.accepted if t in r.window(self.T) and f in r.capacity_req)
        for nodes in self.subsets:
            if self.prune and any(
                state["load"][(t, n.id)] + demand > n.processing_capacity + TOL for n in nodes
            ):
                continue
            entries = {(t, f, n.id) for n in nodes}
            alloc.y_place |= entries
            for n in nodes:
                state["load"][(t, n.id)] += demand
            self._descend(i + 1, alloc, energy + sum(n.deploy_energy for n in nodes), state)
            for n in nodes:
                state["load"][(t, n.id)] -= demand
            alloc.y_place -= entries

    def _step_R(self, i, t, r, alloc, energy, state):
        p = self.problem
        topo = self.topo
        head = alloc.poa(r.entry_frame, r.ue)
        tail = alloc.poa(p.tail_frame(r, t), r.ue)
        available = topo.available_links(alloc.areas_at(t))
        chain = self.inst.service(r.service).chain
        loads = {
            l: min(1.0, v / topo.links[l].bandwidth_capacity)
            for (tt, l), v in state["bandwidth"].items()
            if tt == t - 1 and v > 0
        }
        for path in topo.paths_between(head, tail):
            if not available.issuperset(path.link_sequence):
                continue
            if covers_chain(path, chain, lambda f: alloc.placements(t, f)) is not None:
                continue
            latency = path_latency(topo, path, r, loads)
            if self.prune:
                if any(
                    state["bandwidth"][(t, l)] + r.bandwidth_req > topo.links[l].bandwidth_capacity + TOL
                    for l in path.link_sequence
                ):
                    continue
                if state["latency"][r.id] + latency > r.latency_req + TOL:
                    continue
            cost = sum(topo.links[l].transmit_energy for l in path.link_sequence)
            alloc.route(t, r.id, path.id)
            for l in path.link_sequence:
                state["bandwidth"][(t, l)] += r.bandwidth_req
            state["latency"][r.id] += latency
            self._descend(i + 1, alloc, energy + cost, state)
            state["latency"][r.id] -= latency
            for l in path.link_sequence:
                state["bandwidth"][(t, l)] -= r.bandwidth_req
            alloc.r_path.discard((t, r.id, path.id))

    def _leaf(self, alloc, energy):
        self.explored += 1
        if self.best is not None and len(self.accepted) - self.alpha * energy < self.best[1].objective_value - 1e-6:
            return
        leaf = alloc.copy()
        for r in self.accepted:
            for t in r.window(self.T):
                for f in r.capacity_req:
                    leaf.select(t, r.id, f)
        report = objective(leaf, self.problem, self.alpha)
        if report.feasible and self._better(leaf, report):
            self.best = (leaf, report)


@export
def oracle_solve(problem, alpha=0.001, limits=None, prune=True):
    """Best feasible allocation of a micro problem by exhaustive search.

    Ties on the objective go to the lower total energy, then to the
    smaller ``Allocation.key``. Raises SizeLimitError when the problem
    exceeds ``limits``."""
    limits = OracleLimits() if limits is None else limits
    exceeded = limits.exceeded(problem)
    if exceeded:
        raise SizeLimitError(f"instance exceeds oracle limits: {', '.join(exceeded)}")
    best, explored = _Search(problem, alpha, prune).run()
    if best is None:
        raise RuntimeError("no feasible allocation found; node areas alone are always feasible")
    alloc, report = best
    logging.info(
        f"oracle explored {explored} leaves (prune={prune}): "
        f"{report.accepted_count} accepted, objective {report.objective_value:.6f}"
    )
    return OracleResult(alloc, report, explored)
