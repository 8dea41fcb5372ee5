"""Medium access: channel-quality beliefs, deadline priorities and the
resource-block grid every radio node fills each frame."""
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .utils import export


@export
class ChannelBeliefTable(object):
    """EWMA estimate Q̄_{c,a} of the Bernoulli quality of every channel in
    every area, shared by all observers."""

    def __init__(self, n_channels, n_areas, lam=0.3, belief=None):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0,1], got {lam}")
        self.lam = lam
        self.belief = np.full((n_channels, n_areas), 0.5) if belief is None else np.array(belief, dtype=float)

    def __getitem__(self, key):
        return self.belief[key]

    def copy(self):
        return ChannelBeliefTable(*self.belief.shape, lam=self.lam, belief=self.belief.copy())


@export
def observe_and_update(table, observations):
    """Q̄ ← λ·O + (1−λ)·Q̄ for every observed (c, a); returns a new table."""
    updated = table.copy()
    for (c, a), o in observations.items():
        if not 0.0 <= o <= 1.0:
            raise ValueError(f"observation {o} for channel {c}, area {a} outside [0,1]")
        updated.belief[c, a] = table.lam * o + (1 - table.lam) * table.belief[c, a]
    return updated


@export
def frame_observations(quality, areas):
    """Slot-averaged quality O_MAC of every channel in the observed areas."""
    means = quality.mean(axis=0)
    return {(c, a): float(means[c, a]) for a in sorted(set(areas)) for c in range(quality.shape[1])}


@export
@dataclass
class PriorityOrder:
    """Requests sorted by (remaining frames, required slots, id)."""

    entries: list = field(default_factory=list)

    @property
    def priorities(self):
        return {key[2]: key[0] for key, _ in self.entries}

    @property
    def requests(self):
        return [r for _, r in self.entries]

    def __len__(self):
        return len(self.entries)


@export
def priority_key(r, t):
    return (r.entry_frame + r.duration_frames - t, r.required_slots, r.id)


@export
def compute_priorities(requests, frame):
    return PriorityOrder(sorted(((priority_key(r, frame), r) for r in requests), key=lambda e: e[0]))


@export
@dataclass
class RBGrid:
    slots_per_frame: int
    cells: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    node_areas: dict = field(default_factory=dict)
    request_nodes: dict = field(default_factory=dict)

    def occupy(self, node, channel, start, stop, r):
        for s in range(start, stop):
            if (node, channel, s) in self.cells:
                raise ValueError(f"cell {(node, channel, s)} already taken")
            self.cells[(node, channel, s)] = r
        self.blocks[r] = (node, channel, start, stop)
        self.request_nodes[r] = node

    def z_entries(self, t):
        """Z̃ entries (t, slot, r, c) of the frame."""
        return {(t, s, r, c) for (n, c, s), r in self.cells.items()}

    def area_cells(self):
        """(area, channel, slot) -> occupants, for collision checks."""
        out = defaultdict(list)
        for (n, c, s), r in self.cells.items():
            out[(self.node_areas[n], c, s)].append(r)
        return out


@export
def partition_channels(node_areas, channels, nodes):
    """Round-robin split of the channel set among radio nodes sharing an area."""
    by_area = defaultdict(list)
    for n in sorted(nodes):
        by_area[node_areas[n]].append(n)
    share = defaultdict(list)
    for members in by_area.values():
        for i, c in enumerate(sorted(channels)):
            share[members[i % len(members)]].append(c)
    return share


@export
def allocate_channels(poa, areas, priorities, beliefs, slots, channels=None, rng=None):
    """Deadline-priority RB allocation.

    ``poa`` maps UE -> node (or None), ``areas`` maps radio node -> area. Each
    node walks its channels by descending belief in its area and hands every
    still unserved request, in priority order, one contiguous block of
    min(Ť_r, remaining) slots. With ``rng`` the channel and request orders are
    shuffled instead."""
    channels = range(beliefs.belief.shape[0]) if channels is None else channels
    grid = RBGrid(slots, node_areas=dict(areas))
    share = partition_channels(areas, channels, areas.keys())
    served_by = defaultdict(list)
    for r in priorities.requests:
        node = poa.get(r.ue)
        if node is not None and node in areas:
            served_by[node].append(r)
    for node in sorted(served_by):
        a = areas[node]
        mine = sorted(share[node], key=lambda c: (-beliefs[c, a], c))
        queue = list(served_by[node])
        if rng is not None:
            mine = [mine[i] for i in rng.permutation(len(mine))]
            queue = [queue[i] for i in rng.permutation(len(queue))]
        done = set()
        for c in mine:
            tau = 0
            while tau < slots:
                progress = False
                for r in queue:
                    if r.id in done or tau >= slots:
                        continue
                    stop = tau + min(r.required_slots, slots - tau)
                    grid.occupy(node, c, tau, stop, r.id)
                    done.add(r.id)
                    tau = stop
                    progress = True
                if not progress:
                    break
        if len(done) < len(queue):
            logging.debug(f"node {node}: {len(queue) - len(done)} requests left without RBs")
    return grid


@export
def served_quality_slots(grid, quality, r):
    if r not in grid.blocks:
        return 0
    node, c, start, stop = grid.blocks[r]
    a = grid.node_areas[node]
    return int(quality[start:stop, c, a].sum())


@export
def mac_reward(grid, realizations, requests):
    """Mean over active requests of min(quality slots served, Ť)/Ť."""
    if not requests:
        return 0.0
    total = sum(min(served_quality_slots(grid, realizations, r.id), r.required_slots) / r.required_slots for r in requests)
    return total / len(requests)


@export
def dump_rb_grid(path, records):
    """Writes (frame, node, channel, slot, request) rows of occupied cells."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "node", "channel", "slot", "request"])
        for t, grid in records:
            for (n, c, s), r in sorted(grid.cells.items()):
                writer.writerow([t, n, c, s, r])
