"""Information gathering: where UEs go next and which services they issue.

Two predictors share one report contract. The reference predictor applies
the known Manhattan mobility law to each UE's last observed area and
heading; the learned one fits a dueling double Q-function over next-area
actions rewarded by prediction accuracy. Both estimate per-(area, service)
issuance with an exponentially decayed frequency."""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .environment import MANEUVER_LAW, turn
from .learning import EpsilonSchedule, QFunction, ReplayMemory, Transition, decay, epsilon_greedy, train_step
from .model import Heading
from .nn import DuelingMLP
from .utils import export

ISSUANCE_DECAY = 0.9


@export
@dataclass(frozen=True)
class Observation:
    """What the PoAs saw in one frame: each UE's (area, heading) and the
    (area, service) of every new request."""

    ues: Tuple[Tuple[int, Heading], ...]
    arrivals: Tuple[Tuple[int, int], ...] = ()
    capacities: Tuple[Tuple[int, float], ...] = ()


@export
def observe_frame(ues, arrivals):
    """Observation of environment UE states and the frame's new requests."""
    areas = {u.ue: u.area for u in ues}
    return Observation(
        tuple((u.area, u.heading) for u in ues),
        tuple((areas[r.ue], r.service) for r in arrivals),
        tuple((r.service, r.total_capacity) for r in arrivals),
    )


@export
@dataclass
class PredictionReport:
    area_distribution: np.ndarray
    issuance: np.ndarray
    ranked: List[Tuple[int, int, float]] = field(default_factory=list)

    def predicted_area(self, ue):
        return int(np.argmax(self.area_distribution[ue]))

    def function_demand(self, services, functions):
        """Issuance mass of every function in ``functions`` order."""
        mass = self.issuance.sum(axis=0)
        index = {f: i for i, f in enumerate(functions)}
        out = np.zeros(len(functions))
        for s in services:
            for f in s.functions:
                out[index[f]] += mass[s.id]
        return out


def _rank(issuance):
    entries = [(int(a), int(s), float(issuance[a, s])) for a, s in np.ndindex(*issuance.shape)]
    return sorted((e for e in entries if e[2] > 0), key=lambda e: (-e[2], e[0], e[1]))


@export
def next_area_law(grid, area, heading):
    """Distribution over next areas under straight 0.5, left 0.25, right 0.25,
    renormalized over the maneuvers that stay on the grid."""
    p = np.zeros(grid.n_areas)
    if grid.n_areas == 1:
        p[area] = 1.0
        return p
    if heading is None:
        neighbors = sorted(grid.adjacency[area])
        p[neighbors] = 1.0 / len(neighbors)
        return p
    for m, w in MANEUVER_LAW:
        nxt = grid.neighbor(area, turn(heading, m))
        if nxt is not None:
            p[nxt] += w
    if p.sum() == 0:
        back = grid.neighbor(area, heading.reverse())
        p[area if back is None else back] = 1.0
    return p / p.sum()


@export
def decayed_frequency(history, n_areas, n_services, decay=ISSUANCE_DECAY):
    """Weighted mean over frames of the per-(area, service) issuance
    indicator, frame k back weighted by decay**k."""
    counts = np.zeros((n_areas, n_services))
    norm = 0.0
    for age, obs in enumerate(reversed(history)):
        w = decay**age
        seen = np.zeros((n_areas, n_services))
        for a, s in obs.arrivals:
            seen[a, s] = 1.0
        counts += w * seen
        norm += w
    return counts / norm if norm else counts


@export
def predict(history, grid, n_services, n_ues=0, decay=ISSUANCE_DECAY):
    """Reference prediction report from an observation window; an empty
    window gives uniform distributions."""
    if not history:
        return PredictionReport(
            np.full((n_ues, grid.n_areas), 1.0 / grid.n_areas),
            np.full((grid.n_areas, n_services), 1.0 / max(n_services, 1)),
        )
    last = history[-1]
    dist = np.stack([next_area_law(grid, a, h) for a, h in last.ues]) if last.ues else np.zeros((0, grid.n_areas))
    issuance = decayed_frequency(history, grid.n_areas, n_services, decay)
    return PredictionReport(dist, issuance, _rank(issuance))


@export
class ReferencePredictor(object):
    """Keeps the observation window and the decayed mean capacity per
    service used to turn issuance into demand."""

    def __init__(self, grid, n_ues, n_services, window=32, decay=ISSUANCE_DECAY):
        self.grid = grid
        self.n_ues = n_ues
        self.n_services = n_services
        self.window = window
        self.decay = decay
        self.history = []
        self.mean_capacity = np.zeros(n_services)

    def observe(self, observation):
        self.history = (self.history + [observation])[-self.window :]
        for s, cap in observation.capacities:
            old = self.mean_capacity[s]
            self.mean_capacity[s] = cap if old == 0 else self.decay * old + (1 - self.decay) * cap

    def predict(self):
        return predict(self.history, self.grid, self.n_services, self.n_ues, self.decay)

    def get_state(self):
        return {
            "history": [
                {
                    "ues": [[int(a), h.value] for a, h in o.ues],
                    "arrivals": [[int(v) for v in e] for e in o.arrivals],
                    "capacities": [[int(s), float(c)] for s, c in o.capacities],
                }
                for o in self.history
            ],
            "mean_capacity": self.mean_capacity.tolist(),
        }

    def set_state(self, doc):
        self.history = [
            Observation(
                tuple((a, Heading(h)) for a, h in o["ues"]),
                tuple(tuple(e) for e in o["arrivals"]),
                tuple((s, c) for s, c in o["capacities"]),
            )
            for o in doc["history"]
        ]
        self.mean_capacity = np.array(doc["mean_capacity"], dtype=float)

    def area_demand(self, report, requests):
        """Expected per-area demand next frame: active requests follow their
        UE's area distribution, new ones arrive at the issuance rate."""
        demand = report.issuance @ self.mean_capacity
        for r in requests:
            demand = demand + r.total_capacity * report.area_distribution[r.ue]
        return demand


@export
class LearnedPredictor(ReferencePredictor):
    """Next-area prediction by a dueling double Q-function over areas; the
    reward is 1 for a correct guess and 0 otherwise."""

    def __init__(self, grid, n_ues, n_services, seed=0, hidden=(32,), learning_rate=0.001,
                 discount=0.0, batch_size=32, memory=1000, schedule=None, rng=None, **kwargs):
        super().__init__(grid, n_ues, n_services, **kwargs)
        n = grid.n_areas
        self.qf = QFunction(
            lambda: DuelingMLP(n + len(Heading), n, hidden, "tanh", seed), learning_rate, discount
        )
        self.rng = np.random.default_rng(seed) if rng is None else rng
        self.memory = ReplayMemory(memory, self.rng)
        self.schedule = EpsilonSchedule() if schedule is None else schedule
        self.batch_size = batch_size
        self.hits = 0
        self.guesses = 0

    def features(self, area, heading):
        x = np.zeros(self.grid.n_areas + len(Heading))
        x[area] = 1.0
        x[self.grid.n_areas + list(Heading).index(heading)] = 1.0
        return x

    def feasible(self, area):
        mask = np.zeros(self.grid.n_areas, dtype=bool)
        mask[sorted(self.grid.adjacency[area])] = True
        if not mask.any():
            mask[area] = True
        return mask

    def observe(self, observation):
        if self.history:
            previous = self.history[-1]
            for (a, h), (a_next, h_next) in zip(previous.ues, observation.ues):
                x = self.features(a, h)
                guess = epsilon_greedy(self.qf, x, self.schedule, self.feasible(a), self.rng)
                reward = float(guess == a_next)
                self.hits += int(reward)
                self.guesses += 1
                self.memory.push(Transition(x, guess, reward, self.features(a_next, h_next)))
            if len(self.memory) >= self.batch_size:
                train_step(self.qf, self.memory.sample(self.batch_size))
            self.schedule = decay(self.schedule)
        super().observe(observation)

    @property
    def accuracy(self):
        return self.hits / self.guesses if self.guesses else 0.0

    def get_state(self):
        doc = super().get_state()
        doc.update(hits=self.hits, guesses=self.guesses)
        return doc

    def set_state(self, doc):
        super().set_state(doc)
        self.hits, self.guesses = doc["hits"], doc["guesses"]

    def predict(self):
        report = super().predict()
        if self.history:
            rows = []
            for a, h in self.history[-1].ues:
                mask = self.feasible(a)
                q = self.qf.q_values(self.features(a, h))
                z = np.where(mask, q - q[mask].max(), -np.inf)
                p = np.exp(z)
                rows.append(p / p.sum())
            report.area_distribution = np.stack(rows) if rows else report.area_distribution
        logging.debug(f"learned predictor accuracy so far {self.accuracy:.3f}")
        return report


@export
def make_predictor(kind, grid, n_ues, n_services, seed=0):
    if kind == "reference":
        return ReferencePredictor(grid, n_ues, n_services)
    if kind == "learned":
        return LearnedPredictor(grid, n_ues, n_services, seed=seed)
    raise ValueError(f"unknown predictor {kind}, pick reference or learned")
