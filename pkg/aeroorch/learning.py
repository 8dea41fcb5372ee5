"""Dueling double Q-learning core shared by the planning agents: replay
memory, epsilon-greedy selection with action masks, double-Q targets,
the dueling combination and plain SGD on the temporal-difference error."""
import json
import logging
from collections import deque
from dataclasses import dataclass

import h5py
import jax.numpy as jnp
import numpy as np
import objax

from .utils import Named, export

CHECKPOINT_VERSION = 1


@export
class NoValidActionError(RuntimeError):
    """Every action is masked."""

    pass


@export
@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool = False

    def __post_init__(self):
        if np.shape(self.state) != np.shape(self.next_state):
            raise ValueError(f"state {np.shape(self.state)} and next state {np.shape(self.next_state)} differ")


@export
class ReplayMemory(object):
    """Bounded FIFO of transitions with seeded uniform sampling."""

    def __init__(self, capacity, rng):
        if capacity < 1:
            raise ValueError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.rng = rng
        self.buffer = deque(maxlen=capacity)

    def push(self, transition):
        self.buffer.append(transition)

    def sample(self, batch_size):
        idx = self.rng.choice(len(self.buffer), size=min(batch_size, len(self.buffer)), replace=False)
        return [self.buffer[i] for i in idx]

    def __len__(self):
        return len(self.buffer)

    def __iter__(self):
        return iter(self.buffer)


@export
@dataclass(frozen=True)
class EpsilonSchedule:
    epsilon: float = 1.0
    decrement: float = 0.00005
    floor: float = 0.0001

    def __post_init__(self):
        if not self.floor <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [{self.floor}, 1]")


@export
def decay(schedule):
    """ε ← max(ε − ε', ε̃)"""
    return EpsilonSchedule(max(schedule.epsilon - schedule.decrement, schedule.floor), schedule.decrement, schedule.floor)


@export
def dueling_combine(value, advantage):
    """Q = V + ρ − mean(ρ) over the action axis."""
    return value[..., None] + advantage - advantage.mean(axis=-1, keepdims=True)


@export
class QFunction(object, metaclass=Named):
    """Online and target copies of a dueling approximator trained by SGD.

    ``make_approximator`` builds a module mapping states to (V, ρ); it is
    called twice so both copies share the architecture."""

    def __init__(self, make_approximator, learning_rate=0.001, discount=0.8, sync_period=200, jit=True):
        self.online = make_approximator()
        self.target = make_approximator()
        self.learning_rate = learning_rate
        self.discount = discount
        self.sync_period = sync_period
        self.steps = 0
        self.sync()
        self.opt = objax.optimizer.SGD(self.online.vars())
        self.gradvals = objax.GradValues(self.loss, self.online.vars())

        def q_online(x):
            return dueling_combine(*self.online(x))

        def q_target(x):
            return dueling_combine(*self.target(x))

        @objax.Function.with_vars(self.online.vars() + self.opt.vars())
        def train_op(states, actions, targets, lr):
            g, v = self.gradvals(states, actions, targets)
            self.opt(lr=lr, grads=g)
            return v

        if jit:
            self._q = objax.Jit(q_online, self.online.vars())
            self._q_target = objax.Jit(q_target, self.target.vars())
            self._train_op = objax.Jit(train_op)
        else:
            self._q, self._q_target, self._train_op = q_online, q_target, train_op

    @property
    def state_dim(self):
        return self.online.nin

    @property
    def n_actions(self):
        return self.online.n_actions

    def __repr__(self):
        return f"QFunction({self.state_dim} -> {self.n_actions})"

    def sync(self):
        self.target.vars().assign(self.online.vars().tensors())

    def _check(self, state):
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.state_dim:
            raise ValueError(f"state dimension {state.shape[-1]} does not match {self.state_dim}")
        return state

    def q_values(self, state):
        return np.asarray(self._q(self._check(state)))

    def target_q_values(self, state):
        return np.asarray(self._q_target(self._check(state)))

    def loss(self, states, actions, targets):
        q = dueling_combine(*self.online(states))
        qa = jnp.take_along_axis(q, actions[:, None], axis=1)[:, 0]
        return 0.5 * ((targets - qa) ** 2).mean()

    def targets(self, rewards, next_states, dones):
        a_next = np.argmax(self.q_values(next_states), axis=-1)
        q_next = np.take_along_axis(self.target_q_values(next_states), a_next[:, None], axis=1)[:, 0]
        return rewards + self.discount * (1.0 - dones) * q_next


@export
def dueling_q(qf, state):
    """Q(O, ·) through the dueling head."""
    return qf.q_values(state)


@export
def double_target(qf, transition):
    """Y = R + Γ·Q(O', argmax_a Q(O', a; 𝒲); 𝒲⁻), ties to the lowest index."""
    if transition.done:
        return float(transition.reward)
    a_next = int(np.argmax(qf.q_values(transition.next_state)))
    return float(transition.reward + qf.discount * qf.target_q_values(transition.next_state)[a_next])


@export
def train_step(qf, batch):
    """One SGD step on 0.5·mean δ²; returns mean δ². Syncs the target
    parameters every ``sync_period`` calls."""
    if not batch:
        raise ValueError("cannot train on an empty batch")
    states = np.stack([qf._check(t.state) for t in batch])
    next_states = np.stack([qf._check(t.next_state) for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    dones = np.array([t.done for t in batch], dtype=np.float64)
    targets = qf.targets(rewards, next_states, dones)
    (half_mse,) = qf._train_op(states, actions, targets, qf.learning_rate)
    qf.steps += 1
    if qf.steps % qf.sync_period == 0:
        qf.sync()
        logging.debug(f"{qf} synced target parameters at step {qf.steps}")
    return 2.0 * float(half_mse)


@export
def epsilon_greedy(qf, state, schedule, mask=None, rng=None):
    """Random valid action with probability ε, otherwise the masked argmax."""
    n = qf.n_actions
    valid = np.arange(n) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(valid) == 0:
        raise NoValidActionError("all actions are masked")
    if rng.random() < schedule.epsilon:
        return int(valid[rng.integers(len(valid))])
    q = qf.q_values(state)
    if mask is not None:
        q = np.where(np.asarray(mask, dtype=bool), q, -np.inf)
    return int(np.argmax(q))


def _write_vars(group, collection):
    for i, v in enumerate(collection.tensors()):
        group.create_dataset(f"{i:04d}", data=np.asarray(v))


def _read_vars(group, collection):
    collection.assign([jnp.asarray(group[k][()]) for k in sorted(group.keys())])


@export
def save_checkpoint(path, qf, schedule, memory=None, **counters):
    """HDF5 dump of 𝒲, 𝒲⁻, the schedule, step counters and replay contents."""
    with h5py.File(path, "w") as f:
        f.attrs["version"] = CHECKPOINT_VERSION
        f.attrs["steps"] = qf.steps
        f.attrs["schedule"] = json.dumps(vars(schedule))
        f.attrs["counters"] = json.dumps(counters)
        _write_vars(f.create_group("online"), qf.online.vars())
        _write_vars(f.create_group("target"), qf.target.vars())
        if memory is not None:
            g = f.create_group("memory")
            g.attrs["rng"] = json.dumps(memory.rng.bit_generator.state)
            items = list(memory)
            if items:
                g.create_dataset("states", data=np.stack([t.state for t in items]))
                g.create_dataset("actions", data=np.array([t.action for t in items]))
                g.create_dataset("rewards", data=np.array([t.reward for t in items], dtype=np.float64))
                g.create_dataset("next_states", data=np.stack([t.next_state for t in items]))
                g.create_dataset("dones", data=np.array([t.done for t in items]))


@export
def load_checkpoint(path, qf, memory=None):
    """Restores ``qf`` (and ``memory``) in place; returns (schedule, counters)."""
    with h5py.File(path, "r") as f:
        version = int(f.attrs["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        qf.steps = int(f.attrs["steps"])
        schedule = EpsilonSchedule(**json.loads(f.attrs["schedule"]))
        counters = json.loads(f.attrs["counters"])
        _read_vars(f["online"], qf.online.vars())
        _read_vars(f["target"], qf.target.vars())
        if memory is not None and "memory" in f:
            g = f["memory"]
            memory.rng.bit_generator.state = json.loads(g.attrs["rng"])
            memory.buffer.clear()
            if "states" in g:
                for s, a, r, n, d in zip(g["states"][()], g["actions"][()], g["rewards"][()], g["next_states"][()], g["dones"][()]):
                    memory.push(Transition(s, int(a), float(r), n, bool(d)))
    logging.info(f"restored {qf} at step {qf.steps} from {path}")
    return schedule, counters
