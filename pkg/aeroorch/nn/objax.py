import logging

import jax
import jax.numpy as jnp
import numpy as np
import objax
from objax.module import Module, ModuleList
from objax.variable import TrainVar

from aeroorch.utils import Named, export

jax.config.update("jax_enable_x64", True)

ACTIVATIONS = {
    "tanh": jnp.tanh,
    "leaky_relu": jax.nn.leaky_relu,
    "relu": jax.nn.relu,
    "swish": jax.nn.swish,
}


@export
class Linear(Module):
    """Dense layer x @ w + b with Xavier-normal weights drawn from ``generator``."""

    def __init__(self, nin, nout, generator):
        super().__init__()
        std = np.sqrt(2.0 / (nin + nout))
        self.w = TrainVar(objax.random.normal((nin, nout), stddev=std, generator=generator))
        self.b = TrainVar(jnp.zeros(nout))

    def __call__(self, x):
        return x @ self.w.value + self.b.value


@export
class DuelingMLP(Module, metaclass=Named):
    """Feed-forward body with a dueling split head: x -> (V(x), ρ(x, ·)).

    ``hidden=()`` gives the linear approximator."""

    def __init__(self, nin, n_actions, hidden=(64, 64), activation="tanh", seed=0):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation}, pick one of {sorted(ACTIVATIONS)}")
        generator = objax.random.Generator(seed)
        widths = (nin,) + tuple(hidden)
        self.nin, self.n_actions = nin, n_actions
        self.activation = activation
        self.body = ModuleList(Linear(a, b, generator) for a, b in zip(widths, widths[1:]))
        self.value = Linear(widths[-1], 1, generator)
        self.advantage = Linear(widths[-1], n_actions, generator)
        logging.debug(f"{self}: {nin} -> {hidden} -> (1, {n_actions}) {activation}")

    def __call__(self, x):
        act = ACTIVATIONS[self.activation]
        h = x
        for layer in self.body:
            h = act(layer(h))
        return self.value(h)[..., 0], self.advantage(h)

    def __repr__(self):
        return f"DuelingMLP({self.nin}, {self.n_actions})"
