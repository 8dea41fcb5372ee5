"""Dynamic world state: UE mobility on the area grid, request arrivals,
weather, slot-level channel quality, link latency and UAV movement energy."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from plum import dispatch

from .model import Heading, Request, VelocityProfile, request_from_dict, request_to_dict
from .utils import export, seed_stream

STREAMS = ("mobility", "weather", "arrival", "channel")

WEATHER_REGIMES = ((0.0, 2.0), (2.5, 3.0), (5.0, 4.5))


@export
class Maneuver(str, Enum):
    STRAIGHT = "straight"
    LEFT = "left"
    RIGHT = "right"
    REVERSE = "reverse"
    STAY = "stay"


MANEUVER_LAW = ((Maneuver.STRAIGHT, 0.5), (Maneuver.LEFT, 0.25), (Maneuver.RIGHT, 0.25))


def turn(heading, maneuver):
    return {
        Maneuver.STRAIGHT: heading,
        Maneuver.LEFT: heading.left(),
        Maneuver.RIGHT: heading.right(),
        Maneuver.REVERSE: heading.reverse(),
        Maneuver.STAY: heading,
    }[maneuver]


@export
@dataclass(frozen=True)
class UEState:
    ue: int
    area: int
    heading: Heading
    last_move: Maneuver = Maneuver.STAY

    def occupancy(self, n_areas):
        """A_{u,a} for every area."""
        a = np.zeros(n_areas, dtype=np.int8)
        a[self.area] = 1
        return a


@export
@dataclass(frozen=True)
class WeatherState:
    regime: int

    def __post_init__(self):
        if not 0 <= self.regime < len(WEATHER_REGIMES):
            raise ValueError(f"unknown weather regime {self.regime}")

    @property
    def attenuation(self):
        return WEATHER_REGIMES[self.regime][0]

    @property
    def shadowing_std(self):
        return WEATHER_REGIMES[self.regime][1]


@export
class ChannelDraws(NamedTuple):
    los_uniform: float
    rayleigh: float
    shadow: float


@export
@dataclass(frozen=True)
class ChannelRealization:
    gain: float
    rayleigh: float
    lognormal_shadow: float
    distance: float
    snr: Optional[float]
    quality: int
    los: bool


@export
def channel_gain(phys, rayleigh, shadow, distance, weather):
    """H = R·10^{χη/10}·(D0/d)^ν·10^{−ζ/10}; broadcasts over arrays."""
    return (
        rayleigh
        * 10.0 ** (shadow * weather.shadowing_std / 10.0)
        * (phys.reference_distance / distance) ** phys.path_loss_exponent
        * 10.0 ** (-weather.attenuation / 10.0)
    )


@export
def snr(phys, gain):
    return phys.transmit_power * gain / (phys.noise_density * phys.subcarrier_spacing)


@export
def realize_channel(c, a, tau, weather, rng, grid, distance=None, draws=None):
    """One slot of channel ``c`` in area ``a``. LoS draws succeed with the
    area's θ^LoS; otherwise the SNR test decides. All three draws are taken
    in every call so that stream positions never depend on outcomes."""
    d = grid.poa_distance(a, a) if distance is None else distance
    if d <= 0:
        raise ValueError(f"channel distance must be positive, got {d}")
    if draws is None:
        draws = ChannelDraws(rng.random(), rng.rayleigh(c.phys.rayleigh_scale), rng.standard_normal())
    gain = channel_gain(c.phys, draws.rayleigh, draws.shadow, d, weather)
    if draws.los_uniform < grid.los_probability[a]:
        return ChannelRealization(gain, draws.rayleigh, draws.shadow, d, None, 1, True)
    gamma = snr(c.phys, gain)
    quality = int(gamma >= c.phys.quality_threshold)
    return ChannelRealization(gain, draws.rayleigh, draws.shadow, d, gamma, quality, False)


@export
def realize_frame(channels, grid, weather, rng, slots):
    """Quality bits Q̌ for every (slot, channel, area) of one frame."""
    shape = (slots, len(channels), grid.n_areas)
    los_u = rng.random(shape)
    scales = np.array([c.phys.rayleigh_scale for c in channels])[None, :, None]
    rayleigh = rng.rayleigh(np.broadcast_to(scales, shape))
    shadow = rng.standard_normal(shape)
    quality = np.zeros(shape, dtype=np.int8)
    d = np.array([grid.poa_distance(a, a) for a in grid.area_ids])[None, None, :]
    los = los_u < np.array(grid.los_probability)[None, None, :]
    for i, c in enumerate(channels):
        gain = channel_gain(c.phys, rayleigh[:, i], shadow[:, i], d[:, 0], weather)
        ok = snr(c.phys, gain) >= c.phys.quality_threshold
        quality[:, i] = (los[:, i] | ok).astype(np.int8)
    return quality


@dispatch
def propulsion_integral(speed: Union[int, float], duration: float):
    """∫₀^Δ V(t)³ dt for a constant speed."""
    return duration * float(speed) ** 3


@dispatch
def propulsion_integral(profile: VelocityProfile, duration: float):
    """∫₀^Δ V(t)³ dt for a piecewise-linear speed, exact per segment."""
    inner = [t for t in profile.times if 0.0 < t < duration]
    ts = np.array([0.0] + inner + [duration])
    vs = np.interp(ts, profile.times, profile.speeds)
    h = np.diff(ts)
    v0, v1 = vs[:-1], vs[1:]
    return float(np.sum(h * (v0**3 + v0**2 * v1 + v0 * v1**2 + v1**3) / 4.0))


@export
def hover_power(params):
    return params.induced_power * params.weight**1.5 / math.sqrt(2 * params.air_density * params.rotor_disk_area)


@export
def travel_time(grid, node, a1, a2):
    """Δ_{a1,a2}: Manhattan distance between area centers over cruise speed."""
    if a1 == a2:
        return 0.0
    return grid.manhattan(a1, a2) * grid.cell_size / node.uav_params.cruise_speed


@export
def uav_move_energy(node, a1, a2, travel_time):
    if not node.is_uav:
        raise ValueError(f"node {node.id} is not a UAV")
    if travel_time < 0:
        raise ValueError(f"travel time must be non-negative, got {travel_time}")
    if a1 == a2 or travel_time == 0:
        return 0.0
    p = node.uav_params
    drag = 0.5 * p.drag_coeff * p.air_density * p.frontal_area
    return hover_power(p) * travel_time + drag * propulsion_integral(p.velocity_profile, float(travel_time))


@export
def move_energy(grid, node, a1, a2):
    """Λ of one relocation, travel time derived from the grid."""
    return uav_move_energy(node, a1, a2, travel_time(grid, node, a1, a2))


@export
def link_latency(l, r, load_fraction):
    """D_{r,l} = base · (1 + load)."""
    if not 0.0 <= load_fraction <= 1.0:
        raise ValueError(f"load fraction {load_fraction} outside [0,1]")
    return l.base_latency * (1.0 + load_fraction)


@export
def initial_ues(n_ues, grid, rng, areas=None):
    states = []
    for u in range(n_ues):
        area = int(rng.integers(grid.n_areas)) if areas is None else int(areas[u])
        heading = list(Heading)[int(rng.integers(4))]
        states.append(UEState(u, area, heading))
    return tuple(states)


@export
def step_mobility(ues, grid, rng):
    """Manhattan mobility: straight 0.5, left 0.25, right 0.25. Picks that
    leave the grid are re-sampled over the feasible maneuvers; a dead end
    reverses the UE and a single-area grid keeps it in place."""
    moved = []
    for ue in ues:
        u = rng.random()
        options = {m: turn(ue.heading, m) for m, _ in MANEUVER_LAW}
        feasible = [(m, p) for m, p in MANEUVER_LAW if grid.neighbor(ue.area, options[m]) is not None]
        pick = Maneuver.STRAIGHT if u < 0.5 else Maneuver.LEFT if u < 0.75 else Maneuver.RIGHT
        if pick not in dict(feasible):
            if feasible:
                weights = np.array([p for _, p in feasible])
                pick = feasible[int(rng.choice(len(feasible), p=weights / weights.sum()))][0]
            elif grid.neighbor(ue.area, ue.heading.reverse()) is not None:
                pick = Maneuver.REVERSE
            else:
                moved.append(UEState(ue.ue, ue.area, ue.heading, Maneuver.STAY))
                continue
        heading = turn(ue.heading, pick)
        moved.append(UEState(ue.ue, grid.neighbor(ue.area, heading), heading, pick))
    return tuple(moved)


@export
def draw_weather(rng):
    return WeatherState(int(rng.integers(len(WEATHER_REGIMES))))


@export
def spawn_requests(
    frame,
    ues,
    catalog,
    rng,
    arrival_rate,
    next_id=0,
    slots_per_frame=10,
    bandwidth=(2.0, 8.0),
    capacity=(8.0, 20.0),
    latency=(50.0, 100.0),
    slot_range=(3, 9),
    count=None,
):
    """Poisson number of new requests at ``frame``, or exactly ``count`` of
    them when given; each picks a UE and a service uniformly and samples its
    requirements from the given ranges."""
    if count is None:
        if arrival_rate < 0:
            raise ValueError(f"arrival rate must be non-negative, got {arrival_rate}")
        if arrival_rate == 0 or not ues or not catalog:
            return []
        count = int(rng.poisson(arrival_rate))
    elif count < 0:
        raise ValueError(f"request count must be non-negative, got {count}")
    elif not ues or not catalog:
        return []
    requests = []
    for i in range(int(count)):
        ue = ues[int(rng.integers(len(ues)))]
        service = catalog[int(rng.integers(len(catalog)))]
        bw = rng.uniform(*bandwidth)
        cap = {f: float(rng.uniform(*capacity)) for f in service.functions}
        lat = rng.uniform(*latency)
        slots = min(int(rng.integers(slot_range[0], slot_range[1] + 1)), slots_per_frame)
        requests.append(
            Request(next_id + i, ue.ue, service.id, frame, service.duration_frames, bw, cap, lat, slots)
        )
    return requests


@export
@dataclass
class FrameState:
    frame: int
    ue_areas: Tuple[int, ...]
    weather: WeatherState
    arrivals: Tuple[Request, ...]
    quality: np.ndarray


@export
@dataclass
class Realization:
    """Exogenous trajectories of an episode: UE areas [T, U], channel quality
    bits [T, slots, C, A], weather per frame and every request."""

    ue_areas: np.ndarray
    quality: np.ndarray
    weather: Tuple[WeatherState, ...]
    requests: Tuple[Request, ...]

    @property
    def frames(self):
        return len(self.ue_areas)


@export
class Environment(object):
    """Advances the world one frame at a time from four named seed streams.
    Decisions never feed back into the streams, so every policy run on the
    same seed observes the same realization."""

    def __init__(self, instance, seed=None, arrival_rate=None, requests_per_frame=None):
        self.instance = instance
        self.seed = instance.seed if seed is None else seed
        self.arrival_rate = instance.arrival_rate if arrival_rate is None else arrival_rate
        self.requests_per_frame = requests_per_frame
        self.streams = {name: seed_stream(self.seed, name) for name in STREAMS}
        self.ues = initial_ues(instance.n_ues, instance.grid, self.streams["mobility"], instance.ue_initial_areas)
        self.frame = -1
        self.weather = None
        self.quality = None
        self.requests = []

    @property
    def ue_areas(self):
        return tuple(u.area for u in self.ues)

    def advance(self):
        inst = self.instance
        self.frame += 1
        if self.frame > 0:
            self.ues = step_mobility(self.ues, inst.grid, self.streams["mobility"])
        self.weather = draw_weather(self.streams["weather"])
        if inst.requests:
            arrivals = [r for r in inst.requests if r.entry_frame == self.frame]
        else:
            arrivals = spawn_requests(
                self.frame, self.ues, inst.services, self.streams["arrival"], self.arrival_rate,
                next_id=len(self.requests), slots_per_frame=inst.time.slots_per_frame,
                count=self.requests_per_frame,
            )
        self.requests.extend(arrivals)
        self.quality = realize_frame(
            inst.channels, inst.grid, self.weather, self.streams["channel"], inst.time.slots_per_frame
        )
        logging.debug(f"frame {self.frame}: {len(arrivals)} arrivals, weather regime {self.weather.regime}")
        return FrameState(self.frame, self.ue_areas, self.weather, tuple(arrivals), self.quality)

    def active_requests(self, t=None):
        t = self.frame if t is None else t
        return [r for r in self.requests if r.is_active(t)]

    def get_state(self):
        """Frame index, stream positions, UE states and requests so far; the
        current quality bits live with whoever recorded them."""
        return {
            "frame": self.frame,
            "streams": {name: rng.bit_generator.state for name, rng in self.streams.items()},
            "ues": [[int(u.ue), int(u.area), u.heading.value, u.last_move.value] for u in self.ues],
            "weather": None if self.weather is None else self.weather.regime,
            "requests": [request_to_dict(r) for r in self.requests],
        }

    def set_state(self, doc, quality=None):
        self.frame = doc["frame"]
        for name, state in doc["streams"].items():
            self.streams[name].bit_generator.state = state
        self.ues = tuple(UEState(u, a, Heading(h), Maneuver(m)) for u, a, h, m in doc["ues"])
        self.weather = None if doc["weather"] is None else WeatherState(doc["weather"])
        self.requests = [request_from_dict(r) for r in doc["requests"]]
        self.quality = quality


@export
def realize(instance, frames, seed=None, arrival_rate=None, requests_per_frame=None):
    """Pre-draws an episode of ``frames`` frames with the same streams and
    order an online Environment uses."""
    env = Environment(instance, seed, arrival_rate, requests_per_frame)
    inst = instance
    areas = np.zeros((frames, inst.n_ues), dtype=np.int64)
    shape = (frames, inst.time.slots_per_frame, len(inst.channels), inst.grid.n_areas)
    quality = np.zeros(shape, dtype=np.int8)
    weather = []
    for t in range(frames):
        state = env.advance()
        areas[t] = state.ue_areas
        quality[t] = state.quality
        weather.append(state.weather)
    return Realization(areas, quality, tuple(weather), tuple(env.requests))
