import numpy as np
import pytest
from scipy.integrate import trapezoid

from aeroorch.environment import *
from aeroorch.environment import MANEUVER_LAW, propulsion_integral
from aeroorch.model import AreaGrid, ChannelPhysics, ChannelSpec, Heading, LinkSpec, NodeKind, NodeSpec, UAVParams
from aeroorch.model import VelocityProfile
from aeroorch.utils import seed_stream
from model_tests import micro_instance, micro_request, parametrize


def test_seed_streams_are_independent_and_reproducible():
    a = seed_stream(3, "mobility").random(5)
    assert np.array_equal(a, seed_stream(3, "mobility").random(5))
    assert not np.array_equal(a, seed_stream(3, "weather").random(5))
    assert not np.array_equal(a, seed_stream(4, "mobility").random(5))


def test_mobility_law_in_the_interior():
    grid = AreaGrid(41, 41, (0.5,) * 41 * 41)
    center = grid.area_at(20, 20)
    rng = np.random.default_rng(0)
    ues = initial_ues(4000, grid, rng, areas=[center] * 4000)
    moved = step_mobility(ues, grid, rng)
    share = {m: np.mean([u.last_move == m for u in moved]) for m, _ in MANEUVER_LAW}
    for m, p in MANEUVER_LAW:
        assert abs(share[m] - p) < 0.03, f"{m}: {share[m]:.3f} vs {p}"
    for u, v in zip(ues, moved):
        assert v.area in grid.adjacency[u.area]


def test_mobility_stays_on_the_grid():
    grid = AreaGrid(1, 3, (0.5,) * 3)
    rng = np.random.default_rng(1)
    ues = (UEState(0, 0, Heading.W), UEState(1, 2, Heading.N), UEState(2, 1, Heading.S))
    for _ in range(20):
        ues = step_mobility(ues, grid, rng)
        assert all(0 <= u.area < 3 for u in ues)


def test_single_area_grid_keeps_ues_in_place():
    grid = AreaGrid(1, 1, (0.5,))
    ues = step_mobility((UEState(0, 0, Heading.N),), grid, np.random.default_rng(0))
    assert ues[0].area == 0 and ues[0].last_move == Maneuver.STAY


def test_weather_regimes():
    assert WeatherState(0).attenuation == 0.0
    assert WeatherState(2).shadowing_std == 4.5
    with pytest.raises(ValueError):
        WeatherState(3)


def test_los_areas_always_have_quality():
    grid = AreaGrid(1, 2, (1.0, 1.0), cell_size=100.0)
    q = realize_frame((ChannelSpec(0, 1.0), ChannelSpec(1, 1.0)), grid, WeatherState(2), np.random.default_rng(0), 5)
    assert q.shape == (5, 2, 2)
    assert q.min() == 1


def test_realize_channel_snr_test():
    grid = AreaGrid(1, 1, (0.0,), cell_size=100.0)
    c = ChannelSpec(0, 1.0, ChannelPhysics())
    weather = WeatherState(0)
    strong = realize_channel(c, 0, 0, weather, None, grid, distance=1.0, draws=ChannelDraws(0.9, 1.0, 0.0))
    assert not strong.los and strong.snr == pytest.approx(0.1 / (3.98e-21 * 180e3))
    assert strong.quality == 1
    far = realize_channel(c, 0, 0, weather, None, grid, distance=1e9, draws=ChannelDraws(0.9, 1.0, 0.0))
    assert far.quality == 0
    with pytest.raises(ValueError):
        realize_channel(c, 0, 0, weather, None, grid, distance=0.0, draws=ChannelDraws(0.9, 1.0, 0.0))


def test_link_latency_grows_with_load():
    link = LinkSpec(0, (0, 1), 10.0, 1.0, 4.0)
    assert link_latency(link, None, 0.0) == 4.0
    assert link_latency(link, None, 1.0) == 8.0
    with pytest.raises(ValueError):
        link_latency(link, None, 1.5)


@parametrize([5.0, 12.0])
def test_propulsion_integral_of_constant_profile(speed):
    profile = VelocityProfile((0.0, 100.0), (speed, speed))
    assert propulsion_integral(profile, 7.0) == pytest.approx(propulsion_integral(speed, 7.0))


def test_propulsion_integral_linear_ramp():
    # ∫₀¹ t³ dt
    assert propulsion_integral(VelocityProfile((0.0, 1.0), (0.0, 1.0)), 1.0) == pytest.approx(0.25)


def test_move_energy():
    inst = micro_instance()
    uav = inst.topology.uavs[0]
    assert move_energy(inst.grid, uav, 1, 1) == 0.0
    p = UAVParams()
    dt = 100.0 / 10.0
    expected = hover_power(p) * dt + 0.5 * p.drag_coeff * p.air_density * p.frontal_area * 10.0**3 * dt
    assert move_energy(inst.grid, uav, 1, 0) == pytest.approx(expected)
    with pytest.raises(ValueError):
        uav_move_energy(inst.topology.nodes[1], 0, 1, 1.0)


def test_spawn_requests():
    inst = micro_instance()
    ues = initial_ues(3, inst.grid, np.random.default_rng(0))
    assert spawn_requests(0, ues, inst.services, np.random.default_rng(0), 0.0) == []
    reqs = spawn_requests(4, ues, inst.services, np.random.default_rng(0), 20.0, next_id=7, slots_per_frame=2)
    assert len(reqs) > 0
    assert [r.id for r in reqs] == list(range(7, 7 + len(reqs)))
    for r in reqs:
        assert r.entry_frame == 4 and r.required_slots <= 2 and set(r.capacity_req) == {0}
    with pytest.raises(ValueError):
        spawn_requests(0, ues, inst.services, np.random.default_rng(0), -1.0)


def test_fixed_request_count_per_frame():
    inst = micro_instance()
    ues = initial_ues(3, inst.grid, np.random.default_rng(0))
    for count in (0, 1, 5):
        reqs = spawn_requests(2, ues, inst.services, np.random.default_rng(0), 0.0, count=count)
        assert len(reqs) == count
    with pytest.raises(ValueError):
        spawn_requests(0, ues, inst.services, np.random.default_rng(0), 1.0, count=-1)
    inst = micro_instance(frames=3)
    inst.requests = ()
    realization = realize(inst, 3, seed=1, arrival_rate=0.5, requests_per_frame=4)
    assert [sum(r.entry_frame == t for r in realization.requests) for t in range(3)] == [4, 4, 4]


def test_scripted_requests_enter_on_their_frame():
    inst = micro_instance(requests=[micro_request(0, entry=0), micro_request(1, entry=1)])
    env = Environment(inst, seed=0)
    first = env.advance()
    assert [r.id for r in first.arrivals] == [0]
    second = env.advance()
    assert [r.id for r in second.arrivals] == [1]
    assert [r.id for r in env.active_requests()] == [1]


def test_realize_matches_the_online_environment():
    inst = micro_instance(frames=4)
    inst.requests = ()
    inst.arrival_rate = 2.0
    offline = realize(inst, 4, seed=5)
    env = Environment(inst, seed=5)
    for t in range(4):
        state = env.advance()
        assert tuple(offline.ue_areas[t]) == state.ue_areas
        assert np.array_equal(offline.quality[t], state.quality)
        assert offline.weather[t] == state.weather
    assert offline.requests == tuple(env.requests)
    assert offline.frames == 4


def test_move_energy_matches_quadrature():
    rng = np.random.default_rng(0)
    u = lambda lo, hi: float(rng.uniform(lo, hi))
    for _ in range(100):
        p = UAVParams(
            weight=u(1.0, 10.0),
            induced_power=u(0.01, 0.2),
            air_density=u(1.0, 1.3),
            rotor_disk_area=u(0.2, 1.0),
            drag_coeff=u(0.01, 0.1),
            frontal_area=u(0.1, 0.5),
            velocity_profile=u(5.0, 20.0),
        )
        node = NodeSpec(0, NodeKind.UAV, 10.0, 1.0, uav_params=p, initial_area=0)
        duration = u(1.0, 100.0)
        ts = np.linspace(0.0, duration, 10001)
        hover = p.induced_power * p.weight**1.5 / np.sqrt(2 * p.air_density * p.rotor_disk_area)
        power = hover + 0.5 * p.drag_coeff * p.air_density * p.frontal_area * p.velocity_profile**3
        expected = trapezoid(np.full_like(ts, power), ts)
        assert uav_move_energy(node, 0, 1, duration) == pytest.approx(expected, rel=1e-9)
        assert uav_move_energy(node, 1, 1, duration) == 0.0


def test_non_los_quality_matches_monte_carlo():
    phys = ChannelPhysics(
        transmit_power=1.0, noise_density=1e-3, subcarrier_spacing=1.0, path_loss_exponent=2.0,
        reference_distance=1.0, quality_threshold=0.2, rayleigh_scale=1.0,
    )
    grid = AreaGrid(1, 1, (0.0,), cell_size=100.0)
    weather = WeatherState(1)
    n = 100000
    quality = realize_frame((ChannelSpec(0, 1.0, phys),), grid, weather, np.random.default_rng(0), n)
    # independent draw of the SNR test
    rng = np.random.default_rng(1)
    gain = (
        rng.rayleigh(1.0, n)
        * 10.0 ** (rng.standard_normal(n) * weather.shadowing_std / 10.0)
        * (1.0 / grid.poa_distance(0, 0)) ** 2.0
        * 10.0 ** (-weather.attenuation / 10.0)
    )
    expected = np.mean(gain / 1e-3 >= 0.2)
    assert 0.1 < expected < 0.9
    assert abs(quality.mean() - expected) < 0.01
    los = realize_frame((ChannelSpec(0, 1.0, phys),), AreaGrid(1, 1, (1.0,)), weather, np.random.default_rng(2), n)
    assert los.min() == 1
