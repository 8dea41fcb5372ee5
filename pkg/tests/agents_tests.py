import numpy as np
import pytest

from aeroorch.agents import *
from aeroorch.allocate import Allocation
from aeroorch.learning import EpsilonSchedule
from aeroorch.model import AreaGrid, LinkSpec, NetworkTopology, NodeKind, NodeSpec, ServiceSpec, UAVParams
from model_tests import micro_instance, micro_request, parametrize


def triangle():
    """Core 0 between RSUs 1 and 2: the direct RSU link costs 10, the detour 3 + 4."""
    grid = AreaGrid(1, 1, (0.5,))
    nodes = [
        NodeSpec(0, NodeKind.CORE, 50.0, 20.0, fixed_area=0),
        NodeSpec(1, NodeKind.RSU, 30.0, 10.0, fixed_area=0),
        NodeSpec(2, NodeKind.RSU, 30.0, 10.0, fixed_area=0),
    ]
    links = [
        LinkSpec(0, (1, 2), 20.0, 10.0, 5.0),
        LinkSpec(1, (0, 1), 20.0, 3.0, 5.0),
        LinkSpec(2, (0, 2), 20.0, 4.0, 5.0),
    ]
    return NetworkTopology(grid, nodes, links)


def small_config(**kwargs):
    return AgentConfig(hidden=(8,), batch_size=2, jit=False, **kwargs)


def test_config_from_dict():
    config = AgentConfig.from_dict({"hidden": [16, 16], "predictor": "learned"})
    assert config.hidden == (16, 16)
    assert AgentConfig.from_dict(config.to_dict()) == config
    assert config.schedule == EpsilonSchedule(1.0, 0.00005, 0.0001)
    with pytest.raises(ValueError):
        AgentConfig.from_dict({"gamma": 0.9})
    with pytest.raises(ValueError):
        AgentConfig.from_dict({"predictor": "crystal-ball"})


def test_tp_encoding_pads_the_oldest_frames():
    frame = TPFrame(np.array([3.0, 0.0]), (1,))
    state = tp_encode([frame], 2, 1, horizon=2)
    assert state.tolist() == [0, 0, 0, 0, 3, 0, 0, 1]


def test_tp_encoding_keeps_the_newest_frames():
    frames = [TPFrame(np.array([float(k), 0.0]), (k % 2,)) for k in range(5)]
    state = tp_encode(frames, 2, 1, horizon=2)
    assert state.tolist() == [3, 0, 0, 1, 4, 0, 1, 0]


def test_tp_encoding_two_uavs():
    state = tp_encode([TPFrame(np.array([1.0, 2.0, 0.0]), (2, 0))], 3, 2, horizon=1)
    assert state.tolist() == [1, 2, 0, 0, 0, 1, 1, 0, 0]


def test_tp_reward():
    reqs = [micro_request(0, ue=0), micro_request(1, ue=1)]
    assert tp_reward({0: None, 1: None}, reqs, 100.0, alpha=0.001) == pytest.approx(-0.1)
    assert tp_reward({0: 3, 1: None}, reqs, 0.0) == 1.0


def test_poa_prefers_residual_capacity():
    inst = micro_instance()
    nodes = inst.topology.nodes
    areas = {0: 0, 1: 0, 2: 0}
    assert select_poa([0], areas, nodes, {1: 10.0, 2: 20.0}) == {0: 2}
    assert select_poa([0], areas, nodes, {1: 20.0, 2: 20.0}) == {0: 1}
    # the core has no radio
    assert select_poa([0, 1], {0: 0, 1: 0, 2: 0}, nodes, {0: 99.0, 1: 1.0, 2: 1.0})[0] == 1


def test_uncovered_area_has_no_poa():
    inst = micro_instance()
    assert select_poa([1], {0: 0, 1: 0, 2: 0}, inst.topology.nodes, {}) == {0: None}
    assert select_poa([1], {0: 0, 1: 0, 2: 1}, inst.topology.nodes, {}) == {0: 2}


def test_relocation_energy_only_counts_moves():
    inst = micro_instance()
    uavs = inst.topology.uavs
    assert relocation_energy(inst.grid, uavs, {2: 1}, {2: 1}) == 0.0
    assert relocation_energy(inst.grid, uavs, {2: 1}, {2: 0}) > 0.0


def test_pl_mask():
    demand = np.array([10.0, 0.0, 5.0])
    residual = np.array([8.0, 12.0, 0.0])
    mask = pl_mask(demand, residual)
    assert mask.tolist() == [[False, True, False], [False, False, False], [True, True, False]]
    predicted = pl_mask(demand, residual, predicted=np.array([0.0, 1.0, 0.0]))
    assert predicted[1].tolist() == [True, True, False]
    # current demand keeps a row open when the prediction misses it
    assert predicted[0].tolist() == [False, True, False] and predicted[2].tolist() == [True, True, False]
    assert not pl_mask(demand, residual, predicted=np.zeros(3))[1].any()
    assert infeasible_functions(pl_mask(np.array([20.0]), np.array([8.0, 12.0])), [20.0]) == [0]


def test_pl_state_layout():
    state = pl_state(np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0]))
    assert state.tolist() == [1, 2, 3, 5, 4, 6]


def test_function_demand_counts_served_requests():
    reqs = [micro_request(0, cap={0: 4.0, 2: 1.0}), micro_request(1, cap={2: 3.0})]
    assert function_demand(reqs, (0, 2)).tolist() == [4.0, 4.0]
    assert function_demand(reqs, (0, 2), served={1}).tolist() == [0.0, 3.0]


@parametrize([True, False])
def test_sequential_placement_commits_capacity(random):
    rng = np.random.default_rng(0)
    capacity = np.array([15.0, 15.0])
    placement = pl_place(
        _TwoNodeQ(), (0, 1), np.array([10.0, 10.0]), capacity, np.zeros(2), EpsilonSchedule(0.0, floor=0.0), rng,
        random=random,
    )
    assert sorted(placement.nodes) == [0, 1]
    assert placement.nodes[0] != placement.nodes[1]
    assert placement.residual.tolist() == [5.0, 5.0]
    assert placement.infeasible == []
    for state, action, next_state in placement.steps:
        assert state.shape == next_state.shape == (2 + 2 * 2,)


class _TwoNodeQ(object):
    """Greedy Q over two functions on two nodes, preferring node 0."""

    n_actions = 4

    def q_values(self, state):
        return np.array([1.0, 0.0, 1.0, 0.0])


def test_placement_reports_infeasible_functions():
    rng = np.random.default_rng(0)
    placement = pl_place(None, (3,), np.array([50.0]), np.array([10.0, 20.0]), np.zeros(2), None, rng, random=True)
    assert placement.nodes == {} and placement.infeasible == [3]


def test_cheapest_route_wins():
    topo = triangle()
    services = (ServiceSpec(0, (0,), 1),)
    r = micro_request(0, latency=100.0)
    result = pl_route(topo, services, {0: {1}}, [r], {0: (1, 2)}, {0: 0, 1: 0, 2: 0})
    path = topo.paths[result.routes[0]]
    assert path.node_sequence == (1, 0, 2)
    assert sum(topo.links[l].transmit_energy for l in path.link_sequence) == 7.0
    assert result.latency[0] == pytest.approx(10.0)
    assert result.bandwidth == {1: 2.0, 2: 2.0}


def test_route_respects_the_latency_budget():
    topo = triangle()
    services = (ServiceSpec(0, (0,), 1),)
    r = micro_request(0, latency=6.0)
    result = pl_route(topo, services, {0: {1}}, [r], {0: (1, 2)}, {0: 0, 1: 0, 2: 0})
    assert topo.paths[result.routes[0]].node_sequence == (1, 2)
    spent = pl_route(topo, services, {0: {1}}, [r], {0: (1, 2)}, {0: 0, 1: 0, 2: 0}, spent={0: 2.0})
    assert spent.failed == [0] and spent.routes == {}


def test_route_must_visit_the_chain():
    topo = triangle()
    services = (ServiceSpec(0, (0,), 1),)
    r = micro_request(0, latency=100.0)
    result = pl_route(topo, services, {0: {0}}, [r], {0: (1, 2)}, {0: 0, 1: 0, 2: 0})
    assert topo.paths[result.routes[0]].node_sequence == (1, 0, 2)
    missing = pl_route(topo, services, {}, [r], {0: (1, 2)}, {0: 0, 1: 0, 2: 0})
    assert missing.failed == [0]
    unbound = pl_route(topo, services, {0: {1}}, [r], {0: (None, 2)}, {0: 0, 1: 0, 2: 0})
    assert unbound.failed == [0]


def test_route_shares_link_bandwidth():
    topo = triangle()
    services = (ServiceSpec(0, (0,), 1),)
    reqs = [micro_request(i, bw=8.0, latency=100.0) for i in range(3)]
    result = pl_route(topo, services, {0: {1}}, reqs, {i: (1, 2) for i in range(3)}, {0: 0, 1: 0, 2: 0})
    sequences = [topo.paths[result.routes[i]].node_sequence for i in range(3)]
    assert sequences == [(1, 0, 2), (1, 0, 2), (1, 2)]


def test_pl_reward():
    topo = triangle()
    (detour,) = [p for p in topo.paths if p.node_sequence == (1, 0, 2)]
    reqs = {0: micro_request(0), 1: micro_request(1), 2: micro_request(2)}
    alloc = Allocation(0, 1)
    alloc.place(0, 0, 0)
    for r in (0, 1):
        alloc.route(0, r, detour.id)
        alloc.select(0, r, 0)
    assert pl_reward(alloc, topo, reqs, alpha=0.001) == pytest.approx(2 - 0.001 * (20.0 + 7.0 + 7.0))
    assert pl_reward(Allocation(0, 1), topo, reqs, failed=3, penalty=-1.0) == -3.0


def test_pl_reward_when_every_route_fails():
    topo = triangle()
    reqs = {0: micro_request(0), 1: micro_request(1)}
    alloc = Allocation(0, 1)
    alloc.place(0, 0, 0)
    alloc.place(0, 0, 1)
    assert pl_reward(alloc, topo, reqs, alpha=0.001, failed=2) == -2.0


class OneHotQ(object):
    """Prefers area 1 for the first UAV and area 0 for the others."""

    n_actions = 2

    def q_values(self, state):
        return np.array([0.0, 1.0]) if state[-2] == 1.0 else np.array([1.0, 0.0])


def test_tp_step_queries_each_uav():
    uavs = [NodeSpec(n, NodeKind.UAV, 10.0, 1.0, uav_params=UAVParams(), initial_area=0) for n in (2, 5)]
    greedy = EpsilonSchedule(0.0, floor=0.0)
    moves = tp_step(OneHotQ(), np.array([3.0]), uavs, greedy, np.random.default_rng(0), 2)
    assert moves == {2: 1, 5: 0}
    explore = tp_step(OneHotQ(), np.array([3.0]), uavs, EpsilonSchedule(1.0), np.random.default_rng(0), 2)
    assert set(explore) == {2, 5} and set(explore.values()) <= {0, 1}


def test_trajectory_planner_state_and_learning():
    inst = micro_instance()
    planner = TrajectoryPlanner(inst.topology, small_config(history=2), np.random.default_rng(0))
    assert planner.qf.state_dim == 2 * 2 * 2 + 1
    state = planner.state(np.array([5.0, 0.0]))
    assert state.tolist() == [0, 0, 0, 0, 5, 0, 0, 1]
    moves = planner.act(state)
    assert set(moves) == {2} and moves[2] in (0, 1)
    planner.record(TPFrame(np.array([5.0, 0.0]), (moves[2],)))
    planner.learn(1.0, planner.state())
    assert len(planner.memory) == 1 and planner.pending == []
    planner.act(planner.state())
    planner.learn(0.5, planner.state(), done=True)
    assert len(planner.memory) == 2
    assert planner.qf.steps == 1
    assert planner.schedule.epsilon < 1.0


def test_placement_agent_dimensions():
    inst = micro_instance()
    agent = PlacementAgent(inst, small_config(), np.random.default_rng(0))
    assert agent.qf.state_dim == 1 + 2 * 3
    assert agent.qf.n_actions == 3
    placement = agent.place(np.array([10.0]))
    assert list(placement.nodes) == [0]
    assert len(agent.pending) == 1
    agent.learn(1.0)
    assert len(agent.memory) == 1
    agent.place(np.array([10.0]), random=True)
    assert agent.pending == []
