import inspect

import jax.numpy as jnp
import pytest

from aeroorch.model import *


def rel_error(t1, t2):
    error = jnp.sqrt(jnp.mean(jnp.abs(t1 - t2) ** 2))
    scale = jnp.sqrt(jnp.mean(jnp.abs(t1) ** 2)) + jnp.sqrt(jnp.mean(jnp.abs(t2) ** 2))
    return error / jnp.maximum(scale, 1e-7)


def strip_parens(string):
    return string.replace("(", "").replace(")", "")


def parametrize(cases, ids=None):
    """Expands test cases with pytest.mark.parametrize but with argnames
    assumed and ids given by the ids=[str(case) for case in cases]"""

    def decorator(test_fn):
        argnames = ",".join(inspect.getfullargspec(test_fn).args)
        theids = [strip_parens(str(case)) for case in cases] if ids is None else ids
        return pytest.mark.parametrize(argnames, cases, ids=theids)(test_fn)

    return decorator


def micro_request(id=0, ue=0, service=0, entry=0, duration=1, bw=2.0, cap=None, latency=50.0, slots=1):
    return Request(id, ue, service, entry, duration, bw, {0: 10.0} if cap is None else cap, latency, slots)


def micro_instance(requests=None, frames=2, slots=2, n_ues=1):
    """Two areas side by side with always-LoS channels: core and RSU in area
    0, one UAV starting in area 1, a single one-function service."""
    grid = AreaGrid(1, 2, (1.0, 1.0), cell_size=100.0)
    nodes = [
        NodeSpec(0, NodeKind.CORE, 50.0, 10.0, fixed_area=0),
        NodeSpec(1, NodeKind.RSU, 30.0, 5.0, fixed_area=0),
        NodeSpec(2, NodeKind.UAV, 40.0, 3.0, uav_params=UAVParams(), initial_area=1),
    ]
    links = [LinkSpec(0, (0, 1), 20.0, 1.0, 5.0), LinkSpec(1, (1, 2), 20.0, 2.0, 4.0)]
    topology = NetworkTopology(grid, nodes, links)
    return Instance(
        topology,
        (ServiceSpec(0, (0,), 1),),
        (ChannelSpec(0, 1.0),),
        TimeBase(frames, slots),
        n_ues,
        tuple([micro_request()] if requests is None else requests),
        ue_initial_areas=(0,) * n_ues,
    )


def test_heading_turns():
    for h in Heading:
        assert h.left().right() == h
        assert h.reverse().reverse() == h
        assert h.left().left() == h.reverse()


def test_grid_neighbors_and_adjacency():
    grid = AreaGrid(3, 3, (0.5,) * 9)
    assert grid.neighbor(4, Heading.N) == 1
    assert grid.neighbor(4, "E") == 5
    assert grid.neighbor(0, Heading.W) is None
    assert grid.adjacency[4] == frozenset({1, 3, 5, 7})
    assert grid.adjacency[0] == frozenset({1, 3})
    assert grid.manhattan(0, 8) == 4


def test_poa_distance_floors_at_half_a_cell():
    grid = AreaGrid(1, 2, (0.5, 0.5), cell_size=100.0)
    assert grid.poa_distance(0, 0) == 50.0
    assert grid.poa_distance(0, 1) == 100.0


@parametrize([(0, 3), (3, 0), (-1, 2)])
def test_empty_grid_raises(rows, cols):
    with pytest.raises(DimensionError):
        build_grid(rows, cols)


def test_time_base_rejects_zero_slots():
    with pytest.raises(DimensionError):
        TimeBase(10, 0)
    assert TimeBase(5, 10).global_slot(2, 3) == 23


def test_velocity_profile_cruise_speed():
    profile = VelocityProfile((0.0, 10.0), (8.0, 12.0))
    assert profile.cruise_speed == pytest.approx(10.0)
    assert profile(5.0) == pytest.approx(10.0)
    assert UAVParams(velocity_profile=profile).cruise_speed == pytest.approx(10.0)
    with pytest.raises(ValueError):
        VelocityProfile((1.0, 1.0), (2.0, 3.0))


def test_service_chain_defaults_to_sequence():
    s = ServiceSpec(0, (4, 2, 7), 3)
    assert s.data_graph == ((4, 2), (2, 7))
    assert s.chain == (4, 2, 7)
    dag = ServiceSpec(1, (1, 2, 3), 3, ((3, 1), (1, 2)))
    assert dag.chain == (3, 1, 2)


def test_request_requirements_must_be_positive():
    with pytest.raises(ValueError):
        micro_request(bw=0.0)
    with pytest.raises(ValueError):
        micro_request(cap={0: -1.0})
    r = micro_request(entry=3, duration=4)
    assert list(r.active_window) == [3, 4, 5, 6]
    assert list(r.window(5)) == [3, 4]
    assert r.is_active(6) and not r.is_active(7)


def test_micro_paths():
    topo = micro_instance().topology
    sequences = [p.node_sequence for p in topo.paths]
    assert sequences[:3] == [(0,), (1,), (2,)]
    assert (0, 1, 2) in sequences and (2, 1, 0) in sequences
    assert len(sequences) == 3 + 4 + 2
    assert [p.node_sequence for p in topo.paths_between(1, 1)] == [(1,)]
    for p in topo.paths:
        assert p.hops == len(p.node_sequence) - 1
        assert all(topo.link_between(a, b) in p.link_sequence for a, b in zip(p.node_sequence, p.node_sequence[1:]))


def test_enumerate_paths_orders_by_hops():
    topo = micro_instance().topology
    paths = enumerate_paths(topo, 1)
    assert [p.node_sequence for p in paths] == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert [p.id for p in paths] == [0, 1, 2, 3]
    assert paths[2].link_sequence == (1,) and paths[2].membership(1) == 1 and paths[2].membership(0) == 0
    assert [p.node_sequence for p in enumerate_paths(topo, 0)] == [(0,), (1,), (2,)]
    lonely = NetworkTopology(topo.grid, topo.nodes + (NodeSpec(3, NodeKind.RSU, 5.0, 1.0, fixed_area=1),), topo.links)
    assert all(3 not in p.node_sequence for p in enumerate_paths(lonely, 3))


def test_validate_topology_names_offenders():
    grid = AreaGrid(1, 2, (0.5, 0.5))
    nodes = [NodeSpec(0, NodeKind.RSU, 10.0, 1.0), NodeSpec(1, NodeKind.UAV, 10.0, 1.0, initial_area=0)]
    links = [LinkSpec(0, (0, 1), 10.0, 1.0, 1.0), LinkSpec(1, (1, 0), 10.0, 1.0, 0.0)]
    report = validate_topology(NetworkTopology(grid, nodes, links))
    offenders = sorted((v.entity, v.detail) for v in report.violations)
    assert offenders == [
        ("link 1", "base latency must be positive"),
        ("link 1", "parallel link"),
        ("node 0", "missing fixed area"),
        ("node 1", "missing aerodynamic parameters"),
    ]
    assert validate_topology(micro_instance().topology).ok


def test_uav_links_need_range():
    grid = AreaGrid(1, 4, (0.5,) * 4)
    nodes = [NodeSpec(0, NodeKind.RSU, 10.0, 1.0, fixed_area=0), NodeSpec(1, NodeKind.UAV, 10.0, 1.0, uav_params=UAVParams(), initial_area=0)]
    topo = NetworkTopology(grid, nodes, [LinkSpec(0, (0, 1), 10.0, 1.0, 1.0)], uav_link_range=2)
    assert topo.is_wireless(0)
    assert topo.available_links({0: 0, 1: 2}) == frozenset({0})
    assert topo.available_links({0: 0, 1: 3}) == frozenset()
    assert len(topo.available_paths({0: 0, 1: 3})) == 2


def test_validate_catches_bad_entities():
    inst = micro_instance(requests=[micro_request(slots=5)])
    report = validate_instance(inst)
    assert not report.ok
    assert "exceed" in str(report)
    assert str(validate_instance(micro_instance())) == "0 violations"


@parametrize([0, 1, 7])
def test_generated_instances_validate(seed):
    inst = generate_instance(nodes=6, rows=3, cols=3, channels=3, services=3, frames=10, seed=seed)
    assert validate_instance(inst).ok
    assert len(inst.topology.uavs) >= 1
    assert inst.topology.nodes[0].kind == NodeKind.CORE


def test_generation_is_reproducible_per_stream():
    a = instance_to_dict(generate_instance(nodes=6, channels=2, seed=3))
    b = instance_to_dict(generate_instance(nodes=6, channels=2, seed=3))
    assert a == b
    wider = instance_to_dict(generate_instance(nodes=6, channels=4, seed=3))
    assert wider["channels"][:2] == a["channels"]
    assert wider["services"] == a["services"]


def test_instance_document_round_trip(tmp_path):
    inst = micro_instance()
    path = tmp_path / "micro.yaml"
    save_instance(inst, path)
    loaded = load_instance(path)
    assert instance_to_dict(loaded) == instance_to_dict(inst)
    assert loaded.functions == (0,)


def test_malformed_document_raises(tmp_path):
    with pytest.raises(InstanceError):
        instance_from_dict({"grid": {"rows": 1}})
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(InstanceError):
        load_instance(path)
