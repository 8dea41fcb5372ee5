import numpy as np
import pytest

from aeroorch.environment import UEState
from aeroorch.model import AreaGrid, Heading, ServiceSpec
from aeroorch.predictor import *
from model_tests import micro_request, parametrize


def grid3():
    return AreaGrid(3, 3, (0.5,) * 9)


def test_interior_law():
    p = next_area_law(grid3(), 4, Heading.N)
    assert p[1] == pytest.approx(0.5)
    assert p[3] == pytest.approx(0.25) and p[5] == pytest.approx(0.25)
    assert p.sum() == pytest.approx(1.0)


def test_law_renormalizes_at_the_border():
    # heading north along the top row: only the right turn stays on the grid
    p = next_area_law(grid3(), 0, Heading.N)
    assert p[1] == pytest.approx(1.0)
    # heading east on the top edge: straight and right remain
    p = next_area_law(grid3(), 1, Heading.E)
    assert p[2] == pytest.approx(0.5 / 0.75) and p[4] == pytest.approx(0.25 / 0.75)


def test_dead_end_reverses():
    grid = AreaGrid(1, 3, (0.5,) * 3)
    p = next_area_law(grid, 0, Heading.W)
    assert p[1] == 1.0


@parametrize([Heading.N, None])
def test_single_area_grid(heading):
    p = next_area_law(AreaGrid(1, 1, (0.5,)), 0, heading)
    assert p.tolist() == [1.0]


def test_unknown_heading_is_uniform_over_neighbors():
    p = next_area_law(grid3(), 4, None)
    assert np.allclose(p[[1, 3, 5, 7]], 0.25)


def test_empty_history_is_uniform():
    report = predict([], grid3(), 2, n_ues=3)
    assert report.area_distribution.shape == (3, 9)
    assert np.allclose(report.area_distribution, 1 / 9)
    assert np.allclose(report.issuance, 0.5)


def test_issuance_frequency_estimate():
    rng = np.random.default_rng(0)
    grid = AreaGrid(1, 2, (0.5, 0.5))
    for trial in range(50):
        history = [Observation(((0, Heading.E),), ((0, 1),) if rng.random() < 0.3 else ()) for _ in range(2000)]
        estimate = decayed_frequency(history, 2, 2, decay=1.0)
        assert abs(estimate[0, 1] - 0.3) < 0.05
        assert estimate[1].sum() == 0.0 and estimate[0, 0] == 0.0


def test_decay_weights_recent_frames():
    history = [Observation((), ((0, 0),)), Observation((), ())]
    estimate = decayed_frequency(history, 1, 1, decay=0.5)
    assert estimate[0, 0] == pytest.approx(0.5 / 1.5)


def test_report_ranking_and_demand():
    history = [Observation(((4, Heading.S),), ((4, 1), (0, 0)))]
    report = predict(history, grid3(), 2)
    assert report.predicted_area(0) == 7
    assert report.ranked[:2] == [(0, 0, 1.0), (4, 1, 1.0)]
    services = (ServiceSpec(0, (0, 2), 3), ServiceSpec(1, (2,), 3))
    assert report.function_demand(services, (0, 2)).tolist() == [1.0, 2.0]


def test_reference_predictor_window_and_capacity():
    grid = grid3()
    predictor = make_predictor("reference", grid, 1, 1)
    ue = UEState(0, 4, Heading.N)
    r = micro_request(0, service=0, cap={0: 8.0})
    for _ in range(40):
        predictor.observe(observe_frame([ue], [r]))
    assert len(predictor.history) == predictor.window
    assert predictor.mean_capacity[0] == pytest.approx(8.0)
    report = predictor.predict()
    demand = predictor.area_demand(report, [r])
    assert demand[4] == pytest.approx(8.0)
    assert demand[1] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        make_predictor("oracle", grid, 1, 1)


def test_learned_predictor_reports_feasible_areas():
    grid = AreaGrid(1, 3, (0.5,) * 3)
    predictor = LearnedPredictor(grid, 2, 1, seed=0, batch_size=2)
    frames = [
        (UEState(0, 0, Heading.E), UEState(1, 2, Heading.W)),
        (UEState(0, 1, Heading.E), UEState(1, 1, Heading.W)),
        (UEState(0, 2, Heading.E), UEState(1, 0, Heading.W)),
    ]
    for ues in frames:
        predictor.observe(observe_frame(ues, []))
    assert predictor.guesses == 4
    assert 0.0 <= predictor.accuracy <= 1.0
    assert predictor.schedule.epsilon < 1.0
    report = predictor.predict()
    assert np.allclose(report.area_distribution.sum(axis=1), 1.0)
    assert report.area_distribution[0, 0] == 0.0
