import json

import numpy as np
import pytest

from stefanpy.experiment import (DegenerateIncrementsException, ExperimentPlan,
                                 ExperimentPlanException, ExperimentThresholdException,
                                 InsufficientSamplesException, ReplicaResult, _check_aborts,
                                 holder_increment_estimate, martingale_decay_probe,
                                 martingale_scaling_ratios, run_convergence, time_sobolev_seminorm)
from stefanpy.noise import make_family
from stefanpy.phase import PhaseFunctions
from stefanpy.solver import Trajectory
from stefanpy.spectral import ScalarField, TorusGrid

TWO_PI = 2 * np.pi


@pytest.fixture
def grid():
    return TorusGrid(n=16)


@pytest.fixture
def x0(grid):
    return ScalarField.from_function(
        grid, lambda x1, x2: 0.8 + 1.4 * np.cos(TWO_PI * x1) + 0.5 * np.sin(TWO_PI * x2))


@pytest.fixture
def plan(x0):
    return ExperimentPlan([2, 4], replicas=3, base_seed=7, x0=x0, dt=1e-4, T=2e-3, stride=2)


def decaying_mode(grid, count, T, rate=0.5 * 4 * np.pi ** 2):
    times = np.linspace(0.0, T, count)
    states = [ScalarField.from_function(
        grid, lambda x1, x2, t=t: np.exp(-rate * t) * np.cos(TWO_PI * x1)) for t in times]
    return Trajectory(times, states, times[1] - times[0], 1)


class TestPlan(object):
    def test_radii_must_increase(self, x0):
        with pytest.raises(ExperimentPlanException):
            ExperimentPlan([4, 2], replicas=3, base_seed=0, x0=x0, dt=1e-4, T=1e-3)

    def test_needs_two_replicas(self, x0):
        with pytest.raises(ExperimentPlanException):
            ExperimentPlan([2], replicas=1, base_seed=0, x0=x0, dt=1e-4, T=1e-3)

    def test_time_regularity_window(self, x0):
        with pytest.raises(ExperimentPlanException):
            ExperimentPlan([2], replicas=2, base_seed=0, x0=x0, dt=1e-4, T=1e-3, sobolev_alpha=0.2)

    def test_seeds_differ_per_radius(self, plan):
        assert plan.seed_for(2) != plan.seed_for(4)
        assert plan.seed_for(2) == plan.seed_for(2)
        assert plan.solver_config(4).noise.seed == plan.seed_for(4)

    def test_power_profile(self, x0):
        plan = ExperimentPlan([2], replicas=2, base_seed=0, x0=x0, dt=1e-4, T=1e-3,
                              profile='power', power=2.0)

        assert plan.family(2).sup_norm == pytest.approx(make_family(2, 'power', p=2.0).sup_norm)


class TestConvergence(object):
    def test_report(self, plan, tmp_path):
        report = run_convergence(plan)

        assert [row.N for row in report.rows] == [2, 4]
        for row in report.rows:
            assert row.sup_norm == pytest.approx(make_family(row.N).sup_norm)
            assert row.mean_distance > 0
            assert row.max_distance >= row.mean_distance
            assert row.aborted_paths == 0
            assert row.holder_exponent is None
            assert row.time_sobolev > 0

        paths = report.write(tmp_path)
        assert [p.name for p in paths] == ['report.json', 'report.csv', 'plot_data.csv',
                                           'chart.vl.json']
        assert list(report.plot_frame().columns) == ['N', 'c_N', 'd_N', 'std_error']
        data = json.loads(paths[0].read_text())
        assert data['plan']['Ns'] == [2, 4]

    def test_independent_of_thread_count(self, plan):
        assert run_convergence(plan, threads=1).to_json() == run_convergence(plan, threads=3).to_json()

    def test_no_transport_collapses_onto_limit(self, x0):
        plan = ExperimentPlan([2, 4], replicas=2, base_seed=1, x0=x0, dt=1e-4, T=2e-3, stride=2,
                              phase=PhaseFunctions(eps=100.0))
        report = run_convergence(plan)

        for row in report.rows:
            assert row.mean_distance == 0.0
            assert row.martingale_decay == 0.0

    def test_abort_threshold(self, plan):
        results = [ReplicaResult(0, distance=0.1), ReplicaResult(1, failure="non-finite state")]

        with pytest.raises(ExperimentThresholdException) as info:
            _check_aborts(plan, 4, results)
        assert info.value.N == 4
        assert info.value.failures == ["replica 1: non-finite state"]
        assert _check_aborts(plan, 4, results[:1]) == []


class TestMartingale(object):
    def test_probe(self, plan):
        stats = martingale_decay_probe(plan)

        assert sorted(stats) == [2, 4]
        assert all(v > 0 for v in stats.values())

    def test_scaling_ratios(self):
        c4, c8 = make_family(4).sup_norm, make_family(8).sup_norm
        ratios = martingale_scaling_ratios({4: 1.0, 8: 0.5})

        assert ratios[(4, 8)] == pytest.approx(0.5 / (c8 ** 2 / c4 ** 2))


class TestTimeRegularity(object):
    def test_smooth_path_exponent(self, grid):
        trajectory = decaying_mode(grid, 65, 0.01)

        assert holder_increment_estimate(trajectory, beta=5, r=4) == pytest.approx(4.0, abs=0.2)

    def test_too_few_samples(self, grid):
        with pytest.raises(InsufficientSamplesException):
            holder_increment_estimate(decaying_mode(grid, 10, 0.01))

    def test_frozen_path_is_degenerate(self, grid):
        trajectory = decaying_mode(grid, 65, 0.01, rate=0.0)

        with pytest.raises(DegenerateIncrementsException):
            holder_increment_estimate(trajectory)

    def test_sobolev_seminorm(self, grid):
        assert time_sobolev_seminorm(decaying_mode(grid, 33, 0.01, rate=0.0)) == 0.0
        assert time_sobolev_seminorm(decaying_mode(grid, 33, 0.01)) > 0
