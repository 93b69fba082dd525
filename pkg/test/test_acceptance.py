"""Longer ensemble runs, deselected by default; run with `pytest -m slow`"""
import numpy as np
import pytest

from stefanpy.experiment import (ExperimentPlan, holder_increment_estimate,
                                 martingale_scaling_ratios, run_convergence)
from stefanpy.noise import NoiseSpec, make_family
from stefanpy.solver import SolverConfig, energy_inequality_check, simulate_path
from stefanpy.spectral import ScalarField, TorusGrid
from stefanpy.validation import check_ito_stratonovich

pytestmark = pytest.mark.slow

TWO_PI = 2 * np.pi


def blob(grid):
    def f(x1, x2):
        return -0.5 + 2.5 * np.exp(-(x1 ** 2 + x2 ** 2) / (2 * 0.15 ** 2))
    return ScalarField.from_function(grid, f)


class TestAcceptance(object):
    def test_energy_inequality_many_seeds(self):
        grid = TorusGrid(n=64)
        x0 = blob(grid)
        for seed in range(20):
            cfg = SolverConfig(grid, 1e-4, 0.01, noise=NoiseSpec(make_family(8), grid, seed=seed),
                               stride=10)
            _, diag = simulate_path(x0, cfg)

            assert energy_inequality_check(diag, cfg).passed

    def test_ito_stratonovich_many_replicas(self):
        assert check_ito_stratonovich(replicas=256).passed

    def test_distance_shrinks_with_radius(self):
        grid = TorusGrid(n=32)
        plan = ExperimentPlan([2, 4, 8, 16], replicas=16, base_seed=2024, x0=blob(grid),
                              dt=1e-4, T=0.01, stride=10)
        report = run_convergence(plan, threads=4)
        d = [row.mean_distance for row in report.rows]
        c = [row.sup_norm for row in report.rows]

        assert all(later < earlier for earlier, later in zip(d, d[1:]))
        # d_N follows c_N, so the last distance can only drop as far as c_16 / c_2 allows
        assert d[-1] < 1.2 * (c[-1] / c[0]) * d[0]
        assert all(1 / 3 <= ratio <= 3 for ratio in martingale_scaling_ratios(report).values())
        assert all(row.aborted_paths == 0 for row in report.rows)

    def test_time_regularity_of_paths(self):
        grid = TorusGrid(n=32)
        cfg = SolverConfig(grid, 1e-4, 0.0064, noise=NoiseSpec(make_family(8), grid, seed=1))
        paths = [simulate_path(blob(grid), cfg, replica=m)[0] for m in range(4)]

        assert holder_increment_estimate(paths, beta=5, r=4) >= 1.8
