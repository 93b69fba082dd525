"""Deterministic scaling-limit equation dX = Lap(Psi(X) + g(X)) dt + F dt"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from .phase import PhaseFunctions
from .solver import (NumericalBlowUpException, StepperConfig, Trajectory, _check_finite,
                     _imex_update)
from .spectral import ScalarField, inner_product

log = logging.getLogger(__name__)


class LimitConfig(StepperConfig):
    """Stepper configuration of the limit equation

    with_corrector=False drops g, which gives the plain enthalpy equation used
    as the comparison run of the melting report.
    """

    def __init__(self, *args, with_corrector: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        self.with_corrector: bool = with_corrector

    def refined(self, factor: int) -> 'LimitConfig':
        """Same run with dt divided by factor and the same sample instants"""
        return LimitConfig(self.grid, self.dt / factor, self.T, phase=self.phase,
                           forcing=self.forcing, imex_a=self.imex_a,
                           stride=self.stride * factor, with_corrector=self.with_corrector)

    def manifest(self) -> dict:
        out = super().manifest()
        out['with_corrector'] = self.with_corrector
        return out


def step_deterministic(X: ScalarField, cfg: LimitConfig) -> ScalarField:
    return _imex_update(X, cfg, include_g=cfg.with_corrector)


def solve_limit(x0: ScalarField, cfg: LimitConfig) -> Trajectory:
    X = x0
    states = [X]
    for n in range(cfg.steps):
        X = step_deterministic(X, cfg)
        try:
            _check_finite(X, n, cfg)
        except NumericalBlowUpException:
            log.warning("limit solve blew up at step %d (t=%.6g)", n + 1, (n + 1) * cfg.dt)
            raise
        if (n + 1) % cfg.stride == 0:
            states.append(X)

    return Trajectory(cfg.sample_times(), states, cfg.dt, cfg.stride)


def sup_l2_distance(a: Trajectory, b: Trajectory) -> float:
    """max over common sample instants of ||a(t) - b(t)||_2"""
    if len(a) != len(b) or not np.allclose(a.times, b.times):
        raise ValueError("trajectories are not sampled at the same instants")
    return max(np.sqrt(inner_product(x - y, x - y)) for x, y in zip(a.states, b.states))


def richardson_order(x0: ScalarField, cfg: LimitConfig, ladder: Sequence[int] = (1, 2, 4)) -> float:
    """Self-convergence order in dt from runs at dt/ladder[i]

    Consecutive sup-in-time L2 differences e_i between refinements are fitted
    against the step size; for a first-order scheme e_i halves with dt.
    """
    if len(ladder) < 3:
        raise ValueError("a self-convergence ladder needs at least three levels")

    runs = [solve_limit(x0, cfg.refined(f)) for f in ladder]
    diffs = [sup_l2_distance(runs[i], runs[i + 1]) for i in range(len(runs) - 1)]
    steps = [cfg.dt / f for f in ladder[:-1]]

    if min(diffs) == 0.0:
        return float('inf')

    fit = stats.linregress(np.log(steps), np.log(diffs))
    return float(fit.slope)


class EnhancementReport:
    """Liquid fraction series of the limit equation with and without the corrector"""

    def __init__(self, times: np.ndarray, with_g: np.ndarray, without_g: np.ndarray,
                 coefficient_gap: float):
        self.times = times
        self.with_g = with_g
        self.without_g = without_g
        # min over sampled enthalpies of g'(x), the gap Psi' + g' - Psi'
        self.coefficient_gap = coefficient_gap

    @property
    def coefficients_ordered(self) -> bool:
        return self.coefficient_gap >= 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't': self.times,
            'liquid_fraction_with_g': self.with_g,
            'liquid_fraction_without_g': self.without_g,
        })

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


def diffusion_coefficients(phase: PhaseFunctions, x: np.ndarray):
    """(Psi'(x) + g'(x), Psi'(x)) on the given enthalpy samples"""
    psi = phase.Psi_prime(x)
    return psi + phase.g_prime(x), psi


def melting_enhancement_report(x0: ScalarField, cfg: LimitConfig,
                               samples: Optional[np.ndarray] = None) -> EnhancementReport:
    """Compare the liquid fraction of the limit equation with and without g"""
    with_g = LimitConfig(cfg.grid, cfg.dt, cfg.T, phase=cfg.phase, forcing=cfg.forcing,
                         imex_a=cfg.imex_a, stride=cfg.stride, with_corrector=True)
    without_g = LimitConfig(cfg.grid, cfg.dt, cfg.T, phase=cfg.phase, forcing=cfg.forcing,
                            imex_a=cfg.imex_a, stride=cfg.stride, with_corrector=False)

    values = x0.values
    if values.min() >= 0 or values.max() <= 0:
        log.info("initial enthalpy does not take both signs; the report is single-phase")

    a = solve_limit(x0, with_g)
    b = solve_limit(x0, without_g)

    phase = cfg.phase
    if samples is None:
        lo = min(values.min(), -1.0)
        hi = max(values.max(), phase.mushy_top + 1.0)
        samples = np.linspace(lo, hi, 4001)
    enhanced, plain = diffusion_coefficients(phase, samples)

    return EnhancementReport(
        a.times,
        np.array([phase.liquid_fraction(X.values) for X in a.states]),
        np.array([phase.liquid_fraction(X.values) for X in b.states]),
        float(np.min(enhanced - plain)))
