"""Monte Carlo harness for the scaling limit

For each truncation radius N an ensemble of paths X^N is compared with the
deterministic limit X_bar solved once on the same grid and time step. Because
the limit law is a Dirac mass, convergence in law is measured through
E[sup_t ||X^N(t) - X_bar(t)||_{H^-1}].
"""
import asyncio
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import altair as alt
import numpy as np
import pandas as pd
from scipy import stats

from .limit import solve_limit
from .noise import CoefficientFamily, ModeIndex, NoiseSpec, make_family
from .phase import DEFAULT_PHASE, PhaseFunctions
from .solver import (NumericalBlowUpException, SolverConfig, Trajectory, increment_samples,
                     lag_norms, simulate_path, weighted_spectra)
from .spectral import ScalarField, TorusGrid, h_norm

log = logging.getLogger(__name__)

MIN_HOLDER_SAMPLES = 64


class ExperimentPlanException(Exception):
    """Experiment plan is malformed"""
    pass


class ExperimentThresholdException(Exception):
    """Too many replicas aborted"""

    def __init__(self, N: int, failures: List[str], fraction: float, limit: float):
        self.N = N
        self.failures = failures
        self.fraction = fraction
        self.limit = limit
        super().__init__(
            f"N={N}: {len(failures)} aborted replicas ({fraction:.1%}) exceed the limit of {limit:.1%}")


class DegenerateIncrementsException(Exception):
    """Every sampled increment vanishes, no exponent can be fitted"""
    pass


class InsufficientSamplesException(Exception):
    """Trajectory has too few sample instants for the increment fit"""
    pass


class ExperimentPlan:
    """Truncation radii, ensemble size and the solver settings shared across N"""

    def __init__(self, Ns: Sequence[int], replicas: int, base_seed: int,
                 x0: ScalarField, dt: float, T: float,
                 phase: PhaseFunctions = DEFAULT_PHASE,
                 forcing: Optional[ScalarField] = None,
                 imex_a: Optional[float] = None,
                 scheme: str = 'ito_imex',
                 stride: int = 10,
                 profile: str = 'flat',
                 power: float = 1.0,
                 holder_beta: float = 5.0,
                 holder_r: float = 4.0,
                 holder_pairs: int = 64,
                 sobolev_alpha: float = 0.375,
                 probe: ModeIndex = ModeIndex(1, 0),
                 abort_fraction: float = 0.01):
        Ns = [int(N) for N in Ns]
        if not Ns:
            raise ExperimentPlanException("plan needs at least one truncation radius")
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ExperimentPlanException(f"truncation radii must be strictly increasing, got {Ns}")
        if replicas < 2:
            raise ExperimentPlanException(f"at least 2 replicas are needed, got {replicas}")
        if not (1.0 / holder_r < sobolev_alpha < 0.5):
            raise ExperimentPlanException(
                f"time regularity {sobolev_alpha} must lie in (1/r, 1/2) = ({1 / holder_r}, 0.5)")

        self.Ns: List[int] = Ns
        self.replicas: int = int(replicas)
        self.base_seed: int = int(base_seed) & 0xFFFFFFFFFFFFFFFF
        self.x0: ScalarField = x0
        self.dt: float = dt
        self.T: float = T
        self.phase: PhaseFunctions = phase
        self.forcing: Optional[ScalarField] = forcing
        self.imex_a: Optional[float] = imex_a
        self.scheme: str = scheme
        self.stride: int = stride
        self.profile: str = profile
        self.power: float = power
        self.holder_beta: float = holder_beta
        self.holder_r: float = holder_r
        self.holder_pairs: int = holder_pairs
        self.sobolev_alpha: float = sobolev_alpha
        self.probe: ModeIndex = probe
        self.abort_fraction: float = abort_fraction

    @property
    def grid(self) -> TorusGrid:
        return self.x0.grid

    def seed_for(self, N: int) -> int:
        """Independent stream family per truncation radius"""
        h = blake2b(digest_size=8)
        h.update(f"{self.base_seed}:N={N}".encode('utf-8'))
        return int.from_bytes(h.digest(), 'little')

    def family(self, N: int) -> CoefficientFamily:
        if self.profile == 'power':
            return make_family(N, 'power', p=self.power)
        return make_family(N, self.profile)

    def solver_config(self, N: int) -> SolverConfig:
        noise = NoiseSpec(self.family(N), self.grid, seed=self.seed_for(N))
        return SolverConfig(self.grid, self.dt, self.T, noise=noise, scheme=self.scheme,
                            phase=self.phase, forcing=self.forcing, imex_a=self.imex_a,
                            stride=self.stride)

    def manifest(self) -> dict:
        return {
            'Ns': self.Ns,
            'replicas': self.replicas,
            'base_seed': self.base_seed,
            'n': self.grid.n,
            'dt': self.dt,
            'T': self.T,
            'scheme': self.scheme,
            'stride': self.stride,
            'profile': self.profile,
            'power': self.power,
            'holder': {'beta': self.holder_beta, 'r': self.holder_r, 'pairs': self.holder_pairs},
            'sobolev_alpha': self.sobolev_alpha,
            'probe': list(self.probe.k),
            'abort_fraction': self.abort_fraction,
        }


@dataclass
class ReplicaResult:
    replica: int
    distance: float = float('nan')
    martingale_sup: float = float('nan')
    sobolev: float = float('nan')
    increments: Optional[np.ndarray] = None
    failure: Optional[str] = None

    @property
    def aborted(self) -> bool:
        return self.failure is not None


@dataclass
class ConvergenceRow:
    N: int
    sup_norm: float
    mean_distance: float
    max_distance: float
    std_error: float
    truncated_mean: float
    aborted_paths: int
    holder_exponent: Optional[float]
    martingale_decay: float
    time_sobolev: float

    def as_dict(self) -> dict:
        return {k: _plain(v) for k, v in self.__dict__.items()}


def _plain(value):
    if isinstance(value, (np.floating, float)):
        return None if not np.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


@dataclass
class ConvergenceReport:
    rows: List[ConvergenceRow]
    plan: dict
    failures: Dict[int, List[str]] = field(default_factory=dict)

    @property
    def holder_exponents(self) -> Dict[int, Optional[float]]:
        return {row.N: row.holder_exponent for row in self.rows}

    @property
    def martingale_decay(self) -> Dict[int, float]:
        return {row.N: row.martingale_decay for row in self.rows}

    def to_json(self) -> str:
        return json.dumps({
            'plan': self.plan,
            'rows': [row.as_dict() for row in self.rows],
            'failures': {str(N): f for N, f in sorted(self.failures.items())},
        }, sort_keys=True, indent=2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.as_dict() for row in self.rows])

    def plot_frame(self) -> pd.DataFrame:
        frame = self.to_frame()[['N', 'sup_norm', 'mean_distance', 'std_error']]
        return frame.rename(columns={'sup_norm': 'c_N', 'mean_distance': 'd_N'})

    def chart(self) -> alt.Chart:
        """Log-log chart of d_N against c_N with standard-error bars"""
        data = self.plot_frame()
        data['lower'] = data['d_N'] - data['std_error']
        data['upper'] = data['d_N'] + data['std_error']

        base = alt.Chart(data).encode(
            x=alt.X('c_N:Q', scale=alt.Scale(type='log'), title='sup_k alpha_k'))
        points = base.mark_line(point=True).encode(
            y=alt.Y('d_N:Q', scale=alt.Scale(type='log'), title='E sup_t |X^N - X|_{H^-1}'),
            tooltip=['N', 'c_N', 'd_N', 'std_error'])
        bars = base.mark_errorbar().encode(y='lower:Q', y2='upper:Q')
        return (points + bars).properties(title='Distance to the scaling limit')

    def write(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / 'report.json', directory / 'report.csv',
                 directory / 'plot_data.csv', directory / 'chart.vl.json']
        paths[0].write_text(self.to_json())
        self.to_frame().to_csv(paths[1], index=False, float_format='%.17g')
        self.plot_frame().to_csv(paths[2], index=False, float_format='%.17g')
        paths[3].write_text(self.chart().to_json(indent=2))
        return paths


def fit_holder_exponent(samples: np.ndarray, r: float) -> float:
    """Least-squares slope of log mean(norm^r) against log lag"""
    if samples.size == 0 or not np.any(samples[:, 1] > 0):
        raise DegenerateIncrementsException("all sampled increments are zero")

    lags = np.unique(samples[:, 0].round(12))
    means = np.array([np.mean(samples[np.isclose(samples[:, 0], lag), 1] ** r) for lag in lags])
    usable = means > 0
    if usable.sum() < 2:
        raise DegenerateIncrementsException("fewer than two lags carry nonzero increments")

    fit = stats.linregress(np.log(lags[usable]), np.log(means[usable]))
    return float(fit.slope)


def holder_increment_estimate(trajectories: Union[Trajectory, Sequence[Trajectory]],
                              beta: float = 5.0, r: float = 4.0, pairs: int = 64) -> float:
    """Fitted exponent of E||X(t) - X(s)||^r_{H^-beta} against |t - s|

    The tightness bound predicts a slope of at least r/2; paths that are
    differentiable in time give r.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]

    for trajectory in trajectories:
        if len(trajectory) < MIN_HOLDER_SAMPLES:
            raise InsufficientSamplesException(
                f"{len(trajectory)} sample instants, at least {MIN_HOLDER_SAMPLES} are needed")

    samples = np.vstack([increment_samples(t, beta, pairs=pairs) for t in trajectories])
    return fit_holder_exponent(samples, r)


def time_sobolev_seminorm(trajectory: Trajectory, alpha: float = 0.375, r: float = 4.0,
                          beta: float = 5.0) -> float:
    """int int ||X(t) - X(s)||^r_{H^-beta} / |t - s|^(1 + alpha r) ds dt on the sample grid"""
    count = len(trajectory)
    h = trajectory.times[1] - trajectory.times[0]
    weighted = weighted_spectra(trajectory, -beta)
    total = 0.0
    for lag in range(1, count):
        norms = lag_norms(weighted, lag)
        # pairs (i, i+lag) and (i+lag, i)
        total += 2.0 * np.sum(norms ** r) / (lag * h) ** (1 + alpha * r)
    return float(total * h * h)


def _run_replica(plan: ExperimentPlan, cfg: SolverConfig, replica: int,
                 reference: Optional[Trajectory]) -> ReplicaResult:
    try:
        trajectory, diagnostics = simulate_path(plan.x0, cfg, replica, probe=plan.probe)
    except NumericalBlowUpException as e:
        return ReplicaResult(replica, failure=str(e))

    result = ReplicaResult(replica)
    if diagnostics.martingale is not None:
        result.martingale_sup = float(np.max(diagnostics.martingale ** 2))
    else:
        result.martingale_sup = 0.0

    if reference is not None:
        result.distance = max(h_norm(x - y, -1) for x, y in zip(trajectory.states, reference.states))

    if len(trajectory) >= MIN_HOLDER_SAMPLES:
        result.increments = increment_samples(trajectory, plan.holder_beta, pairs=plan.holder_pairs)
    result.sobolev = time_sobolev_seminorm(trajectory, plan.sobolev_alpha, plan.holder_r,
                                           plan.holder_beta)
    return result


async def _run_ensemble(plan: ExperimentPlan, N: int, reference: Optional[Trajectory],
                        pool: ThreadPoolExecutor) -> List[ReplicaResult]:
    loop = asyncio.get_running_loop()
    cfg = plan.solver_config(N)
    futures = [loop.run_in_executor(pool, _run_replica, plan, cfg, m, reference)
               for m in range(plan.replicas)]
    # gather keeps replica order, so the reduction below is independent of scheduling
    return list(await asyncio.gather(*futures))


def _summarize(plan: ExperimentPlan, N: int, results: List[ReplicaResult]) -> ConvergenceRow:
    done = [r for r in results if not r.aborted]
    distances = np.array([r.distance for r in done])
    c_N = plan.family(N).sup_norm

    if len(distances) > 1:
        std_error = float(np.std(distances, ddof=1) / np.sqrt(len(distances)))
    else:
        std_error = float('nan')

    holder = None
    samples = [r.increments for r in done if r.increments is not None]
    if samples:
        try:
            holder = fit_holder_exponent(np.vstack(samples), plan.holder_r)
        except DegenerateIncrementsException:
            log.info("N=%d: increments are degenerate, no exponent fitted", N)

    return ConvergenceRow(
        N=N,
        sup_norm=c_N,
        mean_distance=float(np.mean(distances)) if len(distances) else float('nan'),
        max_distance=float(np.max(distances)) if len(distances) else float('nan'),
        std_error=std_error,
        truncated_mean=float(np.mean(np.minimum(distances, 1.0))) if len(distances) else float('nan'),
        aborted_paths=len(results) - len(done),
        holder_exponent=holder,
        martingale_decay=float(np.mean([r.martingale_sup for r in done])) if done else float('nan'),
        time_sobolev=float(np.mean([r.sobolev for r in done])) if done else float('nan'),
    )


def _check_aborts(plan: ExperimentPlan, N: int, results: List[ReplicaResult]) -> List[str]:
    failures = [f"replica {r.replica}: {r.failure}" for r in results if r.aborted]
    for failure in failures:
        log.warning("N=%d %s", N, failure)
    fraction = len(failures) / len(results)
    if fraction > plan.abort_fraction:
        raise ExperimentThresholdException(N, failures, fraction, plan.abort_fraction)
    return failures


async def _run_convergence(plan: ExperimentPlan, threads: int) -> ConvergenceReport:
    # 1. deterministic reference on the same grid, step and sample instants
    reference = solve_limit(plan.x0, plan.solver_config(plan.Ns[0]).deterministic())

    rows = []
    failures = {}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for N in plan.Ns:
            # 2. ensemble for this truncation radius
            results = await _run_ensemble(plan, N, reference, pool)
            aborted = _check_aborts(plan, N, results)
            if aborted:
                failures[N] = aborted

            # 3. ordered reduction
            row = _summarize(plan, N, results)
            log.info("N=%d: c_N=%.4g d_N=%.4g (se %.2g), %d aborted",
                     N, row.sup_norm, row.mean_distance, row.std_error, row.aborted_paths)
            rows.append(row)

    return ConvergenceReport(rows, plan.manifest(), failures)


def run_convergence(plan: ExperimentPlan, threads: int = 1) -> ConvergenceReport:
    return asyncio.run(_run_convergence(plan, max(1, threads)))


async def _martingale_probe(plan: ExperimentPlan, threads: int) -> Dict[int, float]:
    out = {}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for N in plan.Ns:
            results = await _run_ensemble(plan, N, None, pool)
            _check_aborts(plan, N, results)
            out[N] = float(np.mean([r.martingale_sup for r in results if not r.aborted]))
    return out


def martingale_decay_probe(plan: ExperimentPlan, threads: int = 1) -> Dict[int, float]:
    """Per N, the replica mean of sup_t |S(t)|^2 for the probe test mode"""
    return asyncio.run(_martingale_probe(plan, max(1, threads)))


def martingale_scaling_ratios(report: Union[ConvergenceReport, Dict[int, float]],
                              profile: str = 'flat') -> Dict[tuple, float]:
    """(stat_N2 / stat_N1) / (c_N2^2 / c_N1^2) for consecutive radii, ideally near 1"""
    if isinstance(report, ConvergenceReport):
        stats_by_N = report.martingale_decay
        sup = {row.N: row.sup_norm for row in report.rows}
    else:
        stats_by_N = report
        sup = {N: make_family(N, profile).sup_norm for N in report}

    Ns = sorted(stats_by_N)
    return {(a, b): (stats_by_N[b] / stats_by_N[a]) / (sup[b] ** 2 / sup[a] ** 2)
            for a, b in zip(Ns, Ns[1:])}
