"""Time integration of the stochastic enthalpy equation

    dX = Lap(Psi(X) + g(X)) dt - sum_k alpha_k sigma_k . grad Gamma(X) dbeta_k + F dt

and the pathwise diagnostics checked against it.

Both schemes share one IMEX update: the shift imex_a * Lap is implicit, the
Lipschitz remainder Lap(Psi + g - imex_a) is explicit, and the transport
increment enters the right-hand side before the diagonal spectral solve.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .noise import ModeCoupling, ModeIndex, NoiseSpec, sample_increments, velocity_field
from .phase import DEFAULT_PHASE, PhaseFunctions
from .spectral import (ScalarField, TorusGrid, VectorField, backward, forward, gradient,
                       inner_product, sobolev_weights, write_snapshot)

log = logging.getLogger(__name__)

SCHEMES = ('ito_imex', 'stratonovich_midpoint')


class SolverConfigException(Exception):
    """Stepper parameters are inconsistent or violate the stability bounds"""
    pass


class NumericalBlowUpException(Exception):
    """State became non-finite while stepping"""

    def __init__(self, step: int, time: float, replica: Optional[int] = None):
        self.step = step
        self.time = time
        self.replica = replica
        where = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"non-finite state after step {step} at t={time:.6g}{where}")


class ForcingNotAllowedException(Exception):
    """Operation only holds for runs without forcing"""
    pass


class StrideException(Exception):
    """Trajectory is not stored densely enough for the requested operation"""
    pass


class StepperConfig:
    """Grid, time step, horizon and deterministic coefficients shared by all steppers"""

    def __init__(self, grid: TorusGrid, dt: float, T: float,
                 phase: PhaseFunctions = DEFAULT_PHASE,
                 forcing: Optional[ScalarField] = None,
                 imex_a: Optional[float] = None,
                 stride: int = 1):
        if dt <= 0 or T <= 0:
            raise SolverConfigException(f"dt and T must be positive, got dt={dt}, T={T}")

        steps = int(round(T / dt))
        if steps < 1 or abs(steps * dt - T) > 1e-9 * T:
            raise SolverConfigException(f"T={T} is not a whole number of steps dt={dt}")
        if stride < 1 or steps % stride != 0:
            raise SolverConfigException(f"stride {stride} does not divide the {steps} steps")

        if forcing is not None and forcing.grid != grid:
            raise SolverConfigException("forcing lives on a different grid")

        lip = phase.psi_lip + phase.g_lip
        if imex_a is None:
            imex_a = lip
        if imex_a < lip:
            raise SolverConfigException(
                f"imex_a = {imex_a} is below Lip(Psi) + Lip(g) = {lip}")

        self.grid: TorusGrid = grid
        self.dt: float = float(dt)
        self.T: float = float(T)
        self.steps: int = steps
        self.stride: int = stride
        self.phase: PhaseFunctions = phase
        self.forcing: Optional[ScalarField] = forcing
        self.imex_a: float = float(imex_a)

        bound = self.remainder_stiffness()
        if bound > 0.5:
            raise SolverConfigException(f"explicit remainder bound {bound:.4g} exceeds 0.5")

    @property
    def forcing_hat(self) -> Optional[np.ndarray]:
        return None if self.forcing is None else self.forcing.spectral

    @property
    def has_forcing(self) -> bool:
        return self.forcing is not None and bool(np.any(self.forcing.values))

    def remainder_stiffness(self) -> float:
        """dt * 4 pi^2 (n/2)^2 * max(0, Lip(Psi) + Lip(g) - imex_a)"""
        excess = max(0.0, self.phase.psi_lip + self.phase.g_lip - self.imex_a)
        return self.dt * 4 * np.pi ** 2 * (self.grid.n / 2) ** 2 * excess

    def sample_times(self) -> np.ndarray:
        return np.arange(0, self.steps + 1, self.stride) * self.dt

    def manifest(self) -> dict:
        return {
            'n': self.grid.n,
            'dt': self.dt,
            'T': self.T,
            'stride': self.stride,
            'imex_a': self.imex_a,
            'phase': self.phase.model_dump(),
            'forcing': self.has_forcing,
        }


class SolverConfig(StepperConfig):
    """Stepper configuration of the stochastic equation"""

    def __init__(self, grid: TorusGrid, dt: float, T: float,
                 noise: Optional[NoiseSpec] = None,
                 scheme: str = 'ito_imex', substeps: int = 1, **kwargs):
        super().__init__(grid, dt, T, **kwargs)

        if substeps < 1:
            raise SolverConfigException(f"substeps must be at least 1, got {substeps}")

        if scheme not in SCHEMES:
            raise SolverConfigException(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        if noise is not None and noise.grid != grid:
            raise SolverConfigException("noise lives on a different grid")

        self.noise: Optional[NoiseSpec] = noise
        self.scheme: str = scheme
        self.substeps: int = substeps

        bound = self.noise_stiffness()
        if bound > 1.0:
            raise SolverConfigException(f"transport noise bound {bound:.4g} exceeds 1")

    @property
    def is_noisy(self) -> bool:
        return self.noise is not None and not self.noise.is_silent

    def noise_stiffness(self) -> float:
        """dt * sum alpha_k^2/|k|^2 * Lip(Gamma)^2 * 4 pi^2 (n/3)^2

        sum alpha_k^2/|k|^2 is the one-point variance of the velocity per unit
        time and (n/3) the largest wavenumber surviving the dealiasing.
        """
        if not self.is_noisy:
            return 0.0
        variance = self.noise.family.normalization()
        return (self.dt * variance * self.phase.gamma_lip ** 2 *
                4 * np.pi ** 2 * (self.grid.n / 3) ** 2)

    def deterministic(self, with_corrector: bool = True):
        from .limit import LimitConfig
        return LimitConfig(self.grid, self.dt, self.T, phase=self.phase, forcing=self.forcing,
                           imex_a=self.imex_a, stride=self.stride, with_corrector=with_corrector)

    def with_scheme(self, scheme: str) -> 'SolverConfig':
        return SolverConfig(self.grid, self.dt, self.T, noise=self.noise, scheme=scheme,
                            substeps=self.substeps,
                            phase=self.phase, forcing=self.forcing, imex_a=self.imex_a,
                            stride=self.stride)

    def manifest(self) -> dict:
        out = super().manifest()
        out['scheme'] = self.scheme
        out['substeps'] = self.substeps
        out['noise'] = self.noise.manifest() if self.noise is not None else None
        return out


def _imex_update(X: ScalarField, cfg: StepperConfig, include_g: bool,
                 transport_hat: Optional[np.ndarray] = None) -> ScalarField:
    """(1 + dt a lam) X+ = X + dt (-lam FFT(Psi + g) + a lam X + F) - T"""
    grid = X.grid
    lam = -grid.laplacian_symbol
    x = X.values

    nonlinear = cfg.phase.Psi(x)
    if include_g:
        nonlinear = nonlinear + cfg.phase.g_of(x)

    rhs = X.spectral + cfg.dt * (cfg.imex_a * lam * X.spectral - lam * forward(nonlinear, grid))
    if cfg.forcing is not None:
        rhs = rhs + cfg.dt * cfg.forcing_hat
    if transport_hat is not None:
        rhs = rhs - transport_hat

    coeffs = rhs / (1.0 + cfg.dt * cfg.imex_a * lam)
    return ScalarField(grid, backward(coeffs, grid))


def transport_increment(X: ScalarField, noise: NoiseSpec, increments: np.ndarray,
                        phase: PhaseFunctions) -> np.ndarray:
    """Spectrum of dealias(u . grad Gamma(X)) with u = sum_k alpha_k dbeta_k sigma_k

    The mean is dropped: u . grad Gamma(X) = div(u Gamma(X)) integrates to zero.
    """
    grid = X.grid
    d1, d2 = grid.ddx
    gamma_hat = forward(phase.Gamma(X.values), grid)
    u = velocity_field(noise, increments)

    product = (u.u1.values * backward(gamma_hat * d1, grid) +
               u.u2.values * backward(gamma_hat * d2, grid))

    out = forward(product, grid) * grid.dealias_mask
    out[0, 0] = 0.0
    return out


def _advance(X: ScalarField, increments: Optional[np.ndarray], cfg: SolverConfig) -> ScalarField:
    if increments is None or not cfg.is_noisy:
        return _imex_update(X, cfg, include_g=(cfg.scheme == 'ito_imex'))

    if cfg.scheme == 'ito_imex':
        t_hat = transport_increment(X, cfg.noise, increments, cfg.phase)
        return _imex_update(X, cfg, include_g=True, transport_hat=t_hat)

    # one fixed-point pass towards the midpoint state
    half = transport_increment(X, cfg.noise, increments, cfg.phase)
    mid = ScalarField(X.grid, backward(X.spectral - 0.5 * half, X.grid))
    t_hat = transport_increment(mid, cfg.noise, increments, cfg.phase)
    return _imex_update(X, cfg, include_g=False, transport_hat=t_hat)


def _increments_for(cfg: SolverConfig, step_index: int, replica: int) -> Optional[np.ndarray]:
    """Increments of step step_index; with substeps m they are sums of m draws of the
    stream refined by m, so ladders dt, dt/2, dt/4 share one Brownian path"""
    if not cfg.is_noisy:
        return None
    if cfg.substeps == 1:
        return sample_increments(cfg.noise, step_index, cfg.dt, replica)
    fine = cfg.dt / cfg.substeps
    first = step_index * cfg.substeps
    return sum(sample_increments(cfg.noise, first + s, fine, replica)
               for s in range(cfg.substeps))


def _check_finite(X: ScalarField, step_index: int, cfg: StepperConfig,
                  replica: Optional[int] = None):
    if not X.is_finite():
        raise NumericalBlowUpException(step_index + 1, (step_index + 1) * cfg.dt, replica)


def step_ito(X: ScalarField, step_index: int, replica: int, cfg: SolverConfig) -> ScalarField:
    """One IMEX Euler-Maruyama step of the Ito equation with the Lap g corrector"""
    if cfg.scheme != 'ito_imex':
        cfg = cfg.with_scheme('ito_imex')
    X_next = _advance(X, _increments_for(cfg, step_index, replica), cfg)
    _check_finite(X_next, step_index, cfg, replica)
    return X_next


def step_stratonovich(X: ScalarField, step_index: int, replica: int,
                      cfg: SolverConfig) -> ScalarField:
    """One midpoint step of the transport form, without the corrector"""
    if cfg.scheme != 'stratonovich_midpoint':
        cfg = cfg.with_scheme('stratonovich_midpoint')
    X_next = _advance(X, _increments_for(cfg, step_index, replica), cfg)
    _check_finite(X_next, step_index, cfg, replica)
    return X_next


class Trajectory:
    """States sampled every `stride` steps, with the realized increments if recorded"""

    def __init__(self, times: np.ndarray, states: List[ScalarField], dt: float, stride: int,
                 increments: Optional[np.ndarray] = None, replica: Optional[int] = None):
        if len(times) != len(states):
            raise ValueError(f"{len(times)} sample times for {len(states)} states")
        self.times: np.ndarray = np.asarray(times, dtype=float)
        self.states: List[ScalarField] = states
        self.dt: float = dt
        self.stride: int = stride
        self.increments: Optional[np.ndarray] = increments
        self.replica: Optional[int] = replica

    @property
    def grid(self) -> TorusGrid:
        return self.states[0].grid

    @property
    def initial(self) -> ScalarField:
        return self.states[0]

    @property
    def final(self) -> ScalarField:
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i) -> ScalarField:
        return self.states[i]

    def write(self, directory: Union[str, Path], prefix: str = 'state') -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, state in enumerate(self.states):
            path = directory / f"{prefix}_{i:05d}.stfn"
            write_snapshot(path, state)
            paths.append(path)
        return paths


class PathDiagnostics:
    """Per-path series sampled at the trajectory instants

    h1_dissipation is the running trapezoid integral of ||grad X||^2 over every
    step, balance the Ito energy balance and martingale the realized stochastic
    sum against a probe test mode.
    """

    def __init__(self, times: np.ndarray, l2_energy: np.ndarray, h1_dissipation: np.ndarray,
                 mean_series: np.ndarray, balance: np.ndarray, psi0: float,
                 martingale: Optional[np.ndarray] = None):
        lengths = {len(times), len(l2_energy), len(h1_dissipation), len(mean_series), len(balance)}
        if martingale is not None:
            lengths.add(len(martingale))
        if len(lengths) != 1:
            raise ValueError("diagnostic series lengths differ from the sample times")

        self.times = times
        self.l2_energy = l2_energy
        self.h1_dissipation = h1_dissipation
        self.mean_series = mean_series
        self.balance = balance
        self.psi0 = psi0
        self.martingale = martingale

    @property
    def margin(self) -> np.ndarray:
        """||X(t)||^2 + 2 psi0 int ||grad X||^2 - ||x0||^2"""
        return self.l2_energy + 2 * self.psi0 * self.h1_dissipation - self.l2_energy[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't': self.times,
            'l2_energy': self.l2_energy,
            'h1_dissipation_integral': self.h1_dissipation,
            'mean': self.mean_series,
            'margin': self.margin,
        })

    def balance_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t': self.times, 'energy_balance': self.balance})

    def write(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / 'diagnostics.csv', directory / 'energy_balance.csv']
        self.to_frame().to_csv(paths[0], index=False, float_format='%.17g')
        self.balance_frame().to_csv(paths[1], index=False, float_format='%.17g')
        return paths


def _energy_rate(X: ScalarField, phase: PhaseFunctions) -> Tuple[float, float]:
    """(||grad X||^2, 2(grad Psi, grad X) + 2(grad g, grad X) - 1/2 ||grad Gamma||^2)"""
    grid = X.grid
    lam = -grid.laplacian_symbol
    x_hat = X.spectral
    x = X.values

    def h1_pairing(f_hat):
        return float(np.sum(lam * (f_hat * np.conj(x_hat)).real))

    dissipation = float(np.sum(lam * np.abs(x_hat) ** 2))
    psi_term = h1_pairing(forward(phase.Psi(x), grid))
    g_term = h1_pairing(forward(phase.g_of(x), grid))
    gamma_hat = forward(phase.Gamma(x), grid)
    transport_term = float(np.sum(lam * np.abs(gamma_hat) ** 2))
    return dissipation, 2 * psi_term + 2 * g_term - 0.5 * transport_term


def simulate_path(x0: ScalarField, cfg: SolverConfig, replica: int = 0,
                  record_increments: bool = False,
                  probe: Optional[ModeIndex] = None) -> Tuple[Trajectory, PathDiagnostics]:
    """Step x0 to the horizon, sampling states and diagnostics every cfg.stride steps

    With a probe mode j the realized stochastic sum
    S(t) = sum_k int alpha_k (sigma_k Gamma(X), grad e_j) dbeta_k is accumulated
    alongside, evaluated at the left point of each step.
    """
    if x0.grid != cfg.grid:
        raise SolverConfigException("initial condition lives on a different grid")

    coupling = ModeCoupling(cfg.noise, probe) if (probe is not None and cfg.is_noisy) else None
    increments = np.zeros((cfg.steps, len(cfg.noise))) if (record_increments and cfg.is_noisy) else None

    X = x0
    states = [X]
    e0 = inner_product(X, X)
    dissipation, rate = _energy_rate(X, cfg.phase)
    h1_integral = 0.0
    rate_integral = 0.0
    martingale = 0.0

    l2 = [e0]
    h1 = [0.0]
    means = [X.mean]
    balance = [0.0]
    probe_series = [0.0]

    for n in range(cfg.steps):
        dbeta = _increments_for(cfg, n, replica)
        if increments is not None:
            increments[n] = dbeta
        if coupling is not None:
            pairs = coupling.pair(forward(cfg.phase.Gamma(X.values), cfg.grid))
            martingale += float(np.sum(cfg.noise.alpha * pairs * dbeta))

        try:
            X_next = _advance(X, dbeta, cfg)
            _check_finite(X_next, n, cfg, replica)
        except NumericalBlowUpException:
            log.warning("replica %s blew up at step %d (t=%.6g)", replica, n + 1, (n + 1) * cfg.dt)
            raise

        next_dissipation, next_rate = _energy_rate(X_next, cfg.phase)
        h1_integral += 0.5 * cfg.dt * (dissipation + next_dissipation)
        rate_integral += 0.5 * cfg.dt * (rate + next_rate)
        X, dissipation, rate = X_next, next_dissipation, next_rate

        if (n + 1) % cfg.stride == 0:
            energy = inner_product(X, X)
            states.append(X)
            l2.append(energy)
            h1.append(h1_integral)
            means.append(X.mean)
            balance.append(energy + rate_integral - e0)
            probe_series.append(martingale)
            log.debug("replica %s: t=%.6g energy=%.6g", replica, (n + 1) * cfg.dt, energy)

    times = cfg.sample_times()
    trajectory = Trajectory(times, states, cfg.dt, cfg.stride, increments, replica)
    diagnostics = PathDiagnostics(times, np.array(l2), np.array(h1), np.array(means),
                                  np.array(balance), cfg.phase.psi0,
                                  np.array(probe_series) if probe is not None else None)
    return trajectory, diagnostics


def weak_residual(trajectory: Trajectory, test_mode: ModeIndex, cfg: SolverConfig) -> np.ndarray:
    """Difference of both sides of the weak formulation against e_j along a trajectory

    R(t) = (X(t), e_j) - (x0, e_j) - int (F, e_j) - int (Psi(X) + g(X), Lap e_j)
           - sum_k int alpha_k (sigma_k Gamma(X), grad e_j) dbeta_k

    Time integrals use the trapezoid rule, the stochastic sum the left point.
    """
    if trajectory.stride != 1:
        raise StrideException(f"weak residual needs every step, trajectory has stride {trajectory.stride}")
    if cfg.is_noisy and trajectory.increments is None:
        raise StrideException("weak residual needs the realized increments")

    grid = trajectory.grid
    x1, x2 = grid.nodes
    e_j = np.sqrt(2.0) * (np.cos if test_mode.parity == 'plus' else np.sin)(
        2 * np.pi * (test_mode.k1 * x1 + test_mode.k2 * x2))
    lap_factor = -4 * np.pi ** 2 * test_mode.norm2
    dt = trajectory.dt

    def pairing(values):
        return float(np.mean(values * e_j))

    forcing_term = pairing(cfg.forcing.values) if cfg.forcing is not None else 0.0
    drift = np.array([lap_factor * pairing(cfg.phase.Psi(X.values) + cfg.phase.g_of(X.values))
                      for X in trajectory.states])
    observed = np.array([pairing(X.values) for X in trajectory.states])

    drift_integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (drift[1:] + drift[:-1]))])

    stochastic = np.zeros(len(trajectory))
    if cfg.is_noisy:
        coupling = ModeCoupling(cfg.noise, test_mode)
        terms = np.array([
            float(np.sum(cfg.noise.alpha * coupling.pair(forward(cfg.phase.Gamma(X.values), grid)) *
                         trajectory.increments[n]))
            for n, X in enumerate(trajectory.states[:-1])])
        stochastic[1:] = np.cumsum(terms)

    return (observed - observed[0] - trajectory.times * forcing_term
            - drift_integral - stochastic)


def divergence_orthogonality_check(X: ScalarField, cfg: SolverConfig,
                                   fields: Optional[Sequence[VectorField]] = None) -> np.ndarray:
    """Grid quadrature of int v . grad Gamma_tilde(X) for each noise field v = sigma_k

    A custom list of vector fields can replace the noise basis.
    """
    from .noise import sigma_field

    primitive = ScalarField(X.grid, cfg.phase.Gamma_primitive(X.values))
    grad = gradient(primitive)

    if fields is None:
        if cfg.noise is None:
            return np.zeros(0)
        fields = [sigma_field(cfg.noise, i) for i in range(len(cfg.noise))]

    return np.array([inner_product(v.u1, grad.u1) + inner_product(v.u2, grad.u2)
                     for v in fields])


class EnergyMarginReport:
    def __init__(self, times: np.ndarray, margin: np.ndarray, tolerance: float):
        self.times = times
        self.margin = margin
        self.tolerance = tolerance

    @property
    def worst(self) -> float:
        return float(np.max(self.margin))

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def __repr__(self):
        return f"<EnergyMarginReport worst={self.worst:.3g} tol={self.tolerance:.3g} passed={self.passed}>"


def energy_inequality_check(diag: PathDiagnostics, cfg: StepperConfig) -> EnergyMarginReport:
    """max_t m(t) <= 10 dt ||x0||^2 for unforced runs"""
    if cfg.has_forcing:
        raise ForcingNotAllowedException("the energy inequality holds only for F = 0")
    tolerance = 10 * cfg.dt * float(diag.l2_energy[0])
    return EnergyMarginReport(diag.times, diag.margin, tolerance)


def weighted_spectra(trajectory: Trajectory, s: float) -> np.ndarray:
    """Rows of sqrt(H^s weight) * spectrum, one per sample; row distances are H^s distances"""
    root = np.sqrt(sobolev_weights(trajectory.grid, s)).reshape(-1)
    return np.stack([X.spectral.reshape(-1) * root for X in trajectory.states])


def lag_norms(weighted: np.ndarray, lag: int, starts: Optional[np.ndarray] = None) -> np.ndarray:
    """Distances between rows i + lag and i of weighted spectra (all i by default)"""
    if starts is None:
        starts = np.arange(weighted.shape[0] - lag)
    return np.linalg.norm(weighted[starts + lag] - weighted[starts], axis=1)


def dyadic_lags(count: int) -> List[int]:
    return [2 ** i for i in range(count.bit_length()) if 2 ** i < count]


def increment_samples(trajectory: Trajectory, beta: float,
                      lags: Optional[Sequence[int]] = None,
                      pairs: Optional[int] = None) -> np.ndarray:
    """Rows (|t - s|, ||X(t) - X(s)||_{H^-beta}) over dyadic sample lags

    pairs caps the number of evenly spread start instants per lag.
    """
    count = len(trajectory)
    if lags is None:
        lags = dyadic_lags(count)

    weighted = weighted_spectra(trajectory, -beta)
    blocks = []
    for lag in lags:
        starts = np.arange(count - lag)
        if pairs is not None and len(starts) > pairs:
            starts = np.unique(np.linspace(0, count - lag - 1, pairs).round().astype(int))
        norms = lag_norms(weighted, lag, starts)
        gaps = trajectory.times[starts + lag] - trajectory.times[starts]
        blocks.append(np.column_stack([gaps, norms]))

    if not blocks:
        return np.zeros((0, 2))
    return np.vstack(blocks)
