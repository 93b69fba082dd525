"""Divergence-free transport noise on the torus.

The velocity u = sum_k alpha_k sigma_k dbeta_k is built from the trigonometric
basis e_k (cosine on the upper half lattice, sine on the lower one) and the
fields sigma_k = k_perp / |k|^2 e_k with k_perp = (k2, -k1). Each sigma_k is
stored through its two nonzero Fourier coefficients, which is enough to
assemble the velocity with one inverse transform per step.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from hashlib import blake2b
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from .spectral import ScalarField, TorusGrid, VectorField, backward, inverse_transform

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


class ZeroModeException(Exception):
    """The zero wavevector has no basis function"""
    pass


class FamilyConstraintException(Exception):
    """Coefficient family breaks the normalization or the radial symmetry"""
    pass


class UnresolvedModeException(Exception):
    """Noise modes do not fit on the grid"""
    pass


@dataclass(frozen=True, order=True)
class ModeIndex:
    k1: int
    k2: int

    def __post_init__(self):
        if self.k1 == 0 and self.k2 == 0:
            raise ZeroModeException("mode (0, 0) is excluded from the noise lattice")

    @property
    def k(self) -> Tuple[int, int]:
        return (self.k1, self.k2)

    @property
    def parity(self) -> str:
        return 'plus' if self.k1 > 0 or (self.k1 == 0 and self.k2 > 0) else 'minus'

    @property
    def norm2(self) -> int:
        return self.k1 ** 2 + self.k2 ** 2

    @property
    def perp(self) -> Tuple[int, int]:
        return (self.k2, -self.k1)

    @property
    def coefficient(self) -> complex:
        """Fourier coefficient of e_k at +k; the coefficient at -k is its conjugate"""
        return SQRT2 / 2 if self.parity == 'plus' else -0.5j * SQRT2

    def __str__(self):
        return f"({self.k1},{self.k2})"


def enumerate_modes(N: int) -> List[ModeIndex]:
    """Nonzero lattice points with |k| <= N ordered by (|k|^2, k1, k2)"""
    r = range(-N, N + 1)
    modes = [ModeIndex(a, b) for a in r for b in r
             if (a, b) != (0, 0) and a * a + b * b <= N * N]
    return sorted(modes, key=lambda m: (m.norm2, m.k1, m.k2))


def basis_e(k: ModeIndex, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    arg = 2 * np.pi * (k.k1 * x[..., 0] + k.k2 * x[..., 1])
    if k.parity == 'plus':
        return SQRT2 * np.cos(arg)
    return SQRT2 * np.sin(arg)


def sigma(k: ModeIndex, x) -> np.ndarray:
    e = basis_e(k, x)
    p1, p2 = k.perp
    return np.stack([p1 * e, p2 * e], axis=-1) / k.norm2


class CoefficientFamily:
    """Radial coefficient sequence alpha_k supported on 0 < |k| <= N"""

    def __init__(self, N: int, modes: Sequence[ModeIndex], alpha: np.ndarray,
                 validate: bool = True):
        alpha = np.array(alpha, dtype=float)
        if len(modes) != alpha.shape[0]:
            raise FamilyConstraintException(
                f"{len(modes)} modes but {alpha.shape[0]} coefficients")
        if np.any(alpha < 0):
            raise FamilyConstraintException("coefficients must be nonnegative")
        alpha.setflags(write=False)

        self.N: int = N
        self.modes: Tuple[ModeIndex, ...] = tuple(modes)
        self.alpha: np.ndarray = alpha
        self.sup_norm: float = float(alpha.max(initial=0.0))

        if validate:
            problems = self.violations()
            if problems:
                raise FamilyConstraintException("; ".join(problems))

    @property
    def norms2(self) -> np.ndarray:
        return np.array([m.norm2 for m in self.modes], dtype=float)

    def normalization(self) -> float:
        """sum alpha_k^2 / |k|^2"""
        return float(np.sum(self.alpha ** 2 / self.norms2))

    def violations(self, tol: float = 1e-12) -> List[str]:
        problems = []
        total = self.normalization()
        if abs(total - 1.0) > tol:
            problems.append(f"sum alpha_k^2/|k|^2 = {total!r}, expected 1")

        shells: Dict[int, List[float]] = {}
        for mode, a in zip(self.modes, self.alpha):
            shells.setdefault(mode.norm2, []).append(a)
        for norm2, values in sorted(shells.items()):
            if max(values) - min(values) > tol:
                problems.append(f"coefficients differ on the shell |k|^2 = {norm2}")
        return problems

    def as_mapping(self) -> Dict[ModeIndex, float]:
        return {m: float(a) for m, a in zip(self.modes, self.alpha)}

    def __repr__(self):
        return f"<CoefficientFamily N={self.N} modes={len(self.modes)} sup={self.sup_norm:.6g}>"


RadialProfile = Callable[[np.ndarray], np.ndarray]

PROFILES: Dict[str, Callable[..., RadialProfile]] = {
    'flat': lambda: (lambda r: np.ones_like(r)),
    'power': lambda p=1.0: (lambda r: r ** (-p)),
}


def make_family(N: int, profile: Union[str, RadialProfile] = 'flat', **profile_args) -> CoefficientFamily:
    """Radial family normalized so that sum alpha_k^2 / |k|^2 = 1

    The default flat profile is constant on 0 < |k| <= N; its sup norm
    (sum |k|^-2)^(-1/2) decays to zero as N grows.
    """
    if N < 1:
        raise FamilyConstraintException(f"truncation radius must be at least 1, got {N}")

    if isinstance(profile, str):
        profile = PROFILES[profile](**profile_args)

    modes = enumerate_modes(N)
    norms2 = np.array([m.norm2 for m in modes], dtype=float)
    weights = np.asarray(profile(np.sqrt(norms2)), dtype=float)

    scale = 1.0 / np.sqrt(np.sum(weights ** 2 / norms2))
    return CoefficientFamily(N, modes, scale * weights)


def structure_identity_check(family: CoefficientFamily, x) -> np.ndarray:
    """sum_k alpha_k^2 sigma_k(x) (x) sigma_k(x), which equals I/2 for admissible families"""
    out = np.zeros((2, 2))
    for mode, a in zip(family.modes, family.alpha):
        s = sigma(mode, x)
        out += a ** 2 * np.outer(s, s)
    return out


class NoiseSpec:
    """Coefficient family placed on a grid, with the seed of its random streams

    Increments are drawn from counter-based Philox streams keyed by
    (seed, replica) with the step as counter, so a path never depends on which
    thread computes it or in which order.
    """

    def __init__(self, family: CoefficientFamily, grid: TorusGrid, seed: int = 0):
        if family.N > grid.n // 2:
            raise UnresolvedModeException(
                f"modes up to |k| = {family.N} need a grid of at least {2 * family.N}")

        self.family: CoefficientFamily = family
        self.grid: TorusGrid = grid
        self.seed: int = int(seed) & 0xFFFFFFFFFFFFFFFF

        modes = family.modes
        k1 = np.array([m.k1 for m in modes], dtype=np.int64)
        k2 = np.array([m.k2 for m in modes], dtype=np.int64)
        norm2 = (k1 ** 2 + k2 ** 2).astype(float)

        self.k1: np.ndarray = k1
        self.k2: np.ndarray = k2
        # sigma_k = perp * e_k with perp = k_perp / |k|^2
        self.perp: np.ndarray = np.stack([k2 / norm2, -k1 / norm2], axis=1)
        self.coef: np.ndarray = np.array([m.coefficient for m in modes], dtype=complex)
        self.plus_index: np.ndarray = grid.flat_index(k1, k2)
        self.minus_index: np.ndarray = grid.flat_index(-k1, -k2)

        for arr in (self.k1, self.k2, self.perp, self.coef, self.plus_index, self.minus_index):
            arr.setflags(write=False)

    @property
    def modes(self) -> Tuple[ModeIndex, ...]:
        return self.family.modes

    @property
    def alpha(self) -> np.ndarray:
        return self.family.alpha

    def __len__(self):
        return len(self.family.modes)

    @property
    def is_silent(self) -> bool:
        return not np.any(self.family.alpha)

    def manifest(self) -> dict:
        return {
            'N': self.family.N,
            'c_N': self.family.sup_norm,
            'seed': self.seed,
            'mode_count': len(self),
        }

    def __repr__(self):
        return f"<NoiseSpec N={self.family.N} n={self.grid.n} seed={self.seed}>"


def _scatter(spec: NoiseSpec, weights: np.ndarray) -> np.ndarray:
    """Coefficient array of sum_k weights_k e_k"""
    n = spec.grid.n
    out = np.zeros(n * n, dtype=complex)
    np.add.at(out, spec.plus_index, weights * spec.coef)
    np.add.at(out, spec.minus_index, weights * np.conj(spec.coef))
    return out.reshape(n, n)


def velocity_spectrum(spec: NoiseSpec, increments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral components of u = sum_k alpha_k increments_k sigma_k"""
    w = spec.alpha * increments
    return (_scatter(spec, w * spec.perp[:, 0]),
            _scatter(spec, w * spec.perp[:, 1]))


def velocity_field(spec: NoiseSpec, increments: np.ndarray) -> VectorField:
    u1_hat, u2_hat = velocity_spectrum(spec, increments)
    return VectorField(inverse_transform(u1_hat, spec.grid),
                       inverse_transform(u2_hat, spec.grid))


def sigma_field(spec: NoiseSpec, index: int) -> VectorField:
    """Grid samples of sigma_k for the mode at position index"""
    unit = np.zeros(len(spec))
    unit[index] = 1.0
    n = spec.grid.n
    out = []
    for c in range(2):
        coeffs = np.zeros(n * n, dtype=complex)
        np.add.at(coeffs, spec.plus_index[index:index + 1],
                  spec.perp[index, c] * spec.coef[index:index + 1])
        np.add.at(coeffs, spec.minus_index[index:index + 1],
                  spec.perp[index, c] * np.conj(spec.coef[index:index + 1]))
        out.append(ScalarField(spec.grid, backward(coeffs.reshape(n, n), spec.grid)))
    return VectorField(*out)


class ModeCoupling:
    """Evaluates (sigma_k f, grad e_j)_2 for every noise mode k at once

    sigma_k . grad e_j is a product of two trigonometric functions, so its
    spectrum has at most four entries at +-k +- j. The pairing with f reduces
    to four lookups in the spectrum of f per mode.
    """

    def __init__(self, spec: NoiseSpec, test_mode: ModeIndex):
        grid = spec.grid
        j = np.array(test_mode.k, dtype=np.int64)
        b = test_mode.coefficient

        p_sign = np.array([1, 1, -1, -1])
        q_sign = np.array([1, -1, 1, -1])

        a = np.where(p_sign[None, :] > 0, spec.coef[:, None], np.conj(spec.coef)[:, None])
        bq = np.where(q_sign > 0, b, np.conj(b))

        # sigma_k . (2 pi i q) for q = +-j
        q1 = q_sign * j[0]
        q2 = q_sign * j[1]
        dot = 2j * np.pi * (spec.perp[:, 0:1] * q1[None, :] + spec.perp[:, 1:2] * q2[None, :])

        m1 = p_sign[None, :] * spec.k1[:, None] + q1[None, :]
        m2 = p_sign[None, :] * spec.k2[:, None] + q2[None, :]

        # (f, phi)_2 = sum_m f_hat(m) phi_hat(-m) = sum_terms f_hat(-(p+q)) * coefficient
        self.index: np.ndarray = grid.flat_index(-m1, -m2)
        self.weight: np.ndarray = dot * a * bq[None, :]
        self.test_mode: ModeIndex = test_mode

    def pair(self, f_hat: np.ndarray) -> np.ndarray:
        """Per-mode values of (sigma_k f, grad e_j)_2 given the spectrum of f"""
        flat = f_hat.reshape(-1)
        return np.sum(flat[self.index] * self.weight, axis=1).real


@lru_cache(maxsize=4096)
def _stream_key(seed: int, replica: int) -> int:
    h = blake2b(digest_size=16, key=b'stefanpy-noise')
    h.update(f"{seed}:{replica}".encode('utf-8'))
    return int.from_bytes(h.digest(), 'little')


def sample_increments(spec: NoiseSpec, step: int, dt: float, replica: int) -> np.ndarray:
    """Brownian increments over one step, aligned with spec.modes

    A pure function of (seed, replica, mode position, step): the Philox counter
    is positioned at the step, and modes draw consecutive normals from it.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    bitgen = np.random.Philox(key=_stream_key(spec.seed, replica),
                              counter=[0, int(step), 0, 0])
    return np.random.Generator(bitgen).standard_normal(len(spec)) * np.sqrt(dt)
