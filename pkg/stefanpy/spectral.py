"""Pseudospectral toolkit on the unit torus [-1/2, 1/2]^2.

Fourier coefficients follow the physical convention: the coefficient of mode k
is (1/n^2) * sum(values * exp(-2*pi*i * k.x)) evaluated at the actual node
coordinates, so a field's coefficients do not depend on where the grid starts.
"""
import logging
import struct
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, field_validator

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b'STFN'
SNAPSHOT_VERSION = 1
# magic, version, n, reserved
_SNAPSHOT_HEADER = struct.Struct('<4sIII')


class GridMismatchException(Exception):
    """Fields or coefficient arrays live on different grids"""
    pass


class NonFiniteFieldException(Exception):
    """Field contains NaN or infinite samples"""
    pass


class SnapshotFormatException(Exception):
    """File is not a valid field snapshot"""
    pass


@lru_cache(maxsize=None)
def _wavenumbers(n: int):
    k = scipy.fft.fftfreq(n, d=1.0 / n).round().astype(np.int64)
    k1, k2 = np.meshgrid(k, k, indexing='ij')
    k1.setflags(write=False)
    k2.setflags(write=False)
    return k1, k2


@lru_cache(maxsize=None)
def _operators(n: int):
    k1, k2 = _wavenumbers(n)
    nyquist = -(n // 2)

    # (-1)^(k1+k2) moves the transform origin from the corner node to x=0
    phase = np.where((k1 + k2) % 2 == 0, 1.0, -1.0)

    d1 = 2j * np.pi * np.where(k1 == nyquist, 0, k1)
    d2 = 2j * np.pi * np.where(k2 == nyquist, 0, k2)
    lap = -4.0 * np.pi ** 2 * (k1 ** 2 + k2 ** 2).astype(float)
    keep = np.maximum(np.abs(k1), np.abs(k2)) <= n / 3.0

    for arr in (phase, d1, d2, lap, keep):
        arr.setflags(write=False)

    return phase, d1, d2, lap, keep


class TorusGrid(BaseModel):
    """Uniform n x n grid on the unit torus with nodes at (-1/2 + i/n, -1/2 + j/n)"""

    model_config = ConfigDict(frozen=True)

    n: int = Field(description="samples per dimension (even, at least 4)")

    @field_validator('n')
    @classmethod
    def _even_and_large_enough(cls, v: int) -> int:
        if v < 4:
            raise ValueError(f"grid size must be at least 4, got {v}")
        if v % 2 != 0:
            raise ValueError(f"grid size must be even, got {v}")
        return v

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def nodes(self):
        """Node coordinates as a pair of (n, n) arrays, first index = first coordinate"""
        x = -0.5 + np.arange(self.n) / self.n
        return tuple(np.meshgrid(x, x, indexing='ij'))

    @property
    def wavenumbers(self):
        return _wavenumbers(self.n)

    @property
    def phase(self) -> np.ndarray:
        return _operators(self.n)[0]

    @property
    def ddx(self):
        """Spectral multipliers of the two partial derivatives (Nyquist zeroed)"""
        ops = _operators(self.n)
        return ops[1], ops[2]

    @property
    def laplacian_symbol(self) -> np.ndarray:
        return _operators(self.n)[3]

    @property
    def dealias_mask(self) -> np.ndarray:
        return _operators(self.n)[4]

    def flat_index(self, k1, k2):
        """Position of wavevector (k1, k2) in a flattened coefficient array (aliased mod n)"""
        return (np.asarray(k1) % self.n) * self.n + (np.asarray(k2) % self.n)


def forward(values: np.ndarray, grid: TorusGrid, workers: int = 1) -> np.ndarray:
    """Physical-convention Fourier coefficients of grid samples"""
    return scipy.fft.fft2(values, norm='forward', workers=workers) * grid.phase


def backward(coeffs: np.ndarray, grid: TorusGrid, workers: int = 1) -> np.ndarray:
    """Real grid samples from physical-convention coefficients"""
    return scipy.fft.ifft2(coeffs * grid.phase, norm='forward', workers=workers).real


class ScalarField:
    """Real samples of a periodic function together with its lazily computed spectrum

    Instances are immutable: the sample array is flagged read-only.
    """

    def __init__(self, grid: TorusGrid, values: np.ndarray,
                 spectral: Optional[np.ndarray] = None):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise GridMismatchException(
                f"values of shape {values.shape} do not fit a grid of size {grid.n}")
        values.setflags(write=False)

        self.grid: TorusGrid = grid
        self._values: np.ndarray = values
        self._spectral: Optional[np.ndarray] = spectral
        if spectral is not None:
            spectral.setflags(write=False)

    @classmethod
    def zeros(cls, grid: TorusGrid) -> 'ScalarField':
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> 'ScalarField':
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: TorusGrid,
                      func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> 'ScalarField':
        x1, x2 = grid.nodes
        return cls(grid, np.broadcast_to(func(x1, x2), grid.shape))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            spectral = forward(self._values, self.grid)
            spectral.setflags(write=False)
            self._spectral = spectral
        return self._spectral

    @property
    def mean(self) -> float:
        return float(self.spectral[0, 0].real)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._values).all())

    def __add__(self, other: 'ScalarField') -> 'ScalarField':
        _check_same_grid(self, other)
        return ScalarField(self.grid, self._values + other.values)

    def __sub__(self, other: 'ScalarField') -> 'ScalarField':
        _check_same_grid(self, other)
        return ScalarField(self.grid, self._values - other.values)

    def __mul__(self, c: float) -> 'ScalarField':
        return ScalarField(self.grid, self._values * c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"<ScalarField n={self.grid.n} mean={self.mean:.6g}>"


class VectorField:
    """Pair of scalar components on a common grid"""

    def __init__(self, u1: ScalarField, u2: ScalarField):
        _check_same_grid(u1, u2)
        self.u1: ScalarField = u1
        self.u2: ScalarField = u2

    @property
    def grid(self) -> TorusGrid:
        return self.u1.grid

    def dot(self, other: 'VectorField') -> ScalarField:
        """Pointwise inner product of two vector fields"""
        _check_same_grid(self.u1, other.u1)
        return ScalarField(self.grid, self.u1.values * other.u1.values +
                           self.u2.values * other.u2.values)


def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise GridMismatchException(
            f"grid of size {a.grid.n} does not match grid of size {b.grid.n}")


def transform(field: ScalarField) -> np.ndarray:
    return field.spectral


def inverse_transform(coeffs: np.ndarray, grid: TorusGrid) -> ScalarField:
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.shape != grid.shape:
        raise GridMismatchException(
            f"coefficients of shape {coeffs.shape} do not fit a grid of size {grid.n}")
    return ScalarField(grid, backward(coeffs, grid))


def sobolev_weights(grid: TorusGrid, s: float) -> np.ndarray:
    """(2*pi*|k|)^(2s) on nonzero modes, 0 on the mean"""
    lap = -grid.laplacian_symbol
    nonzero = lap > 0
    weights = np.zeros_like(lap)
    weights[nonzero] = lap[nonzero] ** s
    return weights


def h_norm(field: ScalarField, s: float) -> float:
    """Zero-mean H^s norm with multiplier (2*pi*|k|)^(2s); mode 0 is excluded"""
    if not field.is_finite():
        raise NonFiniteFieldException("cannot take the norm of a non-finite field")

    power = np.abs(field.spectral) ** 2
    return float(np.sqrt(np.sum(sobolev_weights(field.grid, s) * power)))


def inner_product(f: ScalarField, g: ScalarField) -> float:
    """L2 pairing on the unit torus, computed as the grid average"""
    _check_same_grid(f, g)
    return float(np.mean(f.values * g.values))


def zero_mean(field: ScalarField) -> ScalarField:
    return ScalarField(field.grid, field.values - field.mean)


def laplacian(field: ScalarField) -> ScalarField:
    grid = field.grid
    return inverse_transform(field.spectral * grid.laplacian_symbol, grid)


def gradient(field: ScalarField) -> VectorField:
    grid = field.grid
    d1, d2 = grid.ddx
    return VectorField(inverse_transform(field.spectral * d1, grid),
                       inverse_transform(field.spectral * d2, grid))


def divergence(v: VectorField) -> ScalarField:
    grid = v.grid
    d1, d2 = grid.ddx
    return inverse_transform(v.u1.spectral * d1 + v.u2.spectral * d2, grid)


def dealias(field: ScalarField) -> ScalarField:
    """Two-thirds rule: drop modes with max(|k1|, |k2|) > n/3"""
    grid = field.grid
    return inverse_transform(field.spectral * grid.dealias_mask, grid)


def write_snapshot(path: Union[str, Path], field: ScalarField):
    """Write the 16-byte STFN header followed by n*n little-endian doubles, row-major"""
    path = Path(path)
    with path.open('wb') as f:
        f.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, field.grid.n, 0))
        f.write(np.ascontiguousarray(field.values, dtype='<f8').tobytes())


def read_snapshot(path: Union[str, Path]) -> ScalarField:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _SNAPSHOT_HEADER.size:
        raise SnapshotFormatException(f"{path} is too short to be a snapshot")

    magic, version, n, _ = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatException(f"{path} has bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatException(f"{path} has unsupported version {version}")

    expected = _SNAPSHOT_HEADER.size + 8 * n * n
    if len(data) != expected:
        raise SnapshotFormatException(
            f"{path} holds {len(data)} bytes, expected {expected} for n={n}")

    values = np.frombuffer(data, dtype='<f8', offset=_SNAPSHOT_HEADER.size).reshape(n, n)
    return ScalarField(TorusGrid(n=n), values.astype(float))
