import numpy as np
import pytest

from stefanpy.noise import (CoefficientFamily, FamilyConstraintException, ModeCoupling, ModeIndex,
                            NoiseSpec, UnresolvedModeException, ZeroModeException, basis_e,
                            enumerate_modes, make_family, sample_increments, sigma, sigma_field,
                            structure_identity_check, velocity_field)
from stefanpy.spectral import ScalarField, TorusGrid, divergence


@pytest.fixture
def grid():
    return TorusGrid(n=32)


@pytest.fixture
def spec(grid):
    return NoiseSpec(make_family(4), grid, seed=11)


def stacked_nodes(grid):
    x1, x2 = grid.nodes
    return np.stack([x1, x2], axis=-1)


class TestModes(object):
    def test_zero_mode_rejected(self):
        with pytest.raises(ZeroModeException):
            ModeIndex(0, 0)

    def test_order_of_first_shell(self):
        assert [m.k for m in enumerate_modes(1)] == [(-1, 0), (0, -1), (0, 1), (1, 0)]

    @pytest.mark.parametrize('N,count', [(1, 4), (2, 12), (3, 28), (4, 48)])
    def test_counts(self, N, count):
        assert len(enumerate_modes(N)) == count

    def test_parity(self):
        assert ModeIndex(1, -3).parity == 'plus'
        assert ModeIndex(0, 2).parity == 'plus'
        assert ModeIndex(0, -2).parity == 'minus'
        assert ModeIndex(-1, 5).parity == 'minus'

    def test_basis_is_orthonormal(self, grid):
        x = stacked_nodes(grid)
        modes = enumerate_modes(2)
        gram = np.array([[np.mean(basis_e(a, x) * basis_e(b, x)) for b in modes] for a in modes])

        assert np.allclose(gram, np.eye(len(modes)), atol=1e-13)


class TestFamilies(object):
    def test_first_sup_norms(self):
        assert make_family(1).sup_norm == pytest.approx(0.5)
        assert make_family(2).sup_norm == pytest.approx(7 ** -0.5)

    @pytest.mark.parametrize('N', [1, 3, 8, 32, 64])
    def test_normalized(self, N):
        assert make_family(N).normalization() == pytest.approx(1.0, abs=1e-12)

    def test_sup_norm_decreases(self):
        c = [make_family(N).sup_norm for N in range(1, 21)]

        assert all(b < a for a, b in zip(c, c[1:]))

    def test_power_profile(self):
        family = make_family(6, 'power', p=1.5)

        assert family.normalization() == pytest.approx(1.0, abs=1e-12)
        assert family.violations() == []
        assert family.alpha[0] > family.alpha[-1]

    def test_broken_symmetry_rejected(self):
        modes = enumerate_modes(1)
        # normalized, but unequal on the unit shell
        alpha = np.array([0.7, 0.5, 0.5, 0.1])

        with pytest.raises(FamilyConstraintException):
            CoefficientFamily(1, modes, alpha)

        family = CoefficientFamily(1, modes, alpha, validate=False)
        assert any('shell' in p for p in family.violations())

    def test_unnormalized_rejected(self):
        with pytest.raises(FamilyConstraintException):
            CoefficientFamily(1, enumerate_modes(1), np.ones(4))

    @pytest.mark.parametrize('N', [1, 2, 3, 5])
    def test_structure_identity(self, N):
        family = make_family(N)
        for x in ([0.0, 0.0], [0.13, -0.41], [0.5, 0.25]):
            assert np.allclose(structure_identity_check(family, np.array(x)),
                               0.5 * np.eye(2), atol=1e-10)


class TestFields(object):
    def test_sigma_field_matches_formula(self, spec, grid):
        x = stacked_nodes(grid)
        for index in (0, 5, len(spec) - 1):
            v = sigma_field(spec, index)
            expected = sigma(spec.modes[index], x)

            assert np.allclose(v.u1.values, expected[..., 0], atol=1e-13)
            assert np.allclose(v.u2.values, expected[..., 1], atol=1e-13)

    def test_fields_are_divergence_free(self, spec):
        for index in range(len(spec)):
            assert np.max(np.abs(divergence(sigma_field(spec, index)).values)) < 1e-11

    def test_velocity_is_weighted_sum(self, spec):
        increments = np.linspace(-1.0, 1.0, len(spec))
        u = velocity_field(spec, increments)
        u1 = sum(spec.alpha[i] * increments[i] * sigma_field(spec, i).u1.values
                 for i in range(len(spec)))

        assert np.allclose(u.u1.values, u1, atol=1e-13)

    def test_modes_must_fit_grid(self):
        with pytest.raises(UnresolvedModeException):
            NoiseSpec(make_family(5), TorusGrid(n=8))


class TestModeCoupling(object):
    @pytest.mark.parametrize('test_mode', [ModeIndex(1, 0), ModeIndex(1, 2), ModeIndex(0, -1)])
    def test_matches_grid_quadrature(self, spec, grid, test_mode):
        f = ScalarField.from_function(
            grid, lambda x1, x2: np.exp(np.cos(2 * np.pi * x1)) * (1 + 0.5 * np.sin(2 * np.pi * x2)))
        x = stacked_nodes(grid)

        j1, j2 = test_mode.k
        arg = 2 * np.pi * (j1 * x[..., 0] + j2 * x[..., 1])
        d = -np.sin(arg) if test_mode.parity == 'plus' else np.cos(arg)
        grad_e = [np.sqrt(2.0) * 2 * np.pi * j1 * d, np.sqrt(2.0) * 2 * np.pi * j2 * d]

        expected = []
        for mode in spec.modes:
            s = sigma(mode, x)
            expected.append(np.mean(f.values * (s[..., 0] * grad_e[0] + s[..., 1] * grad_e[1])))

        coupling = ModeCoupling(spec, test_mode)
        assert np.allclose(coupling.pair(f.spectral), expected, atol=1e-12)


class TestIncrements(object):
    def test_reproducible(self, spec):
        a = sample_increments(spec, 7, 1e-3, replica=2)
        b = sample_increments(spec, 7, 1e-3, replica=2)

        assert a.shape == (len(spec),)
        assert np.array_equal(a, b)

    def test_streams_differ(self, spec):
        a = sample_increments(spec, 7, 1e-3, replica=2)

        assert not np.array_equal(a, sample_increments(spec, 8, 1e-3, replica=2))
        assert not np.array_equal(a, sample_increments(spec, 7, 1e-3, replica=3))

        other = NoiseSpec(spec.family, spec.grid, seed=12)
        assert not np.array_equal(a, sample_increments(other, 7, 1e-3, replica=2))

    def test_variance(self, spec):
        dt = 1e-3
        draws = np.stack([sample_increments(spec, step, dt, replica=0) for step in range(2000)])

        assert abs(np.mean(draws)) < 0.02 * np.sqrt(dt)
        assert np.var(draws) == pytest.approx(dt, rel=0.05)

    def test_modes_are_uncorrelated(self, spec):
        draws = np.stack([sample_increments(spec, step, 1.0, replica=1) for step in range(50000)])
        corr = np.corrcoef(draws, rowvar=False)
        off_diagonal = corr[~np.eye(len(spec), dtype=bool)]

        assert np.max(np.abs(off_diagonal)) < 0.025

    @pytest.mark.parametrize('dt', [0.0, -1e-3, float('nan')])
    def test_rejects_non_positive_dt(self, spec, dt):
        with pytest.raises(ValueError):
            sample_increments(spec, 0, dt, replica=0)
