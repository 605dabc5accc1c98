import numpy as np
import pytest

from construction import spectral_grid as sg
from construction.brownian import StoppingData, sample_path
from construction.errors import GridMismatchError, ResolutionError, UnsupportedExponentError
from construction.iteration_stage import StageConfig, initial_stage, run_iteration
from construction.residual_verify import (TestFunctionBank, continuity_defect_residual, interpolation_check,
                                          interpolation_ratio, ito_refinement, momentum_distance,
                                          nonuniqueness_exhibit, shifted_profile, ste_residual_series,
                                          ste_weak_residual, triple_residuals, weak_residual_series)


class TestBank:

    def test_members(self, grid):
        bank = TestFunctionBank(grid)
        assert len(bank) == 1 + 2 * 12 + 1
        assert bank.names[0] == 'const' and bank.names[-1] == 'bump'
        assert len(TestFunctionBank(grid, bump=False)) == 25
        assert bank.stacked('grad').shape == (26, 2, 32, 32)

    def test_unresolved_modes(self):
        with pytest.raises(ResolutionError):
            TestFunctionBank(sg.GridSpec(2, 8, 8), max_mode=4)


class TestContinuityResidual:

    def test_series_starts_at_zero(self, grid):
        triple = initial_stage(2., grid)
        sample = triple.samples[0]
        bank = TestFunctionBank(grid)
        series = weak_residual_series(sample.rho, sg.TimeField.zeros(grid, rank=1), sample.R, bank)
        assert series.shape == (grid.n_t, len(bank))
        assert np.all(series[0] == 0.)

    @pytest.mark.parametrize('diffusion', [False, True])
    def test_initial_triple_is_consistent(self, diffusion):
        grid = sg.GridSpec(2, 16, 129)
        triple = initial_stage(2., grid, diffusion=diffusion)
        assert max(triple_residuals(triple, TestFunctionBank(grid))) <= 1e-8

    def test_single_test_function(self, grid, make_ensemble):
        path, _ = make_ensemble(grid)[0]
        triple = initial_stage(2., grid, [(path, StoppingData(0.1, 1., 0.5, 8))])
        phi = np.cos(2. * np.pi * grid.coords[0])
        assert continuity_defect_residual(triple, 0, phi, 0.25) <= 1e-8
        assert continuity_defect_residual(triple, 0, sg.ScalarField(grid, phi), 0.25) <= 1e-8
        with pytest.raises(ValueError):
            continuity_defect_residual(triple, 0, phi, 0.75)

    def test_bank_on_other_grid(self, grid, fine_grid):
        sample = initial_stage(2., grid).samples[0]
        with pytest.raises(GridMismatchError):
            weak_residual_series(sample.rho, sg.TimeField.zeros(grid, rank=1), sample.R,
                                 TestFunctionBank(fine_grid))


class TestSteResidual:

    def test_zero_density(self, grid):
        path = sample_path(5, grid.n_t, grid.d)
        series = ste_residual_series(sg.TimeField.zeros(grid), sg.TimeField.zeros(grid, rank=1), path,
                                     TestFunctionBank(grid))
        assert np.all(series == 0.)

    def test_mass_is_conserved(self, grid, rng):
        path = sample_path(5, grid.n_t, grid.d)
        rho = shifted_profile(sg.random_field(grid, 2, rng, mean_zero=False), path, grid)
        series = ste_residual_series(rho, sg.TimeField.zeros(grid, rank=1), path, TestFunctionBank(grid))
        assert np.abs(series[:, 0]).max() <= 1e-12

    def test_path_length_mismatch(self, grid):
        with pytest.raises(GridMismatchError):
            ste_residual_series(sg.TimeField.zeros(grid), sg.TimeField.zeros(grid, rank=1),
                                sample_path(5, 9, 2), TestFunctionBank(grid))

    def test_single_time(self, grid):
        path = sample_path(5, grid.n_t, grid.d)
        zero = sg.TimeField.zeros(grid)
        assert ste_weak_residual(zero, sg.TimeField.zeros(grid, rank=1), path,
                                 np.sin(2. * np.pi * grid.coords[1]), 1.) == 0.

    def test_ito_refinement(self):
        out = ito_refinement(16, 2, 65, n_paths=32, seed=0)
        errors = out['frame']['mean_error'].values
        assert list(out['frame']['stride']) == [8, 4, 2, 1]
        assert errors[0] > errors[-1]
        assert 0.2 <= out['fit'].exponent <= 0.9
        assert out['predicted'] == 0.5

    def test_ito_refinement_stride(self):
        with pytest.raises(ValueError):
            ito_refinement(16, 2, 65, strides=(3,), n_paths=1)


class TestMomentum:

    def test_initial_momentum_is_zero(self, grid):
        triple = initial_stage(2., grid)
        assert momentum_distance(triple, triple) == 0.

    def test_grid_mismatch(self, grid, fine_grid):
        with pytest.raises(GridMismatchError):
            momentum_distance(initial_stage(2., grid), initial_stage(2., fine_grid))


class TestInterpolation:

    @pytest.mark.parametrize('q', [1.5, 2., 3.])
    def test_single_mode_is_extremal(self, grid, q):
        f = sg.ScalarField(grid, np.cos(2. * np.pi * (grid.coords[0] + 2. * grid.coords[1])))
        assert interpolation_ratio(f, 0.4, q) == pytest.approx(1., rel=1e-10)

    def test_l2_constant_at_most_one(self, grid):
        out = interpolation_check(grid, 0.5, 2., n_fields=10)
        assert out['finite'] and out['n_fields'] == 10
        assert out['C'] <= 1. + 1e-12
        assert out['C_half'] <= out['C']

    def test_rejects_exponents(self, grid):
        with pytest.raises(UnsupportedExponentError):
            interpolation_check(grid, 0.5, 1., n_fields=2)
        with pytest.raises(UnsupportedExponentError):
            interpolation_check(grid, 1.5, 2., n_fields=2)


def test_nonuniqueness_exhibit_without_stages(grid):
    config = StageConfig.from_problem(2., 1.5, 0., 2, manual=(0., 2., 3., 2.))
    trajectory = run_iteration(initial_stage(2., grid), [], config, 0)
    out = nonuniqueness_exhibit(trajectory, 2.)
    assert out['stages'] == 0 and out['delta_sum'] == 0.
    assert out['zero_initial'] and out['nonvanishing'] and not out['inconclusive']
    assert out['zero_solution_residual'] == 0.
    assert out['survivor_fraction'] == 1.
    assert out['rho_final_min'] == pytest.approx(1., abs=1e-12)
    assert len(out['stage_residuals']['rows']) == 1
