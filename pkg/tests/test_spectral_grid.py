import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from construction import spectral_grid as sg
from construction.errors import GridMismatchError, ResolutionError, UnsupportedExponentError


def sine(grid, axis=0, k=1):
    return sg.from_function(grid, lambda x: np.sin(2. * np.pi * k * x[axis]))


class TestGridSpec:

    @pytest.mark.parametrize('d, n, n_t', [(1, 16, 17), (2, 12, 17), (2, 4, 17), (2, 16, 3)])
    def test_rejects_bad_grids(self, d, n, n_t):
        with pytest.raises(ValueError):
            sg.GridSpec(d, n, n_t)

    def test_steps_and_indices(self, grid):
        assert grid.h == 1. / 32
        assert grid.dt == 1. / 16
        assert grid.time_index(0.5) == 8
        assert grid.time_index(1.) == 16
        with pytest.raises(ValueError):
            grid.time_index(1.5)

    def test_odd_wavenumbers_drop_nyquist(self, grid):
        assert np.abs(grid.odd_wavenumbers).max() == grid.n // 2 - 1
        assert np.abs(grid.wavenumbers).max() == grid.n // 2


class TestFields:

    def test_wrong_shape(self, grid):
        with pytest.raises(ValueError):
            sg.ScalarField(grid, np.zeros((4, 4)))

    def test_vector_csv(self, grid, rng, tmp_path):
        v = sg.random_field(grid, 3, rng, rank=1)
        v.to_csv(str(tmp_path / 'v.csv'))
        back = sg.Field.from_csv(str(tmp_path / 'v.csv'))
        assert isinstance(back, sg.VectorField) and back.grid == grid
        assert_allclose(back.values, v.values, rtol=1e-12, atol=1e-15)

    def test_values_are_read_only(self, grid):
        f = sine(grid)
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.

    def test_scalar_times_vector(self, grid):
        f = sine(grid)
        v = sg.gradient(f)
        out = f * v
        assert isinstance(out, sg.VectorField)
        assert_allclose(out.values, f.values[None] * v.values)

    def test_grid_mismatch(self, grid, fine_grid):
        with pytest.raises(GridMismatchError):
            sine(grid) + sine(fine_grid)

    def test_random_field(self, grid, rng):
        f = sg.random_field(grid, 3, rng)
        assert abs(f.mean()) < 1e-12
        assert sg.bandwidth(f) == 3
        assert sg.lebesgue_norm(f, 2.) == pytest.approx(1.)
        with pytest.raises(ResolutionError):
            sg.random_field(grid, 16, rng)


class TestNorms:

    def test_lebesgue(self, grid):
        assert sg.lebesgue_norm(sg.constant_field(grid, 1.), 3.) == pytest.approx(1.)
        assert sg.lebesgue_norm(sine(grid), 2.) == pytest.approx(1. / np.sqrt(2.))
        assert sg.lebesgue_norm(sine(grid), np.inf) == pytest.approx(1.)
        with pytest.raises(UnsupportedExponentError):
            sg.lebesgue_norm(sine(grid), 0.5)

    def test_sobolev_single_mode(self, grid):
        f = sine(grid)
        lift = (1. + 4. * np.pi ** 2) ** 0.25
        assert sg.sobolev_norm(f, 0.5, 2.) == pytest.approx(lift * sg.lebesgue_norm(f, 2.), rel=1e-12)

    def test_sobolev_zero_order_is_lebesgue(self, grid, rng):
        f = sg.random_field(grid, 4, rng)
        assert sg.sobolev_norm(f, 0., 1.5) == pytest.approx(sg.lebesgue_norm(f, 1.5), rel=1e-12)

    def test_sobolev_rejects_endpoints(self, grid):
        with pytest.raises(UnsupportedExponentError):
            sg.sobolev_norm(sine(grid), 0.5, 1.)
        with pytest.raises(UnsupportedExponentError):
            sg.sobolev_norm(sine(grid), 1.5, 2.)


class TestOperators:

    def test_derivative_of_sine(self, grid):
        f = sine(grid)
        expected = 2. * np.pi * np.cos(2. * np.pi * grid.coords[0])
        assert_allclose(sg.derivative(f, 0).values, expected, atol=1e-10)
        assert_allclose(sg.derivative(f, 1).values, 0., atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_div_grad_is_laplacian(self, seed):
        grid = sg.GridSpec(2, 32, 9)
        f = sg.random_field(grid, 15, np.random.default_rng(seed))
        assert_allclose(sg.divergence(sg.gradient(f)).values, sg.laplacian(f).values, rtol=1e-10, atol=1e-8)

    def test_dilate(self, grid):
        assert_allclose(sg.dilate(sine(grid), 3).values, sine(grid, k=3).values, atol=1e-12)
        with pytest.raises(ValueError):
            sg.dilate(sine(grid), 1.5)
        with pytest.raises(ResolutionError):
            sg.dilate(sine(grid), 16)

    def test_translate_by_grid_steps(self, grid, rng):
        f = sg.random_field(grid, 15, rng)
        shifted = sg.translate(f, [3 * grid.h, 0.])
        assert_allclose(shifted.values, np.roll(f.values, 3, axis=0), atol=1e-12)

    def test_translate_sine(self, grid):
        out = sg.translate(sine(grid), [0.25, 0.7])
        assert_allclose(out.values, np.sin(2. * np.pi * (grid.coords[0] - 0.25)), atol=1e-12)


class TestMollification:

    def test_time_weights(self, grid):
        w, dw, snapped = sg.MollifierKernel().time_weights(grid.dt, 0.25)
        assert snapped == pytest.approx(0.25)
        assert w.sum() == pytest.approx(1.)
        assert w[0] == 0. and w[-1] == pytest.approx(0., abs=1e-30)
        assert dw.sum() == pytest.approx(0., abs=1e-12)
        with pytest.raises(ResolutionError):
            sg.MollifierKernel().time_weights(grid.dt, 2. * grid.dt)

    def test_space_weights(self, grid):
        kernel = sg.MollifierKernel()
        weights = kernel.space_weights(grid, 0.1)
        assert weights.sum() == pytest.approx(1.)
        assert weights.min() >= 0.
        with pytest.raises(ResolutionError):
            kernel.space_weights(grid, grid.h)

    def test_one_sided_in_time(self, grid):
        samples = np.zeros((grid.n_t, 3))
        samples[9:] = 1.
        out = sg.convolve_in_time(samples, sg.MollifierKernel().time_weights(grid.dt, 0.25)[0])
        assert np.all(out[:9] == 0.)
        assert_allclose(out[-1], 1.)

    def test_constant_after_stop(self, grid):
        samples = np.arange(grid.n_t, dtype=float)
        w = sg.MollifierKernel().time_weights(grid.dt, 0.25)[0]
        out = sg.convolve_in_time(samples, w, stop_index=6)
        assert_allclose(out[10:], 6.)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_l1_contraction(self, seed):
        grid = sg.GridSpec(2, 32, 17)
        rng = np.random.default_rng(seed)
        F = sg.TimeField(grid, np.stack([sg.random_field(grid, 6, rng, rank=1).values for _ in range(grid.n_t)]))
        out = sg.mollify_space_time(F, 0.25)
        assert out.norm(1.) <= F.norm(1.) * (1. + 1e-10)

    def test_constant_field_is_fixed(self, grid):
        F = sg.TimeField(grid, np.full((grid.n_t,) + grid.shape, 2.5))
        out, dout = sg.mollify_space_time(F, 0.25, derivative=True)
        assert_allclose(out.samples, 2.5)
        assert_allclose(dout.samples, 0., atol=1e-10)


class TestTimeField:

    def test_needs_data(self, grid):
        with pytest.raises(ValueError):
            sg.TimeField(grid)
        with pytest.raises(ValueError):
            sg.TimeField(grid, np.zeros((3,) + grid.shape))

    def test_norm_up_to_time(self, grid):
        samples = np.ones((grid.n_t,) + grid.shape) * grid.times[:, None, None]
        F = sg.TimeField(grid, samples)
        assert F.norm(2., 0.5) == pytest.approx(0.5)
        assert F.norm(2.) == pytest.approx(1.)

    def test_evaluator_matches_samples(self, grid):
        F = sg.TimeField(grid, evaluator=lambda t: sg.constant_field(grid, t))
        assert_allclose(F.samples[:, 0, 0], grid.times)
        assert F.rank == 0


def test_improved_holder_sweep(rng):
    grid = sg.GridSpec(2, 64, 9)
    f, g = sg.random_field(grid, 2, rng), sg.random_field(grid, 1, rng)
    out = sg.improved_holder_sweep(f, g, [1, 2, 4, 8], 2.)
    assert out['passed']
    assert out['c_r'] >= 0.
    assert out['predicted_slope'] == -0.5


def test_improved_holder_constant_is_shared(rng):
    grid = sg.GridSpec(2, 64, 9)
    pairs = [(sg.random_field(grid, 2, rng), sg.random_field(grid, 1, rng)) for _ in range(8)]
    lams = [1, 2, 4, 8]
    out = sg.improved_holder_constant(pairs, lams, 2.)
    assert len(out['rows']) == 32 and out['n_fitted'] == 4
    assert {row['c_r'] for row in out['rows']} == {out['c_r']}
    per_pair = [sg.improved_holder_sweep(f, g, lams, 2.)['c_r'] for f, g in pairs[:4]]
    assert out['c_r'] == pytest.approx(max(per_pair), rel=1e-12, abs=1e-15)
    assert all(row['passed'] for row in out['rows'] if row['pair'] < 4)
    assert np.isfinite(out['worst_ratio']) and out['worst_ratio'] > 0.
