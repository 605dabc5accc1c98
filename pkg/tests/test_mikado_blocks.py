import numpy as np
import pytest
from numpy.testing import assert_allclose

from construction import spectral_grid as sg
from construction.errors import InvalidConfigurationError, ResolutionError
from construction.mikado_blocks import (BlobProfile, BlockParams, MikadoBlock, MikadoFamily, blob,
                                        check_stage_resolution, interaction_check, mikado_estimate_probe,
                                        mikado_identity_check, mikado_psi, mikado_Q, mikado_W, potential_b,
                                        predicted_block_exponents, spectral_margin, theta, transverse_axis)

S = 12. / 5.


@pytest.fixture
def block_grid():
    return sg.GridSpec(2, 64, 9)


def test_profile_has_unit_l2_mass():
    grid = sg.GridSpec(2, 128, 9)
    profile = BlobProfile(2)
    values = profile(grid.coords)
    assert np.mean(values ** 2) == pytest.approx(1., rel=1e-6)
    assert values[0, 0] == 0.


def test_profile_validation():
    with pytest.raises(InvalidConfigurationError):
        BlobProfile(2, radius=0.6)
    with pytest.raises(InvalidConfigurationError):
        BlobProfile(2, power=1)


def test_overlapping_tubes_rejected():
    with pytest.raises(InvalidConfigurationError) as err:
        BlobProfile(2, radius=0.3).check_disjoint(1)
    assert err.value.condition == 'disjoint_support'
    assert BlobProfile(2).check_disjoint(1) > 1.


@pytest.mark.parametrize('kwargs, condition', [
    (dict(lam=1, mu=2, sigma=1., nu=2, s=S), 'block_ratio'),
    (dict(lam=2, mu=1, sigma=1., nu=5, s=S), 'block_nu'),
    (dict(lam=1, mu=1, sigma=0., nu=4, s=S), 'block_sigma'),
    (dict(lam=1, mu=1, sigma=1., nu=4, s=1.), 'exponent_s'),
    (dict(lam=1, mu=1, sigma=1., nu=4, s=S, N=0), 'block_N'),
])
def test_block_params_validation(kwargs, condition):
    with pytest.raises(InvalidConfigurationError) as err:
        BlockParams(**kwargs)
    assert err.value.condition == condition


def test_unresolved_block():
    with pytest.raises(ResolutionError):
        MikadoBlock(sg.GridSpec(2, 16, 9), BlockParams(lam=1, mu=4, sigma=1., nu=8, s=S), 0)
    with pytest.raises(ResolutionError):
        MikadoBlock(sg.GridSpec(2, 32, 9), BlockParams(lam=1, mu=1, sigma=1., nu=8, s=S), 0)
    with pytest.raises(ResolutionError):
        MikadoBlock(sg.GridSpec(2, 64, 9), BlockParams(lam=4, mu=1, sigma=1., nu=8, s=S), 0)


@pytest.mark.parametrize('lam, mu', [(1, 2), (2, 1)])
@pytest.mark.parametrize('N', [1, 2, 3])
def test_identities_hold_to_roundoff(block_grid, lam, mu, N):
    params = BlockParams(lam=lam, mu=mu, sigma=2., nu=8, s=S, N=N)
    report = mikado_identity_check(block_grid, params, [0., 0.3, 0.77])
    for name in ('transport', 'potential', 'corrector'):
        assert report[name]['rel'] <= 1e-8, name


def test_interactions_vanish(block_grid):
    params = BlockParams(lam=1, mu=1, sigma=2., nu=8, s=S)
    out = interaction_check(block_grid, params, t=0.)
    assert out['cross'] == 0.
    means = out['means']
    assert means[0, 1] == 0. and means[1, 0] == 0.
    assert means[0, 0] > 0.
    assert_allclose(means[0, 0], means[1, 1], rtol=1e-10)
    moved = interaction_check(block_grid, params, t=0.4, shift=[0.1, 0.3])
    assert moved['cross'] == 0.


def test_velocity_is_divergence_free(block_grid):
    family = MikadoFamily(block_grid, BlockParams(lam=2, mu=1, sigma=4., nu=8, s=S))
    for t in (0., 0.35):
        v = family.velocity(t, shift=[0.2, -0.1])
        assert np.abs(sg.divergence(v).values).max() <= 1e-10 * np.abs(v.values).max()


def test_blocks_point_along_their_direction(block_grid):
    snap = MikadoBlock(block_grid, BlockParams(lam=1, mu=1, sigma=1., nu=8, s=S), 1).at(0.2)
    assert np.all(snap.W.values[0] == 0.)
    assert transverse_axis(1) == 0 and transverse_axis(0) == 1


def test_sigma_scaling(block_grid):
    base = BlockParams(lam=1, mu=2, sigma=2., nu=8, s=S)
    q = mikado_estimate_probe(block_grid, base, 'sigma', [1., 2., 4.], block='Q')
    assert q['predicted'] == -1.
    assert q['error'] < 1e-8
    theta = mikado_estimate_probe(block_grid, base, 'sigma', [1., 2., 4.], block='theta')
    assert theta['fit'].exponent == pytest.approx(0., abs=1e-8)


def test_predicted_exponents_table():
    table = predicted_block_exponents('theta', 2, S, 0, 2.)
    assert table['mu'] == pytest.approx(2. / S - 1.)
    assert predicted_block_exponents('A_N', 2, S, 1, 2.)['nu'] == 0.
    with pytest.raises(ValueError):
        predicted_block_exponents('phi', 2, S, 0, 2.)


@pytest.mark.parametrize('j', [0, 1])
def test_potential_of_the_oscillation(block_grid, j):
    psi = mikado_psi(block_grid, j, 8)
    b = potential_b(block_grid, j, 8)
    assert_allclose(sg.divergence(b).values, psi.values, atol=1e-10)
    assert np.abs(sg.derivative(b.component(transverse_axis(j)), j).values).max() <= 1e-10
    assert (psi.values ** 2).mean() == pytest.approx(1.)
    with pytest.raises(ResolutionError):
        mikado_psi(block_grid, j, 32)


def test_block_functions(block_grid):
    params = BlockParams(lam=1, mu=2, sigma=2., nu=8, s=S)
    shift = [0.1, 0.3]
    W = mikado_W(block_grid, params, 0, 0.4, shift=shift)
    assert np.all(W.values[1] == 0.)
    th = theta(block_grid, params, 0, 0.4, shift=shift)
    Q = mikado_Q(block_grid, params, 0, 0.4, shift=shift)
    assert_allclose(params.sigma * Q.values, th.values * W.values[0], atol=1e-12)


def test_blob_guards(block_grid):
    assert blob(block_grid, 2, 'density', 0, S).values.max() > 0.
    with pytest.raises(ValueError):
        blob(block_grid, 2, 'other', 0, S)
    with pytest.raises(ResolutionError):
        blob(block_grid, 64, 'field', 0, S)
    with pytest.raises(InvalidConfigurationError):
        blob(block_grid, 1.5, 'field', 0, S)


def test_stage_resolution_margin():
    profile = BlobProfile(2, 0.125, power=4)
    params = BlockParams(lam=2, mu=1, sigma=4., nu=8, s=S)
    assert spectral_margin(sg.GridSpec(2, 128, 9), params, profile) == pytest.approx(3.)
    assert check_stage_resolution(sg.GridSpec(2, 128, 9), params, profile) == pytest.approx(3.)
    assert spectral_margin(sg.GridSpec(2, 64, 9), params, profile) == pytest.approx(1.)
    with pytest.raises(ResolutionError):
        check_stage_resolution(sg.GridSpec(2, 64, 9), params, profile)


def test_potential_closure_vanishes_when_resolved():
    grid = sg.GridSpec(2, 128, 9)
    params = BlockParams(lam=1, mu=1, sigma=2., nu=8, s=S, N=2)
    report = mikado_identity_check(grid, params, [0., 0.4])
    assert report['closure']['rel'] <= 1e-4
    assert report['potential']['rel'] <= 1e-8
    assert MikadoBlock(grid, params, 0).at(0.4).A_N_closure <= report['closure']['rel']


@pytest.mark.parametrize('block', ['W_corr', 'A_N'])
@pytest.mark.parametrize('k', [0, 1])
def test_corrector_and_potential_sigma_scaling(block_grid, block, k):
    base = BlockParams(lam=1, mu=2, sigma=2., nu=8, s=S)
    out = mikado_estimate_probe(block_grid, base, 'sigma', [1., 2., 4.], block=block, k=k)
    assert out['predicted'] == predicted_block_exponents(block, 2, S, k, 2.)['sigma']
    assert out['error'] < 1e-8
