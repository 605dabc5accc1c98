import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from construction import spectral_grid as sg
from construction.brownian import (BrownianPath, calibrate_L, calibration_seeds, holder_seminorm, mollify_path,
                                   sample_path, shift_by_path, stopping_time)
from construction.errors import ResolutionError, UnsupportedExponentError
from utils.common import fit_power_law


def test_sample_path_is_seeded():
    a, b = sample_path(7, 33, 2), sample_path(7, 33, 2)
    assert_array_equal(a.values, b.values)
    assert np.all(a.values[0] == 0.)
    assert not np.array_equal(a.values, sample_path(8, 33, 2).values)


def test_increment_variance():
    path = sample_path(0, 4097, 2)
    increments = np.diff(path.values, axis=0)
    assert increments.var() == pytest.approx(path.dt, rel=0.1)


def test_terminal_variance():
    ends = np.array([sample_path(seed, 17, 2).values[-1] for seed in calibration_seeds(3, 2000)])
    assert ends.var() == pytest.approx(1., rel=0.1)
    assert np.abs(ends.mean(axis=0)).max() < 0.1


def test_running_seminorm_of_linear_path():
    n_t = 33
    t = np.linspace(0., 1., n_t)
    path = BrownianPath(0, np.outer(t, [3., 4.]))
    assert_allclose(path.running_seminorm(0.5), 5. * np.sqrt(t), atol=1e-12)
    with pytest.raises(UnsupportedExponentError):
        path.running_seminorm(1.)


def test_holder_seminorm_is_monotone():
    path = sample_path(1, 65, 2)
    values = [holder_seminorm(path, 0.4, t) for t in (0.25, 0.5, 1.)]
    assert values == sorted(values)


def test_stopping_time():
    path = sample_path(2, 33, 2)
    stop = stopping_time(path, 1e6, 0.02)
    assert stop.tau == 1. and stop.index == 32 and stop.survives
    early = stopping_time(path, 1e-9, 0.02)
    assert early.index == 1
    assert early.tau == pytest.approx(path.dt)
    assert not early.survives
    with pytest.raises(ValueError):
        stopping_time(path, 0., 0.02)


def test_truncated_path_is_frozen():
    path = sample_path(3, 17, 2)
    frozen = path.truncated(5)
    assert_array_equal(frozen.values[:6], path.values[:6])
    assert_array_equal(frozen.values[6:], np.repeat(path.values[5:6], 11, axis=0))


def test_mollified_path_is_adapted():
    path = sample_path(4, 65, 2)
    changed = np.array(path.values)
    changed[21:] += 1.
    a = mollify_path(path, 0.125)
    b = mollify_path(BrownianPath(4, changed), 0.125)
    assert_array_equal(a.values[:21], b.values[:21])
    assert_array_equal(a.derivative[:21], b.derivative[:21])
    assert np.all(a.values[0] == 0.)
    assert a.ell == pytest.approx(0.125)


def test_mollified_path_needs_resolved_scale():
    with pytest.raises(ResolutionError):
        mollify_path(sample_path(0, 17, 2), 0.1)


def test_shift_by_path_inverse(grid, rng):
    F = sg.TimeField(grid, np.stack([sg.random_field(grid, 6, rng).values for _ in range(grid.n_t)]))
    path = sample_path(5, grid.n_t, grid.d)
    back = shift_by_path(shift_by_path(F, path, sign=1), path, sign=-1)
    assert_allclose(back.samples, F.samples, atol=1e-12)


def test_shift_by_constant(grid):
    f = sg.from_function(grid, lambda x: np.sin(2. * np.pi * x[0]) * np.cos(2. * np.pi * x[1]))
    F = sg.TimeField(grid, np.repeat(f.values[None], grid.n_t, axis=0))
    y = np.array([0.2, 0.35])
    out = shift_by_path(F, np.tile(y, (grid.n_t, 1)))
    assert_allclose(out.samples[3], sg.translate(f, -y).values, atol=1e-12)


def test_calibrate_L():
    low = calibrate_L(0.5, 0.02, 64, 33, 2, seed=11)
    high = calibrate_L(0.9, 0.02, 64, 33, 2, seed=11)
    assert 0. < low <= high
    assert calibrate_L(0.9, 0.02, 64, 33, 2, seed=11) == high
    with pytest.raises(ValueError):
        calibrate_L(1., 0.02, 64, 33, 2)


@pytest.mark.slow
def test_calibrated_L_keeps_most_paths():
    kappa = 0.02
    L = calibrate_L(0.9, kappa, 1000, 65, 2, seed=11)
    fresh = [stopping_time(sample_path(seed, 65, 2), L, kappa).survives for seed in calibration_seeds(12, 1000)]
    assert 0.85 <= np.mean(fresh) <= 0.95


def test_mollified_path_bounds():
    kappa = 0.02
    path = sample_path(6, 1025, 2)
    hold = holder_seminorm(path, 0.5 - kappa)
    ells, gaps, slopes = [], [], []
    for steps in (4, 8, 16, 32, 64):
        mol = mollify_path(path, steps * path.dt)
        gap = np.linalg.norm(mol.values - path.values, axis=1).max()
        slope = np.linalg.norm(mol.derivative, axis=1).max()
        assert gap <= hold * mol.ell ** (0.5 - kappa) * (1. + 1e-9)
        assert slope <= 6. * hold * mol.ell ** (-0.5 - kappa)
        ells.append(mol.ell)
        gaps.append(gap)
        slopes.append(slope)
    assert 0.25 <= fit_power_law(ells, gaps).exponent <= 0.75
    assert -0.75 <= fit_power_law(ells, slopes).exponent <= -0.25
