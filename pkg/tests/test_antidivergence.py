import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from construction import spectral_grid as sg
from construction.antidivergence import (antidiv_decay_probe, check_mean_zero, closure_defect, improved_antidiv,
                                         std_antidiv, std_antidiv_centered)
from construction.errors import DegenerateProbeError, MeanViolationError, ResolutionError


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 16), band=st.integers(1, 15))
def test_div_of_antidiv_is_identity(seed, band):
    grid = sg.GridSpec(2, 32, 9)
    f = sg.random_field(grid, band, np.random.default_rng(seed))
    assert_allclose(sg.divergence(std_antidiv(f)).values, f.values, atol=1e-10)


def test_antidiv_is_a_gradient(grid, rng):
    f = sg.random_field(grid, 5, rng)
    v = std_antidiv(f)
    curl = sg.derivative(v.component(0), 1) - sg.derivative(v.component(1), 0)
    assert np.abs(curl.values).max() < 1e-12


def test_nonzero_mean_rejected(grid, rng):
    f = sg.random_field(grid, 3, rng) + 0.5
    with pytest.raises(MeanViolationError):
        std_antidiv(f)
    with pytest.raises(MeanViolationError):
        check_mean_zero(f)
    assert_allclose(sg.divergence(std_antidiv_centered(f)).values, f.values - f.mean(), atol=1e-10)


@pytest.mark.parametrize('N', [1, 2, 3])
@pytest.mark.parametrize('close', [True, False])
def test_improved_divergence_identity(N, close, rng):
    grid = sg.GridSpec(2, 64, 9)
    f = sg.random_field(grid, 2, rng, mean_zero=False)
    g = sg.dilate(sg.random_field(grid, 1, rng), 4)
    out = improved_antidiv(f, g, N, close=close)
    fg = f * g
    assert_allclose(sg.divergence(out).values, (fg - fg.mean()).values, atol=1e-8)


def test_improved_needs_mean_zero_second_argument(grid, rng):
    f = sg.random_field(grid, 2, rng)
    with pytest.raises(MeanViolationError):
        improved_antidiv(f, sg.constant_field(grid, 1.))


def test_improved_order_must_be_positive(grid, rng):
    f, g = sg.random_field(grid, 2, rng), sg.random_field(grid, 2, rng)
    with pytest.raises(ValueError):
        improved_antidiv(f, g, 0)


def test_product_guard(grid, rng):
    f, g = sg.random_field(grid, 10, rng), sg.random_field(grid, 6, rng)
    with pytest.raises(ResolutionError):
        improved_antidiv(f, g)
    improved_antidiv(f, g, guard=False)


def test_closure_defect_vanishes_for_resolved_products(rng):
    grid = sg.GridSpec(2, 64, 9)
    f = sg.random_field(grid, 3, rng, mean_zero=False)
    g = sg.dilate(sg.random_field(grid, 2, rng), 4)
    _, size = closure_defect(f, g, improved_antidiv(f, g, 2))
    assert size <= 1e-10


def test_closure_absorbs_or_rejects_aliasing(rng):
    grid = sg.GridSpec(2, 32, 9)
    f, g = sg.random_field(grid, 12, rng), sg.random_field(grid, 8, rng)
    fg = f * g
    target = (fg - fg.mean()).values
    raw = improved_antidiv(f, g, guard=False)
    assert np.abs(sg.divergence(raw).values - target).max() > 1e-6
    closed = improved_antidiv(f, g, guard=False, close=True)
    assert_allclose(sg.divergence(closed).values, target, atol=1e-8 * np.abs(target).max())
    with pytest.raises(ResolutionError):
        improved_antidiv(f, g, guard=False, close=True, closure_tol=1e-6)


def test_decay_slope(rng):
    grid = sg.GridSpec(2, 128, 9)
    f = sg.random_field(grid, 2, rng, mean_zero=False)
    g = sg.random_field(grid, 1, rng)
    out = antidiv_decay_probe(f, g, [8, 16, 32])
    assert not out['degenerate']
    assert out['fit'].exponent == pytest.approx(-1., abs=0.2)


def test_decay_probe_needs_three_points(grid, rng):
    f, g = sg.random_field(grid, 2, rng), sg.random_field(grid, 1, rng)
    with pytest.raises(DegenerateProbeError):
        antidiv_decay_probe(f, g, [2, 4])
