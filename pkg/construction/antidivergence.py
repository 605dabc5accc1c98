"""
Antidivergence operators on mean-zero periodic fields.

std_antidiv is grad(inverse laplacian). improved_antidiv is the bilinear operator R_N with
div R_N(f, g) = f g - mean(f g) whose size gains a factor lam^-1 when g oscillates at frequency lam.
"""
import logging

import numpy as np

from construction import spectral_grid as sg
from construction.errors import DegenerateProbeError, MeanViolationError, ResolutionError
from utils import constant
from utils.common import fit_power_law

logger = logging.getLogger(__name__)


def check_mean_zero(f, tol=constant.MEAN_TOL, what='argument'):
    scale = max(1., float(np.abs(f.values).max()))
    mean = f.mean()
    if abs(mean) > tol * scale:
        logger.debug('%s rejected with mean %.3e', what, mean)
        raise MeanViolationError(mean, tol * scale)


def std_antidiv_values(values, grid):
    """Batched div^-1 over the trailing spatial axes. Pure Nyquist modes are dropped."""
    k = grid.odd_wavenumbers
    k2 = np.sum(k ** 2, axis=0)
    inv = np.zeros_like(k2)
    np.divide(1., k2, out=inv, where=k2 > 0)
    coeffs = np.expand_dims(sg.fft(values, grid), axis=-grid.d - 1)
    return sg.ifft(-1j * k * inv / (2. * np.pi) * coeffs, grid)


def std_antidiv(f, tol=constant.MEAN_TOL):
    """div^-1 f = grad laplacian^-1 f for mean-zero scalar f."""
    check_mean_zero(f, tol)
    return sg.VectorField(f.grid, std_antidiv_values(f.values, f.grid))


def std_antidiv_centered(f):
    """div^-1 (f - mean f), the form every defect term uses."""
    return sg.VectorField(f.grid, std_antidiv_values(f.values - f.mean(), f.grid))


def _product_guard(f, g):
    reach = sg.bandwidth(f) + sg.bandwidth(g)
    if reach >= f.grid.n / 2.:
        raise ResolutionError('product reaches frequency {} but n/2 = {}'.format(reach, f.grid.n // 2))


def _recursion(f, g, order):
    G = std_antidiv_centered(g)
    if order == 1:
        return f * G - std_antidiv_centered(sg.gradient(f).dot(G))
    out = f * G
    for i in range(f.grid.d):
        out = out - _recursion(sg.derivative(f, i), G.component(i), order - 1)
    return out


def closure_defect(f, g, out):
    """fg - mean(fg) - div out and its size relative to |fg - mean(fg)|; both vanish when fg is resolved."""
    fg = f * g
    target = fg - fg.mean()
    defect = target - sg.divergence(out)
    size = float(np.abs(defect.values).max())
    scale = float(np.abs(target.values).max())
    return defect, size / scale if scale > 0. else size


def improved_antidiv(f, g, N=1, tol=constant.MEAN_TOL, guard=True, close=False, closure_tol=None):
    """
    R_N(f, g) with div R_N(f, g) = f g - mean(f g).

    R_1(f, g)     = f G - div^-1(grad f . G - mean)
    R_{k+1}(f, g) = f G - sum_i R_k(d_i f, G_i),   G = div^-1 g.

    The identity is exact only for resolved products. With close=True the aliasing defect is measured
    and absorbed by one extra div^-1; a defect above closure_tol (relative) raises ResolutionError.
    """
    if N < 1:
        raise ValueError('improvement order must be >= 1, got {}'.format(N))
    sg.check_same_grid(f, g)
    check_mean_zero(g, tol, 'second argument')
    if guard:
        _product_guard(f, g)
    out = _recursion(f, g, N)
    if not close:
        return out
    defect, size = closure_defect(f, g, out)
    if closure_tol is not None and size > closure_tol:
        raise ResolutionError('aliasing defect {:.2e} of the improved antidivergence exceeds {:.1e}'.format(
            size, closure_tol))
    return out + std_antidiv_centered(defect)


def antidiv_decay_probe(f, g, lams, N=1, r=2.):
    """Fit log ||R_N(f, g_lam)||_r against log lam over the sweep."""
    if len(lams) < 3:
        raise DegenerateProbeError('decay probe needs at least 3 sweep values, got {}'.format(len(lams)))
    norms = []
    for lam in lams:
        g_lam = sg.dilate(g, lam)
        norms.append(sg.lebesgue_norm(improved_antidiv(f, g_lam, N), r))
    norms = np.asarray(norms)
    degenerate = bool(np.all(norms == 0.))
    fit = fit_power_law(np.asarray(lams, dtype=float), norms, name='antidiv_N{}'.format(N))
    logger.info('antidiv decay N=%d: slope %.3f (predicted -1)', N, fit.exponent)
    return dict(lams=list(lams), norms=norms.tolist(), fit=fit, predicted_slope=-1.,
                degenerate=degenerate or fit.degenerate)
