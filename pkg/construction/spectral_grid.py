"""
Periodic fields on the torus T^d = R^d / Z^d and the spectral primitives built on them.

All spatial operators act through normalised Fourier coefficients

    f_hat(k) = (1 / n^d) * sum_x f(x) exp(-2 pi i k.x),

so the zero mode is the mean and Parseval reads sum |f_hat|^2 = mean f^2. Odd derivatives drop the
Nyquist mode, which keeps div(grad f) == laplacian(f) exact on the grid.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from construction.errors import GridMismatchError, ResolutionError, UnsupportedExponentError
from utils import constant
from utils.common import fit_power_law

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    d: int
    n: int
    n_t: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError('dimension must be at least 2, got {}'.format(self.d))
        if self.n < constant.MIN_POINTS or self.n & (self.n - 1):
            raise ValueError('n must be a power of two >= {}, got {}'.format(constant.MIN_POINTS, self.n))
        if self.n_t < constant.MIN_POINTS:
            raise ValueError('n_t must be >= {}, got {}'.format(constant.MIN_POINTS, self.n_t))

    @property
    def h(self):
        return 1. / self.n

    @property
    def dt(self):
        return 1. / (self.n_t - 1)

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def axes(self):
        return tuple(range(-self.d, 0))

    @cached_property
    def coords(self):
        axis = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(*([axis] * self.d), indexing='ij'))

    @cached_property
    def wavenumbers(self):
        k = sfft.fftfreq(self.n, 1. / self.n)
        return np.stack(np.meshgrid(*([k] * self.d), indexing='ij'))

    @cached_property
    def odd_wavenumbers(self):
        k = self.wavenumbers.copy()
        k[np.abs(k) == self.n // 2] = 0.
        return k

    @cached_property
    def times(self):
        return np.linspace(0., 1., self.n_t)

    def time_index(self, t):
        if t < 0. or t > 1. + 1e-12:
            raise ValueError('time {} outside [0, 1]'.format(t))
        return int(np.floor(t / self.dt + 1e-9))

    def describe(self):
        return 'd={} n={} n_t={}'.format(self.d, self.n, self.n_t)


def fft(values, grid):
    return sfft.fftn(values, axes=grid.axes, norm='forward')


def ifft(coeffs, grid):
    return sfft.ifftn(coeffs, axes=grid.axes, norm='forward').real


class Field(object):
    """Immutable real field on a GridSpec. Rank 0 is scalar, rank 1 a d-vector."""
    rank = 0

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        expected = self.expected_shape(grid)
        if values.shape != expected:
            raise ValueError('{} expects shape {}, got {}'.format(
                type(self).__name__, expected, values.shape))
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def expected_shape(cls, grid):
        return grid.shape if cls.rank == 0 else (grid.d,) + grid.shape

    @cached_property
    def spectral(self):
        return fft(self.values, self.grid)

    def mean(self):
        m = self.values.mean(axis=self.grid.axes)
        return float(m) if self.rank == 0 else m

    def _wrap(self, values):
        return make_field(self.grid, values)

    def _other_values(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            if self.rank == other.rank:
                return other.values
            if other.rank == 0:
                return other.values[None]
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other_values(other))

    def __rsub__(self, other):
        return self._wrap(self._other_values(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, Field) and self.rank == 0 and other.rank == 1:
            check_same_grid(self, other)
            return other._wrap(self.values[None] * other.values)
        return self._wrap(self.values * self._other_values(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / other)

    def __neg__(self):
        return self._wrap(-self.values)

    def __repr__(self):
        return '{}({})'.format(type(self).__name__, self.grid.describe())

    def to_csv(self, path):
        flat = self.values.reshape(self.rank and self.grid.d or 1, -1).T
        header = 'd={} n={} n_t={} rank={}'.format(self.grid.d, self.grid.n, self.grid.n_t, self.rank)
        np.savetxt(path, flat, delimiter=',', header=header)

    @staticmethod
    def from_csv(path):
        with open(path) as f:
            header = f.readline().lstrip('# ').split()
        meta = dict(item.split('=') for item in header)
        grid = GridSpec(int(meta['d']), int(meta['n']), int(meta['n_t']))
        flat = np.atleast_2d(np.loadtxt(path, delimiter=','))
        if int(meta['rank']) == 0:
            return ScalarField(grid, flat.reshape(grid.shape))
        return VectorField(grid, flat.T.reshape((grid.d,) + grid.shape))


class ScalarField(Field):
    rank = 0


class VectorField(Field):
    rank = 1

    def component(self, i):
        return ScalarField(self.grid, self.values[i])

    @property
    def components(self):
        return [self.component(i) for i in range(self.grid.d)]

    def dot(self, other):
        check_same_grid(self, other)
        if isinstance(other, VectorField):
            return ScalarField(self.grid, np.einsum('i...,i...->...', self.values, other.values))
        return ScalarField(self.grid, np.tensordot(np.asarray(other, dtype=float), self.values, axes=1))


def make_field(grid, values):
    values = np.asarray(values)
    if values.shape == grid.shape:
        return ScalarField(grid, values)
    return VectorField(grid, values)


def constant_field(grid, value=0.):
    return ScalarField(grid, np.full(grid.shape, float(value)))


def from_function(grid, fn):
    """Sample fn(x) where x has shape (d, n, ..., n)."""
    return make_field(grid, fn(grid.coords))


def check_same_grid(*fields):
    grids = {f.grid for f in fields if isinstance(f, Field)}
    if len(grids) > 1:
        raise GridMismatchError('fields live on different grids: {}'.format(
            ', '.join(g.describe() for g in grids)))


def random_field(grid, bandwidth, rng, mean_zero=True, rank=0):
    """Random real field with every active mode |k|_inf <= bandwidth."""
    if bandwidth >= grid.n // 2:
        raise ResolutionError('bandwidth {} not resolved on n={}'.format(bandwidth, grid.n))
    shape = grid.shape if rank == 0 else (grid.d,) + grid.shape
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = np.max(np.abs(grid.wavenumbers), axis=0) <= bandwidth
    coeffs = coeffs * mask
    if mean_zero:
        coeffs[(Ellipsis,) + (0,) * grid.d] = 0.
    values = ifft(coeffs, grid)
    values /= np.sqrt(np.mean(values ** 2)) + 1e-300
    return make_field(grid, values)


# norms


def _magnitude(values, grid, rank):
    if rank == 0:
        return np.abs(values)
    return np.sqrt(np.sum(values ** 2, axis=-grid.d - 1))


def lebesgue_norm_values(values, grid, r, rank=0):
    """L^r norm over the trailing spatial axes; vector components are combined pointwise."""
    if r != np.inf and r < 1:
        raise UnsupportedExponentError('L^r needs r >= 1, got {}'.format(r))
    mag = _magnitude(values, grid, rank)
    if r == np.inf:
        return mag.max(axis=grid.axes)
    return np.mean(mag ** r, axis=grid.axes) ** (1. / r)


def lebesgue_norm(f, r):
    return float(lebesgue_norm_values(f.values, f.grid, r, f.rank))


def sobolev_norm(f, theta, r):
    """W^{theta,r} norm via the Bessel multiplier (1 + 4 pi^2 |k|^2)^(theta/2), summed over components."""
    if not 1. < r < np.inf:
        raise UnsupportedExponentError('W^(theta,r) needs r in (1, inf), got {}'.format(r))
    if not 0. <= theta <= 1.:
        raise UnsupportedExponentError('theta must lie in [0, 1], got {}'.format(theta))
    grid = f.grid
    mult = (1. + 4. * np.pi ** 2 * np.sum(grid.wavenumbers ** 2, axis=0)) ** (theta / 2.)
    lifted = ifft(f.spectral * mult, grid)
    if f.rank == 0:
        return float(np.mean(np.abs(lifted) ** r) ** (1. / r))
    return float(sum(np.mean(np.abs(c) ** r) ** (1. / r) for c in lifted))


def c1_norm(f):
    """sup |f| + sup |grad f| on the grid."""
    grad = gradient(f)
    return float(np.abs(f.values).max() + _magnitude(grad.values, f.grid, 1).max())


# differential operators


def derivative_values(values, grid, axis):
    return ifft(2j * np.pi * grid.odd_wavenumbers[axis] * fft(values, grid), grid)


def derivative(f, axis):
    """Spectral d/dx_axis, axis counted from 0."""
    return f._wrap(derivative_values(f.values, f.grid, axis))


def gradient(f):
    coeffs = fft(f.values, f.grid)
    k = f.grid.odd_wavenumbers
    return VectorField(f.grid, np.stack([ifft(2j * np.pi * k[i] * coeffs, f.grid) for i in range(f.grid.d)]))


def divergence_values(values, grid):
    coeffs = fft(values, grid)
    k = grid.odd_wavenumbers
    return ifft(np.sum(2j * np.pi * k * coeffs, axis=-grid.d - 1), grid)


def divergence(v):
    return ScalarField(v.grid, divergence_values(v.values, v.grid))


def laplacian(f):
    k2 = np.sum(f.grid.odd_wavenumbers ** 2, axis=0)
    return f._wrap(ifft(-4. * np.pi ** 2 * k2 * f.spectral, f.grid))


# dilation and translation


def bandwidth(f, rel_tol=1e-12):
    """Largest |k|_inf carrying a coefficient above rel_tol * max |f_hat|."""
    amp = np.abs(f.spectral)
    if f.rank == 1:
        amp = amp.max(axis=0)
    top = amp.max()
    if top == 0.:
        return 0
    active = amp > rel_tol * top
    return int(np.max(np.abs(f.grid.wavenumbers)[:, active]))


def check_resolved(max_frequency, grid, what='field'):
    if max_frequency >= grid.n / 2.:
        raise ResolutionError('{} reaches frequency {} but n/2 = {}'.format(what, max_frequency, grid.n // 2))


def dilate(f, lam):
    """f_lam(x) = f(lam x) by remapping coefficient k to lam k."""
    if int(lam) != lam or lam < 1:
        raise ValueError('dilation factor must be a positive integer, got {}'.format(lam))
    lam = int(lam)
    if lam == 1:
        return f
    grid = f.grid
    check_resolved(lam * bandwidth(f), grid, 'dilated field')
    k = grid.wavenumbers.astype(int)
    src = np.max(np.abs(k), axis=0) * lam < grid.n // 2
    target = tuple(np.mod(lam * k[i][src], grid.n) for i in range(grid.d))
    coeffs = np.zeros_like(f.spectral)
    if f.rank == 0:
        coeffs[target] = f.spectral[src]
    else:
        for c in range(grid.d):
            coeffs[c][target] = f.spectral[c][src]
    return f._wrap(ifft(coeffs, grid))


def translation_phase(grid, y):
    y = np.asarray(y, dtype=float).reshape((grid.d,) + (1,) * grid.d)
    return np.exp(-2j * np.pi * np.sum(grid.wavenumbers * y, axis=0))


def translate(f, y):
    """(f o tau_y)(x) = f(x - y) for arbitrary real y."""
    return f._wrap(ifft(f.spectral * translation_phase(f.grid, y), f.grid))


# mollification


@dataclass(frozen=True)
class MollifierKernel:
    """Product kernel: radial cos^power bump in space, sin^power(pi t) on (0, 1) in time."""
    power: int = 4

    def profile(self, tau):
        return np.where((tau > 0.) & (tau < 1.), np.sin(np.pi * tau) ** self.power, 0.)

    def profile_derivative(self, tau):
        p = self.power
        return np.where((tau > 0.) & (tau < 1.),
                        p * np.pi * np.sin(np.pi * tau) ** (p - 1) * np.cos(np.pi * tau), 0.)

    def time_weights(self, dt, eps):
        """Weights w_k ~ dt * eta_eps(k dt) and dw_k ~ dt * eta_eps'(k dt); eps snaps to a multiple of dt."""
        steps = int(round(eps / dt))
        if steps < constant.MIN_KERNEL_STEPS:
            raise ResolutionError('time scale {:.3g} spans {} steps, need {}'.format(
                eps, steps, constant.MIN_KERNEL_STEPS))
        tau = np.arange(steps + 1) / steps
        eta = self.profile(tau)
        norm = eta.sum()
        snapped = steps * dt
        return eta / norm, self.profile_derivative(tau) / (norm * snapped), snapped

    def space_weights(self, grid, eps):
        if eps < 2. * grid.h:
            raise ResolutionError('space scale {:.3g} below 2h = {:.3g}'.format(eps, 2. * grid.h))
        x = grid.coords
        dist = np.sqrt(np.sum(np.minimum(x, 1. - x) ** 2, axis=0))
        bump = np.where(dist < eps, np.cos(np.pi * dist / (2. * eps)) ** self.power, 0.)
        return bump / bump.sum()


def convolve_in_time(samples, weights, stop_index=None):
    """sum_k w_k F(t_i - t_k), constant extension before t = 0 and after stop_index."""
    n_t = samples.shape[0]
    last = n_t - 1 if stop_index is None else stop_index
    out = np.zeros_like(samples, dtype=float)
    for k, w in enumerate(weights):
        if w == 0.:
            continue
        idx = np.minimum(np.clip(np.arange(n_t) - k, 0, None), last)
        out += w * samples[idx]
    return out


def mollify_space(values, grid, space_kernel_hat):
    return ifft(fft(values, grid) * space_kernel_hat, grid)


def mollify_space_time(F, eps, kernel=None, tau=1., derivative=False):
    """Space-time mollification with a one-sided time kernel. Returns F_eps, or (F_eps, dF_eps/dt)."""
    kernel = kernel or MollifierKernel()
    grid = F.grid
    w, dw, _ = kernel.time_weights(grid.dt, eps)
    kernel_hat = fft(kernel.space_weights(grid, eps), grid) * grid.n ** grid.d
    stop = grid.time_index(min(tau, 1.))
    out = TimeField(grid, mollify_space(convolve_in_time(F.samples, w, stop), grid, kernel_hat))
    if not derivative:
        return out
    dout = TimeField(grid, mollify_space(convolve_in_time(F.samples, dw, stop), grid, kernel_hat))
    return out, dout


# time-dependent fields


class TimeField(object):
    """A field sampled on the time grid, or given by a closed-form evaluator t -> Field."""

    def __init__(self, grid, samples=None, evaluator=None):
        if samples is None and evaluator is None:
            raise ValueError('TimeField needs samples or an evaluator')
        self.grid = grid
        self.evaluator = evaluator
        if samples is not None:
            samples = np.array(samples, dtype=float)
            if samples.shape[0] != grid.n_t:
                raise ValueError('expected {} time samples, got {}'.format(grid.n_t, samples.shape[0]))
            samples.setflags(write=False)
            self.__dict__['samples'] = samples

    @cached_property
    def samples(self):
        return np.stack([self.evaluator(t).values for t in self.grid.times])

    @property
    def rank(self):
        return self.samples.ndim - 1 - self.grid.d

    def sample(self, i):
        return make_field(self.grid, self.samples[i])

    def at(self, t):
        if self.evaluator is not None:
            return self.evaluator(t)
        pos = min(max(t, 0.), 1.) / self.grid.dt
        i = min(int(np.floor(pos)), self.grid.n_t - 2)
        a = pos - i
        return make_field(self.grid, (1. - a) * self.samples[i] + a * self.samples[i + 1])

    def norm(self, r, t_max=1.):
        """C_t L^r norm over sample times t <= t_max."""
        stop = self.grid.time_index(min(t_max, 1.))
        return float(np.max(self.norms(r)[:stop + 1]))

    def norms(self, r):
        return lebesgue_norm_values(self.samples, self.grid, r, self.rank)

    def mean(self):
        return self.samples.mean(axis=self.grid.axes)

    def _other(self, other):
        if isinstance(other, TimeField):
            if other.grid != self.grid:
                raise GridMismatchError('time fields live on different grids')
            return other.samples
        return other

    def __add__(self, other):
        return TimeField(self.grid, self.samples + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return TimeField(self.grid, self.samples - self._other(other))

    def __neg__(self):
        return TimeField(self.grid, -self.samples)

    def __mul__(self, scalar):
        return TimeField(self.grid, self.samples * scalar)

    __rmul__ = __mul__

    @staticmethod
    def zeros(grid, rank=0):
        shape = (grid.n_t,) + grid.shape if rank == 0 else (grid.n_t, grid.d) + grid.shape
        return TimeField(grid, np.zeros(shape))


# improved Hoelder inequality


def improved_holder_check(f, g, lam, r, c_r):
    """Compare ||f g_lam||_r against ||f||_r ||g||_r + c_r lam^(-1/r) ||f||_C1 ||g||_r."""
    check_same_grid(f, g)
    g_lam = dilate(g, lam)
    lhs = lebesgue_norm(f * g_lam, r)
    base = lebesgue_norm(f, r) * lebesgue_norm(g, r)
    slack = lam ** (-1. / r) * c1_norm(f) * lebesgue_norm(g, r)
    rhs = base + c_r * slack
    return dict(lam=lam, lhs=lhs, base=base, slack=slack, rhs=rhs, c_r=c_r,
                excess=lhs - base, passed=bool(lhs <= rhs * (1. + 1e-12)))


def improved_holder_sweep(f, g, lams, r):
    """Fit the smallest C_r valid over the sweep and the log-log slope of |excess|."""
    rows = [improved_holder_check(f, g, lam, r, 0.) for lam in lams]
    ratios = [max(row['excess'], 0.) / row['slack'] for row in rows if row['slack'] > 0.]
    c_r = max(ratios) if ratios else 0.
    for row in rows:
        row['rhs'] = row['base'] + c_r * row['slack']
        row['c_r'] = c_r
        row['passed'] = bool(row['lhs'] <= row['rhs'] * (1. + 1e-12))
    excess = np.abs([row['excess'] for row in rows])
    fit = fit_power_law(np.asarray(lams, dtype=float), excess, name='holder_excess', floor=1e-13)
    return dict(rows=rows, c_r=c_r, fit=fit, predicted_slope=-1. / r,
                passed=all(row['passed'] for row in rows))


def improved_holder_constant(pairs, lams, r):
    """
    One C_r shared by every (f, g) pair and lam. The constant is the smallest one valid on the first
    half of the pairs; the worst lhs / rhs over all pairs then shows whether it carries over to the
    rest (above 1 means it does not).
    """
    rows = []
    for k, (f, g) in enumerate(pairs):
        for lam in lams:
            row = improved_holder_check(f, g, lam, r, 0.)
            row['pair'] = k
            rows.append(row)
    fitted = max(1, len(pairs) // 2)
    ratios = [max(row['excess'], 0.) / row['slack'] for row in rows if row['pair'] < fitted and row['slack'] > 0.]
    c_r = max(ratios) if ratios else 0.
    for row in rows:
        row['c_r'] = c_r
        row['rhs'] = row['base'] + c_r * row['slack']
        row['ratio'] = row['lhs'] / row['rhs'] if row['rhs'] > 0. else 0.
        row['passed'] = bool(row['lhs'] <= row['rhs'] * (1. + 1e-12))
    return dict(rows=rows, c_r=c_r, n_pairs=len(pairs), n_fitted=fitted,
                worst_ratio=max(row['ratio'] for row in rows), passed=all(row['passed'] for row in rows))
