"""
Weak-form checks of the constructed solutions.

Every residual pairs the fields with a fixed bank of smooth test functions and integrates in time on the
sample grid: the continuity-defect residual of a triple, the Ito-form weak residual of the stochastic
transport equation for the shifted density, the momentum distance between two stages, the
interpolation constant between W^{theta,q}, L^q and W^{1,q}, and the nonuniqueness certificate.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from construction import spectral_grid as sg
from construction.brownian import BrownianPath, sample_path, shift_by_path
from construction.errors import GridMismatchError, UnsupportedExponentError
from utils.average_meter import AverageMeter
from utils.common import fit_power_law

logger = logging.getLogger(__name__)

BUMP_RADIUS = 0.25


@dataclass(frozen=True, eq=False)
class TestFunction:
    __test__ = False

    name: str
    phi: np.ndarray
    grad: np.ndarray
    lap: np.ndarray


class TestFunctionBank(object):
    """Trigonometric modes with |k|_inf <= max_mode (one per +-k pair, cos and sin), the constant and a bump."""
    __test__ = False

    def __init__(self, grid, max_mode=2, bump=True):
        sg.check_resolved(max_mode, grid, 'test function')
        self.grid = grid
        self.functions = [self._make('const', np.ones(grid.shape))]
        x = grid.coords
        for k in self._half_space(grid.d, max_mode):
            phase = 2. * np.pi * np.tensordot(np.asarray(k, dtype=float), x, axes=1)
            label = ','.join(str(c) for c in k)
            self.functions.append(self._make('cos({})'.format(label), np.cos(phase)))
            self.functions.append(self._make('sin({})'.format(label), np.sin(phase)))
        if bump:
            dist = np.sqrt(np.sum((x - 0.5) ** 2, axis=0))
            self.functions.append(self._make('bump', np.where(
                dist < BUMP_RADIUS, np.cos(np.pi * dist / (2. * BUMP_RADIUS)) ** 4, 0.)))

    @staticmethod
    def _half_space(d, max_mode):
        grid = np.stack(np.meshgrid(*([np.arange(-max_mode, max_mode + 1)] * d), indexing='ij'))
        modes = grid.reshape(d, -1).T
        keep = []
        for k in modes:
            nonzero = k[k != 0]
            if len(nonzero) and nonzero[0] > 0:
                keep.append(tuple(int(c) for c in k))
        return keep

    def _make(self, name, values):
        f = sg.ScalarField(self.grid, values)
        return TestFunction(name, f.values, sg.gradient(f).values, sg.laplacian(f).values)

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    @property
    def names(self):
        return [f.name for f in self.functions]

    def stacked(self, what):
        return np.stack([getattr(f, what) for f in self.functions])


def _pair(samples, tests, grid):
    """int samples(t) . tests(m) dx for every time t and bank member m."""
    n_t = samples.shape[0]
    return samples.reshape(n_t, -1) @ tests.reshape(tests.shape[0], -1).T / float(grid.n ** grid.d)


def _check_grid(*fields):
    grids = {f.grid for f in fields}
    if len(grids) > 1:
        raise GridMismatchError('residual inputs live on different grids')


def weak_residual_series(rho, U, R, bank, diffusion=False):
    """
    r(t, phi) = int rho(t) phi - int rho(0) phi - int_0^t int rho U . grad phi - int_0^t int R . grad phi
    (- int_0^t int rho lap phi with diffusion), shape (n_t, len(bank)).
    """
    _check_grid(rho, U, R)
    grid = rho.grid
    if bank.grid != grid:
        raise GridMismatchError('test bank built on {}, fields on {}'.format(bank.grid.describe(), grid.describe()))
    grads = bank.stacked('grad')
    mass = _pair(rho.samples, bank.stacked('phi'), grid)
    flux = _pair(rho.samples[:, None] * U.samples, grads, grid)
    flux = flux + _pair(R.samples, grads, grid)
    if diffusion:
        flux = flux + _pair(rho.samples, bank.stacked('lap'), grid)
    return mass - mass[0] - cumulative_trapezoid(flux, dx=grid.dt, axis=0, initial=0.)


def continuity_defect_residual(triple, index, phi, t):
    """|weak residual| of omega-sample `index` of a triple against one test function at grid time t <= tau."""
    sample = triple.samples[index]
    grid = triple.grid
    if t > sample.tau + 1e-12:
        raise ValueError('t={} beyond the stopping time {}'.format(t, sample.tau))
    bank = phi if isinstance(phi, TestFunctionBank) else _single(grid, phi)
    U = triple.drift.shifted(sample.frozen_path)
    series = weak_residual_series(sample.rho, U, sample.R, bank, triple.diffusion)
    return float(np.abs(series[grid.time_index(t)]).max())


class _SingleBank(TestFunctionBank):

    def __init__(self, grid, function):
        self.grid = grid
        self.functions = [function]


def _single(grid, phi):
    if isinstance(phi, TestFunction):
        return _SingleBank(grid, phi)
    f = phi if isinstance(phi, sg.ScalarField) else sg.ScalarField(grid, phi)
    return _SingleBank(grid, TestFunction('phi', f.values, sg.gradient(f).values, sg.laplacian(f).values))


def triple_residuals(triple, bank, index=None):
    """Max over bank and t <= tau of the continuity-defect residual, per omega-sample."""
    out = []
    indices = range(len(triple.samples)) if index is None else [index]
    for i in indices:
        sample = triple.samples[i]
        series = weak_residual_series(sample.rho, triple.drift.shifted(sample.frozen_path), sample.R,
                                      bank, triple.diffusion)
        out.append(float(np.abs(series[:sample.stop.index + 1]).max()))
    return out


def ste_residual_series(rho, u, path, bank, diffusion=False):
    """
    Ito-form weak residual of d rho + u . grad rho dt + grad rho o dB = 0 (+ lap rho dt with diffusion):

        int rho(t) phi - int rho(0) phi - int_0^t int rho u . grad phi
            - sum_i int_0^t (int rho d_i phi) dB^i - (1/2) int_0^t int rho lap phi

    with the stochastic integral as a left-point sum on the grid.
    """
    _check_grid(rho, u)
    grid = rho.grid
    values = path.values if hasattr(path, 'values') else np.asarray(path)
    if values.shape[0] != grid.n_t:
        raise GridMismatchError('path has {} samples, grid {}'.format(values.shape[0], grid.n_t))
    grads = bank.stacked('grad')
    mass = _pair(rho.samples, bank.stacked('phi'), grid)
    transport = _pair(rho.samples[:, None] * u.samples, grads, grid)
    heat = (1.5 if diffusion else 0.5) * _pair(rho.samples, bank.stacked('lap'), grid)
    moments = np.stack([_pair(rho.samples, grads[:, i], grid) for i in range(grid.d)], axis=-1)
    increments = np.diff(values, axis=0)
    ito = np.concatenate([np.zeros((1, len(bank))),
                          np.cumsum(np.einsum('tmi,ti->tm', moments[:-1], increments), axis=0)])
    drift = cumulative_trapezoid(transport + heat, dx=grid.dt, axis=0, initial=0.)
    return mass - mass[0] - drift - ito


def ste_weak_residual(rho_shifted, u, path, phi, t, diffusion=False):
    """|Ito weak residual| at grid time t; rho_shifted is rho~ o Psi^-1 on the grid, u the unshifted drift."""
    grid = rho_shifted.grid
    bank = phi if isinstance(phi, TestFunctionBank) else _single(grid, phi)
    series = ste_residual_series(rho_shifted, u, path, bank, diffusion)
    return float(np.abs(series[grid.time_index(t)]).max())


def momentum_distance(before, after, index=0):
    """max_{t <= tau} ||rho_1 u_1(Psi) - rho_0 u_0(Psi)||_{L^1} for omega-sample `index`."""
    if before.grid != after.grid:
        raise GridMismatchError('triples live on different grids')
    old, new = before.samples[index], after.samples[index]
    grid = before.grid
    U0 = before.drift.shifted(old.frozen_path)
    U1 = after.drift.shifted(new.frozen_path)
    diff = new.rho.samples[:, None] * U1.samples - old.rho.samples[:, None] * U0.samples
    norms = sg.lebesgue_norm_values(diff, grid, 1., rank=1)
    return float(np.max(norms[:new.stop.index + 1]))


def interpolation_ratio(f, theta, q):
    """||f||_{W^{theta,q}} / (||f||_{L^q}^(1-theta) ||f||_{W^{1,q}}^theta)."""
    denominator = sg.lebesgue_norm(f, q) ** (1. - theta) * sg.sobolev_norm(f, 1., q) ** theta
    return sg.sobolev_norm(f, theta, q) / denominator


def interpolation_check(grid, theta, q, n_fields=100, bandwidth=4, seed=0, fields=None):
    """
    Empirical constant of ||f||_{W^{theta,q}} <= C ||f||_{L^q}^(1-theta) ||f||_{W^{1,q}}^theta over random
    band-limited fields, with the same maximum over the first half of the ensemble for stability.
    """
    if not 1. < q < np.inf:
        raise UnsupportedExponentError('interpolation needs q in (1, inf), got {}'.format(q))
    if not 0. <= theta <= 1.:
        raise UnsupportedExponentError('theta must lie in [0, 1], got {}'.format(theta))
    if fields is None:
        rng = np.random.default_rng(seed)
        fields = [sg.random_field(grid, bandwidth, rng) for _ in range(n_fields)]
    meter = AverageMeter('interpolation', ':.6f')
    half = AverageMeter('interpolation_half', ':.6f')
    for i, f in enumerate(fields):
        ratio = interpolation_ratio(f, theta, q)
        meter.update(ratio)
        if i < max(1, len(fields) // 2):
            half.update(ratio)
    C = meter.max
    drift = abs(C - half.max) / C if C > 0. else 0.
    logger.info('interpolation theta=%.2f q=%.2f: C=%.6f over %d fields', theta, q, C, meter.count)
    return dict(theta=theta, q=q, C=C, C_half=half.max, mean=meter.avg, n_fields=meter.count,
                relative_change=drift, stable=bool(drift <= 0.05), finite=bool(np.isfinite(C)))


def shifted_profile(g, path, grid):
    """rho(t, x) = g(x - B(t)) on the time grid."""
    return sg.TimeField(grid, np.stack([sg.translate(g, path.values[i]).values for i in range(grid.n_t)]))


def ito_refinement(n, d, n_t, strides=(8, 4, 2, 1), n_paths=32, seed=0, bandwidth=2):
    """
    Ito-sum discretisation error of the closed-form solution g(x - B(t)) with u = 0 against time step:
    one fine path per seed, subsampled by each stride. Returns the mean error per level and a power fit.
    """
    fine_grid = sg.GridSpec(d, n, n_t)
    g = sg.random_field(fine_grid, bandwidth, np.random.default_rng(seed))
    rows = []
    for stride in strides:
        if (n_t - 1) % stride:
            raise ValueError('stride {} does not divide {} steps'.format(stride, n_t - 1))
        grid = sg.GridSpec(d, n, (n_t - 1) // stride + 1)
        bank = TestFunctionBank(grid, bump=False)
        g_level = sg.ScalarField(grid, g.values)
        zero = sg.TimeField.zeros(grid, rank=1)
        meter = AverageMeter('stride{}'.format(stride))
        for k in range(n_paths):
            fine = sample_path(seed + 1 + k, n_t, d)
            path = BrownianPath(fine.seed, fine.values[::stride])
            series = ste_residual_series(shifted_profile(g_level, path, grid), zero, path, bank)
            meter.update(np.abs(series[-1]).max())
        rows.append(dict(stride=stride, dt=grid.dt, n_t=grid.n_t, mean_error=meter.avg, max_error=meter.max))
    frame = pd.DataFrame(rows)
    fit = fit_power_law(frame['dt'].values, frame['mean_error'].values, name='ito_refinement')
    return dict(frame=frame, fit=fit, predicted=0.5)


def nonuniqueness_exhibit(trajectory, p, bank=None):
    """
    Certificate for the pair (rho = rho~ o Psi^-1, 0) sharing the deterministic drift: STE residuals of both,
    ||rho(1)||_{L^p} on paths that never stopped, rho(0) and the momentum size.
    """
    final = trajectory.final
    grid = final.grid
    bank = bank or TestFunctionBank(grid)
    u = final.drift.field()
    zero = sg.TimeField.zeros(grid)
    budget = float(sum(trajectory.deltas[:len(trajectory.triples) - 1]))
    residual = AverageMeter('ste_residual', ':.4e')
    paths = []
    for sample in final.samples:
        frozen = sample.frozen_path
        rho = shift_by_path(sample.rho, frozen, sign=-1)
        series = np.abs(ste_residual_series(rho, u, frozen, bank, final.diffusion)[:sample.stop.index + 1]).max()
        zero_series = np.abs(ste_residual_series(zero, u, frozen, bank, final.diffusion)).max()
        momentum = sg.lebesgue_norm_values(rho.samples[:, None] * u.samples, grid, 1., rank=1)
        residual.update(series)
        paths.append(dict(seed=sample.path.seed, tau=sample.tau, survives=sample.stop.survives,
                          ste_residual=float(series), zero_residual=float(zero_series),
                          rho_initial=float(np.abs(rho.samples[0]).max()),
                          rho_final=float(sg.lebesgue_norm_values(rho.samples[-1], grid, p))
                          if sample.stop.survives else None,
                          momentum=float(momentum[:sample.stop.index + 1].max())))
    survivors = [row for row in paths if row['survives']]
    final_norms = [row['rho_final'] for row in survivors]
    certificate = dict(
        stages=len(trajectory.triples) - 1, delta_sum=budget, paths=paths,
        survivor_fraction=len(survivors) / float(len(paths)),
        inconclusive=not survivors,
        rho_final_min=min(final_norms) if final_norms else None,
        nonvanishing=bool(final_norms and min(final_norms) >= 1. - budget - 1e-8),
        zero_initial=bool(max(row['rho_initial'] for row in paths) <= 1e-10),
        zero_solution_residual=max(row['zero_residual'] for row in paths),
        momentum_finite=bool(all(np.isfinite(row['momentum']) for row in paths)),
        ste_residual=residual.as_dict(),
        stage_residuals=stage_ste_residuals(trajectory, bank))
    if certificate['inconclusive']:
        logger.warning('no path reached tau = 1; raise the ensemble size or L')
    return certificate


def stage_ste_residuals(trajectory, bank):
    """Ensemble mean of the sup STE residual per stage, against ||R_n|| + dt^(1/2) with one fitted constant."""
    rows = []
    for triple in trajectory.triples:
        u = triple.drift.field()
        meter = AverageMeter('stage{}'.format(triple.stage))
        for sample in triple.samples:
            rho = shift_by_path(sample.rho, sample.frozen_path, sign=-1)
            series = ste_residual_series(rho, u, sample.frozen_path, bank, triple.diffusion)
            meter.update(np.abs(series[:sample.stop.index + 1]).max())
        scale = triple.R_norm() + np.sqrt(triple.grid.dt)
        rows.append(dict(stage=triple.stage, mean=meter.avg, max=meter.max, R_norm=triple.R_norm(), scale=scale))
    C = max(row['max'] / row['scale'] for row in rows)
    means = [row['mean'] for row in rows]
    return dict(rows=rows, C=C, decreasing=bool(all(b <= a for a, b in zip(means, means[1:]))))
