"""
One convex-integration stage for the continuity-defect equation

    d_t rho + div(rho u(Psi)) = -div R,        Psi(t, x) = (t, x + B(t)),

and the recursion that chains stages. A stage mollifies (rho_0, R_0) at scale eps, adds the density
perturbations theta + theta_c + q + q_c built from R_eps and the Mikado blocks evaluated at
x + B_ell(t), adds the deterministic field w + w_c to the drift, and writes the new defect R_1 as a
sum of named terms. Every omega-sample of the ensemble is processed independently; the drift is
shared.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.integrate import cumulative_trapezoid

from construction import spectral_grid as sg
from construction.antidivergence import improved_antidiv, std_antidiv_values
from construction.brownian import BrownianPath, StoppingData, mollify_path
from construction.errors import ConsistencyError, InvalidConfigurationError, MeanViolationError, ResolutionError
from construction.mikado_blocks import BlobProfile, MikadoFamily, check_stage_resolution
from construction.parameters import (Exponents, StageParams, check_parameters, choose_exponent_s,
                                     choose_kappa, choose_parameters, defect_exponents, manual_exponents,
                                     realise)
from utils import constant
from utils.average_meter import meters
from utils.common import fit_power_law, geometric_ladder

logger = logging.getLogger(__name__)

__all__ = ['Exponents', 'StageParams', 'check_parameters', 'choose_exponent_s', 'choose_kappa',
           'choose_parameters', 'defect_exponents', 'Drift', 'Sample', 'StageTriple', 'StageConfig',
           'initial_stage', 'build_perturbations', 'assemble_new_solution', 'compute_defects',
           'select_eps', 'run_stage', 'run_iteration', 'perturbation_probe', 'defect_exponent_probe',
           'diffusion_mode']

RAMP = (1. / 3., 2. / 3.)
DELTA_BUDGET = 1. / 6.
BOOKKEEPING_TOL = 1e-3


# drift and triples


class Drift(object):
    """Deterministic u = sum over stages of (w + w_c), evaluated in closed form at x + shift."""

    def __init__(self, grid, families=()):
        self.grid = grid
        self.families = tuple(families)

    def __len__(self):
        return len(self.families)

    def evaluate(self, t, shift=None):
        out = np.zeros((self.grid.d,) + self.grid.shape)
        for family in self.families:
            out += family.velocity(t, shift).values
        return sg.VectorField(self.grid, out)

    def shifted(self, shifts):
        """u(t, x + shift(t)) on the time grid; shifts is a path or an (n_t, d) array."""
        if not self.families:
            return sg.TimeField.zeros(self.grid, rank=1)
        values = shifts.values if hasattr(shifts, 'values') else np.asarray(shifts)
        return sg.TimeField(self.grid, np.stack([self.evaluate(t, values[i]).values
                                                 for i, t in enumerate(self.grid.times)]))

    def field(self):
        if not self.families:
            return sg.TimeField.zeros(self.grid, rank=1)
        return sg.TimeField(self.grid, evaluator=self.evaluate)

    def extended(self, family):
        return Drift(self.grid, self.families + (family,))


@dataclass(eq=False)
class Sample:
    """The omega-dependent part of a triple: path, stopping data, density and defect."""
    path: BrownianPath
    stop: StoppingData
    rho: sg.TimeField
    R: sg.TimeField

    @property
    def tau(self):
        return self.stop.tau

    @cached_property
    def frozen_path(self):
        return self.path.truncated(self.stop.index)


@dataclass(eq=False)
class StageTriple:
    grid: sg.GridSpec
    drift: Drift
    samples: list
    diffusion: bool = False
    stage: int = 0

    @property
    def rho(self):
        return [s.rho for s in self.samples]

    @property
    def R(self):
        return [s.R for s in self.samples]

    @property
    def paths(self):
        return [s.path for s in self.samples]

    @property
    def taus(self):
        return [s.tau for s in self.samples]

    def R_norm(self):
        """||R||_{C_tau L^1}, max over the ensemble."""
        return max(s.R.norm(1., s.tau) for s in self.samples)

    def rho_norm(self, p):
        return max(s.rho.norm(p, s.tau) for s in self.samples)

    def shifted_velocity(self, index):
        sample = self.samples[index]
        return self.drift.shifted(sample.frozen_path)


def _single_sample_ensemble(grid):
    path = BrownianPath.zero(grid.n_t, grid.d)
    return [(path, StoppingData(0., np.inf, 1., grid.n_t - 1))]


# initial stage


def ramp_window(grid):
    """The ramp interval snapped inward to grid times."""
    a = np.ceil(RAMP[0] / grid.dt - 1e-9) * grid.dt
    b = np.floor(RAMP[1] / grid.dt + 1e-9) * grid.dt
    if b - a < 3. * grid.dt:
        raise ResolutionError('ramp [{:.3f}, {:.3f}] spans fewer than 3 time steps'.format(a, b))
    return a, b


def ramp(t, a, b):
    """chi and its derivative: chi' ~ sin^4 on [a, b], so chi = 0 before a and chi = 1 after b."""
    u = np.clip((np.asarray(t, dtype=float) - a) / (b - a), 0., 1.)
    primitive = 3. * u / 8. - np.sin(2. * np.pi * u) / (4. * np.pi) + np.sin(4. * np.pi * u) / (32. * np.pi)
    chi = primitive / (3. / 8.)
    dchi = np.sin(np.pi * u) ** 4 / ((b - a) * 3. / 8.)
    return chi, dchi


def grid_ramp(grid, a, b):
    """
    ramp on the time grid with chi rebuilt as the trapezoid primitive of chi', so that chi and chi'
    agree under the quadrature the weak residual uses. The trapezoid rule integrates sin^4 exactly
    over three or more steps, so chi still ends at 1 up to round-off.
    """
    t = grid.times
    _, dchi = ramp(t, a, b)
    dchi = np.where((t > a) & (t < b), dchi, 0.)
    chi = cumulative_trapezoid(dchi, dx=grid.dt, initial=0.)
    return chi / chi[-1], dchi / chi[-1]


def initial_profile(grid, p):
    """Smooth mean-zero Phi with ||Phi||_{L^p} = 1 on the grid."""
    x = grid.coords
    values = np.sin(2. * np.pi * x[0]) + 0.5 * np.cos(2. * np.pi * (x[0] + x[1]))
    return sg.ScalarField(grid, values / sg.lebesgue_norm_values(values, grid, p))


def initial_stage(p, grid, ensemble=None, diffusion=False):
    """rho_0 = chi(t) Phi(x), u_0 = 0, R_0 = -chi'(t) div^-1 Phi (+ chi grad Phi with diffusion)."""
    phi = initial_profile(grid, p)
    a, b = ramp_window(grid)
    chi, dchi = grid_ramp(grid, a, b)
    expand = (slice(None),) + (None,) * grid.d
    rho = sg.TimeField(grid, chi[expand] * phi.values[None])
    anti = std_antidiv_values(phi.values, grid)
    R = -dchi[(slice(None), None) + (None,) * grid.d] * anti[None]
    if diffusion:
        R = R + chi[(slice(None), None) + (None,) * grid.d] * sg.gradient(phi).values[None]
    R = sg.TimeField(grid, R)
    ensemble = ensemble or _single_sample_ensemble(grid)
    samples = [Sample(path, stop, rho, R) for path, stop in ensemble]
    logger.info('initial stage on %s: ramp [%.4f, %.4f], %d samples', grid.describe(), a, b, len(samples))
    return StageTriple(grid, Drift(grid), samples, diffusion=diffusion, stage=0)


# mollification


@dataclass(eq=False)
class Mollified:
    rho: sg.TimeField
    R: sg.TimeField
    dR: sg.TimeField
    flux: sg.TimeField
    U0: sg.TimeField
    eps: float


def mollify_sample(sample, U0, eps, kernel=None):
    """(rho_eps, R_eps, d_t R_eps, (rho_0 u_0(Psi))_eps), inputs held constant after tau."""
    kernel = kernel or sg.MollifierKernel()
    grid = sample.rho.grid
    tau = sample.tau
    rho = sg.mollify_space_time(sample.rho, eps, kernel, tau)
    R, dR = sg.mollify_space_time(sample.R, eps, kernel, tau, derivative=True)
    flux = sg.TimeField(grid, sample.rho.samples[:, None] * U0.samples)
    return Mollified(rho, R, dR, sg.mollify_space_time(flux, eps, kernel, tau), U0, eps)


def mollification_errors(sample, mol, p):
    """The three quantities eps must push below delta / 2."""
    tau = sample.tau
    drift = mol.rho - sample.rho
    commutator = mol.flux - sg.TimeField(mol.U0.grid, mol.rho.samples[:, None] * mol.U0.samples)
    transport = sg.TimeField(mol.U0.grid, drift.samples[:, None] * mol.U0.samples)
    return dict(rho_eps=drift.norm(p, tau), R_com=commutator.norm(1., tau), u0_transport=transport.norm(1., tau))


def _eps_sample_errors(sample, U0, eps, kernel, p):
    return mollification_errors(sample, mollify_sample(sample, U0, eps, kernel), p)


def eps_step_range(grid, eps_max):
    lo = max(constant.MIN_KERNEL_STEPS, int(np.ceil(2. * grid.h / grid.dt - 1e-9)))
    hi = max(lo, int(np.floor(eps_max / grid.dt + 1e-9)))
    return lo, hi


def select_eps(triple, U0s, delta, p, kernel=None, eps_max=0.25, n_jobs=1):
    """
    Largest grid-snapped eps whose mollification drift, commutator and transported drift all stay
    below delta / 2 on every sample. Bisection on the number of kernel steps.
    """
    kernel = kernel or sg.MollifierKernel()
    grid = triple.grid
    lo, hi = eps_step_range(grid, eps_max)

    def errors(steps):
        rows = Parallel(n_jobs=n_jobs)(delayed(_eps_sample_errors)(s, U0, steps * grid.dt, kernel, p)
                                       for s, U0 in zip(triple.samples, U0s))
        return {k: max(row[k] for row in rows) for k in rows[0]}

    def ok(errs):
        return all(v <= delta / 2. for v in errs.values())

    best = errors(hi)
    if ok(best):
        return hi * grid.dt, best
    best = errors(lo)
    if not ok(best):
        raise ResolutionError('mollification at the smallest resolved eps={:.4f} misses delta/2={:.3e}: {}'.format(
            lo * grid.dt, delta / 2., best))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        errs = errors(mid)
        if ok(errs):
            lo, best = mid, errs
        else:
            hi = mid
    logger.debug('eps=%.4f (%d steps), errors %s', lo * grid.dt, lo, best)
    return lo * grid.dt, best


# perturbations


@dataclass(eq=False)
class Perturbations:
    theta: sg.TimeField
    theta_c: np.ndarray
    q: sg.TimeField
    q_c: np.ndarray
    w: sg.TimeField
    w_c: sg.TimeField

    @property
    def density(self):
        expand = (slice(None),) + (None,) * self.theta.grid.d
        return self.theta + self.q + (self.theta_c + self.q_c)[expand]


def _perturbation_slice(R_eps, snaps):
    theta = sum(R_eps[j] * snap.theta.values for j, snap in enumerate(snaps))
    q = sum(R_eps[j] * snap.Q.values for j, snap in enumerate(snaps))
    return theta, q


def build_perturbations(R_eps, family, path_l):
    """theta = sum_j R_eps^j Theta^j(Psi_ell), q likewise with Q^j; the correctors remove the means."""
    grid = R_eps.grid
    if R_eps.rank != 1:
        raise ValueError('R_eps must be a vector time field')
    theta, q, w, w_c = [], [], [], []
    for i, t in enumerate(grid.times):
        th, qq = _perturbation_slice(R_eps.samples[i], family.at(t, path_l.values[i]))
        theta.append(th)
        q.append(qq)
        snaps = family.at(t)
        w.append(sum(s.W.values for s in snaps))
        w_c.append(sum(s.W_corr.values for s in snaps))
    theta = sg.TimeField(grid, np.stack(theta))
    q = sg.TimeField(grid, np.stack(q))
    return Perturbations(theta, -theta.mean(), q, -q.mean(), sg.TimeField(grid, np.stack(w)),
                         sg.TimeField(grid, np.stack(w_c)))


def assemble_new_solution(rho_eps, drift, perturbations, family):
    """rho_1 = rho_eps + theta + theta_c + q + q_c and u_1 = u_0 + w + w_c."""
    return rho_eps + perturbations.density, drift.extended(family)


# defects


@dataclass(eq=False)
class DefectResult:
    rho: sg.TimeField
    R: sg.TimeField
    norms: dict
    series: dict
    terms: dict = None


def _antidiv(values, grid):
    return std_antidiv_values(values - values.mean(), grid)


def _improved(f, g, grid):
    try:
        return improved_antidiv(sg.ScalarField(grid, f), sg.ScalarField(grid, g), 1, guard=False, close=True,
                                closure_tol=constant.CLOSURE_TOL).values
    except MeanViolationError as err:
        raise ConsistencyError('mean-zero bookkeeping failed: {}'.format(err))


def _defect_slice(grid, sigma, snaps_l, snaps_b, rho_in, rho_e, R_e, dR_e, flux_e, u0, dBl, diffusion):
    d = grid.d
    vector = (slice(None),) + (None,) * d
    theta, q = _perturbation_slice(R_e, snaps_l)
    P = theta + q - theta.mean() - q.mean()
    W_l = sum(s.W.values for s in snaps_l)
    W_b = sum(s.W.values for s in snaps_b)
    Wc_b = sum(s.W_corr.values for s in snaps_b)
    Th = [s.theta.values for s in snaps_l]
    Q = [s.Q.values for s in snaps_l]
    A = [s.A_N.values for s in snaps_l]
    grad_R = [sg.gradient(sg.ScalarField(grid, R_e[j])).values for j in range(d)]
    along_path = [np.tensordot(dBl, grad_R[j], axes=1) for j in range(d)]
    dB = dBl[vector]

    quadr_1 = np.zeros((d,) + grid.shape)
    quadr_2 = np.zeros((d,) + grid.shape)
    for j, snap in enumerate(snaps_l):
        bp = snap.blob_product.values
        m_j = bp.mean()
        quadr_1 -= _improved(grad_R[j][j] * bp, snap.psi_sq_minus_one.values, grid)
        quadr_2 -= _improved(grad_R[j][j], bp - m_j, grid)
        quadr_2[j] -= (m_j - 1.) * R_e[j]

    terms = dict(
        R_com=flux_e - rho_e[None] * u0,
        R_quadr_1=quadr_1,
        R_quadr_2=quadr_2,
        R_time_1=-_antidiv(sum(dR_e[j] * Q[j] for j in range(d)), grid),
        R_time_2=sum(R_e[j][None] * A[j] for j in range(d)),
        R_time_3=-_antidiv(sum(np.sum(grad_R[j] * A[j], axis=0) for j in range(d)), grid),
        R_sto_1=-theta[None] * (W_b - W_l),
        R_sto_2=-q[None] * dB,
        R_sto_3=_antidiv(sum(along_path[j] * Q[j] for j in range(d)), grid),
        R_sto_4=-theta[None] * dB,
        R_sto_5=_antidiv(sum(along_path[j] * Th[j] for j in range(d)), grid),
        R_lin=-_antidiv(sum(dR_e[j] * Th[j] for j in range(d)), grid) - rho_e[None] * W_b - theta[None] * u0,
        R_q=-q[None] * (u0 + W_b),
        R_corr=-(rho_e + theta + q)[None] * Wc_b)
    if diffusion:
        terms[constant.DIFFUSION_DEFECT] = sg.gradient(sg.ScalarField(grid, theta + q)).values
    R1 = sum(terms.values())
    rho1 = rho_e + P
    U1 = u0 + W_b + Wc_b

    # strong form of the new equation minus the mollified one
    def transported(block):
        g = sg.gradient(sg.ScalarField(grid, block)).values
        return g, np.tensordot(dBl, g, axes=1)

    dP = 0.
    for j in range(d):
        for block in (Th[j], Q[j]):
            g, along = transported(block)
            dP = dP + dR_e[j] * block + R_e[j] * (-sigma * g[j] + along)
    dP = dP - np.mean(dP)
    div_flux = sg.divergence_values(rho1[None] * U1 - flux_e, grid)
    div_R = sg.divergence_values(R1 - R_e, grid)
    residual = dP + div_flux + div_R
    if diffusion:
        residual = residual - sg.laplacian(sg.ScalarField(grid, theta + q)).values
    scale = max(np.abs(dP).max(), np.abs(div_flux).max(), np.abs(div_R).max())
    bookkeeping = float(np.abs(residual).max() / scale) if scale > 0. else float(np.abs(residual).max())

    groups = dict(
        theta_w=theta[None] * W_b,
        mollification_u0=(rho_e - rho_in)[None] * u0,
        perturbation_u0=P[None] * u0,
        remainder_w=(rho_e + q - theta.mean() - q.mean())[None] * W_b,
        corrector=rho1[None] * Wc_b)
    momentum = rho1[None] * U1 - rho_in[None] * u0
    return dict(terms=terms, R1=R1, rho1=rho1, P=P, theta=theta, q=q, momentum=momentum,
                groups=groups, bookkeeping=bookkeeping)


def compute_defects(sample, mol, family, path_l, p, diffusion=False, keep_terms=False):
    """R_1 as the sum of its named terms, with per-time norms of every term and of the contract quantities."""
    grid = sample.rho.grid
    s = family.params.s
    sigma = family.params.sigma
    names = list(constant.DEFECT_NAMES) + ([constant.DIFFUSION_DEFECT] if diffusion else [])
    norms = {name: np.zeros(grid.n_t) for name in names}
    series = {name: np.zeros(grid.n_t) for name in (
        'rho_dist', 'rho_mollification', 'rho_perturbation', 'momentum', 'theta_Ls', 'theta_L1', 'q_L1',
        'bookkeeping', 'theta_w', 'mollification_u0', 'perturbation_u0', 'remainder_w', 'corrector')}
    rho1 = np.empty((grid.n_t,) + grid.shape)
    R1 = np.empty((grid.n_t, grid.d) + grid.shape)
    kept = {name: np.empty((grid.n_t, grid.d) + grid.shape) for name in names} if keep_terms else None
    path_b = sample.frozen_path
    for i, t in enumerate(grid.times):
        out = _defect_slice(grid, sigma, family.at(t, path_l.values[i]), family.at(t, path_b.values[i]),
                            sample.rho.samples[i], mol.rho.samples[i], mol.R.samples[i], mol.dR.samples[i],
                            mol.flux.samples[i], mol.U0.samples[i], path_l.derivative[i], diffusion)
        rho1[i] = out['rho1']
        R1[i] = out['R1']
        for name in names:
            norms[name][i] = sg.lebesgue_norm_values(out['terms'][name], grid, 1., rank=1)
            if keep_terms:
                kept[name][i] = out['terms'][name]
        series['rho_dist'][i] = sg.lebesgue_norm_values(out['rho1'] - sample.rho.samples[i], grid, p)
        series['rho_mollification'][i] = sg.lebesgue_norm_values(mol.rho.samples[i] - sample.rho.samples[i], grid, p)
        series['rho_perturbation'][i] = sg.lebesgue_norm_values(out['P'], grid, p)
        series['momentum'][i] = sg.lebesgue_norm_values(out['momentum'], grid, 1., rank=1)
        series['theta_Ls'][i] = sg.lebesgue_norm_values(out['theta'], grid, s)
        series['theta_L1'][i] = sg.lebesgue_norm_values(out['theta'], grid, 1.)
        series['q_L1'][i] = sg.lebesgue_norm_values(out['q'], grid, 1.)
        series['bookkeeping'][i] = out['bookkeeping']
        for name, values in out['groups'].items():
            series[name][i] = sg.lebesgue_norm_values(values, grid, 1., rank=1)
    terms = {name: sg.TimeField(grid, values) for name, values in kept.items()} if keep_terms else None
    return DefectResult(sg.TimeField(grid, rho1), sg.TimeField(grid, R1), norms, series, terms)


def diffusion_mode(triple, flag=True):
    """
    The same triple read as a solution of d_t rho + div(rho u(Psi)) - lap rho = -div R, or back with
    flag=False. Samples and drift are shared, not copied. Stages built from a diffusion triple carry
    the extra defect R_diff = grad(theta + q).
    """
    return replace(triple, diffusion=bool(flag))


# stage


@dataclass
class StageConfig:
    p: float
    p_tilde: float
    theta: float
    s: float
    kappa: float
    exponents: Exponents
    manual: bool = False
    lam_min: int = 2
    lam_max: int = 64
    n_max: int = 3
    eps_max: float = 0.25
    momentum_constant: float = None
    profile: BlobProfile = None
    kernel: sg.MollifierKernel = field(default_factory=sg.MollifierKernel)
    n_jobs: int = 1
    keep_terms: bool = False

    @staticmethod
    def from_problem(p, p_tilde, theta, d, manual=None, **kwargs):
        """s and kappa by the midpoint rules; exponents chosen, or taken from `manual` (alpha, beta, gamma, zeta)."""
        s = choose_exponent_s(p, p_tilde, theta, d)
        kappa = choose_kappa(d, s / (s - 1.))
        if manual is not None:
            exponents = manual_exponents(*manual)
        else:
            exponents = choose_parameters(p, p_tilde, theta, d, s, kappa)
        return StageConfig(p=p, p_tilde=p_tilde, theta=theta, s=s, kappa=kappa, exponents=exponents,
                           manual=manual is not None, **kwargs)


def _vanishing_index(sample):
    """Last grid index up to which rho and R vanish identically, or -1."""
    zero = np.all(sample.rho.samples.reshape(sample.rho.samples.shape[0], -1) == 0., axis=1) & \
        np.all(sample.R.samples.reshape(sample.R.samples.shape[0], -1) == 0., axis=1)
    if not zero[0]:
        return -1
    return int(np.argmin(zero)) - 1 if not zero.all() else len(zero) - 1


def vanishing_window(before, after, delta):
    """rho_1, R_1 = 0 on [0, min(tau, t_0 - delta)] whenever rho_0, R_0 = 0 on [0, t_0]."""
    grid = before.grid
    ok = True
    ends = []
    for old, new in zip(before.samples, after.samples):
        k = _vanishing_index(old)
        if k < 0:
            ends.append(None)
            continue
        end = min(old.tau, grid.times[k] - delta)
        ends.append(float(end))
        if end < 0.:
            continue
        stop = grid.time_index(end)
        scale = max(1., np.abs(new.rho.samples).max(), np.abs(new.R.samples).max())
        window = max(np.abs(new.rho.samples[:stop + 1]).max(), np.abs(new.R.samples[:stop + 1]).max())
        ok = ok and window <= constant.ROUNDOFF_TOL * scale
    return ok, ends


def velocity_report(drift, family, theta, p_tilde):
    """max_t ||w + w_c||_{W^{theta,p~}} and max_t |div u_1|."""
    sob, div = 0., 0.
    for t in drift.grid.times:
        sob = max(sob, sg.sobolev_norm(family.velocity(t), theta, p_tilde))
        div = max(div, float(np.abs(sg.divergence(drift.evaluate(t)).values).max()))
    return sob, div


def _ctau(series, sample):
    return float(np.max(series[:sample.stop.index + 1]))


def build_stage(triple, params, mollified, config):
    """
    Blocks, perturbations and defects for every sample at fixed StageParams. Raises ResolutionError
    when the blocks alias or the new triple misses its equation by more than BOOKKEEPING_TOL.
    """
    grid = triple.grid
    profile = config.profile or BlobProfile(grid.d)
    check_stage_resolution(grid, params.block, profile)
    family = MikadoFamily(grid, params.block, profile)
    path_ls = [mollify_path(s.frozen_path, params.ell, config.kernel) for s in triple.samples]
    results = Parallel(n_jobs=config.n_jobs)(
        delayed(compute_defects)(s, mol, family, pl, config.p, triple.diffusion, config.keep_terms)
        for s, mol, pl in zip(triple.samples, mollified, path_ls))
    bookkeeping = max(_ctau(r.series['bookkeeping'], s) for s, r in zip(triple.samples, results))
    if bookkeeping > BOOKKEEPING_TOL:
        raise ResolutionError('bookkeeping residual {:.2e} at lam={} exceeds {:.0e}'.format(
            bookkeeping, params.lam, BOOKKEEPING_TOL))
    drift = triple.drift.extended(family)
    samples = [Sample(s.path, s.stop, r.rho, r.R) for s, r in zip(triple.samples, results)]
    after = StageTriple(grid, drift, samples, diffusion=triple.diffusion, stage=triple.stage + 1)
    return after, family, results


def stage_report(triple, after, family, results, params, config, delta, eps_errors):
    names = list(constant.DEFECT_NAMES) + ([constant.DIFFUSION_DEFECT] if triple.diffusion else [])
    term_meters = meters(names)
    series_meters = meters(results[0].series.keys())
    for sample, result in zip(triple.samples, results):
        for name in names:
            term_meters[name].update(_ctau(result.norms[name], sample))
        for name, values in result.series.items():
            series_meters[name].update(_ctau(values, sample))
    R0 = triple.R_norm()
    u_sob, div_u = velocity_report(after.drift, family, config.theta, config.p_tilde)
    contract = dict(rho_dist=series_meters['rho_dist'].max, momentum=series_meters['momentum'].max,
                    u_sobolev=u_sob, R_norm=after.R_norm())
    M = config.momentum_constant
    bounds = dict(rho_dist=delta, momentum=None if M is None else M * R0 + delta, u_sobolev=delta, R_norm=delta)
    vanishing, window = vanishing_window(triple, after, delta)
    passed = {name: bool(bounds[name] is None or contract[name] <= bounds[name]) for name in constant.CONTRACT_NAMES}
    passed['vanishing'] = bool(vanishing)
    passed['bookkeeping'] = bool(series_meters['bookkeeping'].max <= BOOKKEEPING_TOL)
    exponents = config.exponents
    return dict(
        stage=after.stage, delta=delta, params=params.as_dict(), manual_exponents=config.manual,
        admissibility=check_parameters(config.p, config.p_tilde, config.theta, triple.grid.d, config.s,
                                       config.kappa, exponents),
        N_capped=bool(params.N < exponents.N),
        eps_errors=eps_errors, R0_norm=R0, contract=contract, bounds=bounds, passed=passed,
        passed_all=all(passed.values()), momentum_constant=M,
        decomposition=dict(rho_mollification=series_meters['rho_mollification'].max,
                           rho_perturbation=series_meters['rho_perturbation'].max,
                           momentum_groups={k: series_meters[k].max for k in (
                               'theta_w', 'mollification_u0', 'perturbation_u0', 'remainder_w', 'corrector')}),
        perturbations=dict(theta_Ls=series_meters['theta_Ls'].max, theta_L1=series_meters['theta_L1'].max,
                           q_L1=series_meters['q_L1'].max),
        defects={name: m.max for name, m in term_meters.items()},
        defects_mean={name: m.avg for name, m in term_meters.items()},
        predicted_exponents={name: v for name, v in defect_exponents(
            exponents, triple.grid.d, config.s, config.kappa, params.N).items() if name in names},
        bookkeeping=series_meters['bookkeeping'].max,
        div_u=div_u,
        vanishing_window=window,
        seeds=[s.path.seed for s in triple.samples], taus=triple.taus)


def run_stage(triple, delta, config):
    """
    eps by the delta/2 rule, then lam doubling from lam_min until the four contract bounds hold or the
    grid stops resolving the blocks. Returns the last built triple and its report; with no
    momentum constant configured, M is calibrated on this stage.
    """
    if delta <= 0.:
        raise InvalidConfigurationError('delta', 'delta must be positive, got {}'.format(delta))
    start = time.time()
    grid = triple.grid
    U0s = [triple.shifted_velocity(i) for i in range(len(triple.samples))]
    eps, eps_errors = select_eps(triple, U0s, delta, config.p, config.kernel, config.eps_max, config.n_jobs)
    mollified = [mollify_sample(s, U0, eps, config.kernel) for s, U0 in zip(triple.samples, U0s)]
    timings = dict(mollify=time.time() - start)
    attempts, built = [], None
    for lam in geometric_ladder(config.lam_min, config.lam_max):
        params = realise(lam, config.exponents, config.s, config.kappa, delta, eps, config.n_max)
        try:
            after, family, results = build_stage(triple, params, mollified, config)
        except ResolutionError as err:
            attempts.append(dict(lam=lam, error=str(err)))
            logger.info('stage %d: lam=%d not resolved (%s)', triple.stage + 1, lam, err)
            break
        report = stage_report(triple, after, family, results, params, config, delta, eps_errors)
        attempts.append(dict(lam=lam, passed=report['passed']))
        built = (after, report, results)
        logger.info('stage %d: lam=%d R_norm=%.3e passed=%s', after.stage, lam, report['contract']['R_norm'],
                    report['passed_all'])
        if report['passed_all']:
            break
    if built is None:
        raise ResolutionError('stage {}: no lam in [{}, {}] is resolved on {}: {}'.format(
            triple.stage + 1, config.lam_min, config.lam_max, grid.describe(), attempts[-1]['error']))
    after, report, results = built
    if config.momentum_constant is None:
        R0 = report['R0_norm']
        M = max(report['contract']['momentum'] - delta, 0.) / R0 if R0 > 0. else 0.
        report['momentum_constant'] = M
        report['momentum_calibrated'] = True
        report['bounds']['momentum'] = M * R0 + delta
        report['passed']['momentum'] = bool(report['contract']['momentum'] <= report['bounds']['momentum'])
        report['passed_all'] = all(report['passed'].values())
    else:
        report['momentum_calibrated'] = False
    report['attempts'] = attempts
    timings['total'] = time.time() - start
    report['timings'] = timings
    if config.keep_terms:
        report['terms'] = [r.terms for r in results]
    return after, report


# iteration


@dataclass(eq=False)
class Trajectory:
    triples: list
    reports: list
    deltas: list
    stopped: str = None
    convergence: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.triples[-1]


def convergence_report(triples, deltas, p):
    """Distance of the last density from the first, the nonvanishing certificate and the defect trajectory."""
    first, last = triples[0], triples[-1]
    budget = float(sum(deltas[:len(triples) - 1]))
    drift = max(sg.lebesgue_norm_values(b.rho.samples[:b.stop.index + 1] - a.rho.samples[:b.stop.index + 1],
                                        first.grid, p).max()
                for a, b in zip(first.samples, last.samples))
    survivors = [s for s in last.samples if s.stop.survives]
    final_norms = [float(sg.lebesgue_norm_values(s.rho.samples[-1], last.grid, p)) for s in survivors]
    R_norms = [t.R_norm() for t in triples]
    return dict(stages=len(triples) - 1, delta_sum=budget, rho_drift=float(drift),
                rho_drift_ok=bool(drift <= budget * (1. + 1e-12)), R_norms=R_norms,
                R_decreasing=bool(all(b < a for a, b in zip(R_norms, R_norms[1:]))),
                survivors=len(survivors), final_rho_norms=final_norms,
                nonvanishing=bool(survivors and min(final_norms) >= 1. - budget - constant.IDENTITY_TOL))


def run_iteration(initial, deltas, config, n_stages=None):
    """Chain run_stage over the delta sequence; a stage the grid cannot resolve ends the run early."""
    n_stages = len(deltas) if n_stages is None else n_stages
    deltas = list(deltas)[:n_stages]
    if len(deltas) < n_stages:
        raise InvalidConfigurationError('delta_sum', 'need {} deltas, got {}'.format(n_stages, len(deltas)))
    if sum(deltas) >= DELTA_BUDGET:
        raise InvalidConfigurationError('delta_sum', 'sum of deltas {:.4f} >= 1/6'.format(sum(deltas)))
    triples, reports, stopped = [initial], [], None
    for delta in deltas:
        try:
            after, report = run_stage(triples[-1], delta, config)
        except ResolutionError as err:
            stopped = str(err)
            logger.warning('iteration stopped after %d stages: %s', len(reports), err)
            break
        if config.momentum_constant is None:
            config = replace(config, momentum_constant=report['momentum_constant'])
        triples.append(after)
        reports.append(report)
    trajectory = Trajectory(triples, reports, deltas, stopped)
    trajectory.convergence = convergence_report(triples, deltas, config.p)
    return trajectory


# perturbation estimates


def perturbation_probe(triple, base, sweep, values, eps, ell, config, index=0):
    """
    Perturbation norms of sample `index` across a sweep of one block parameter: ||theta||_{L^s}
    flat in mu, ||theta||_{L^1} ~ mu^(-d/s'), sigma ||q||_{L^1} flat in sigma, and
    ||w + w_c||_{W^{theta,p~}} against (1 + lam mu / nu) mu^(d/s' - d/p~) nu^theta.
    """
    if sweep not in ('mu', 'sigma', 'nu'):
        raise ValueError('cannot sweep {}'.format(sweep))
    grid = triple.grid
    sample = triple.samples[index]
    profile = config.profile or BlobProfile(grid.d)
    mol = mollify_sample(sample, triple.drift.shifted(sample.frozen_path), eps, config.kernel)
    path_l = mollify_path(sample.frozen_path, ell, config.kernel)
    d = grid.d
    rows = []
    for value in values:
        params = base.replace(**{sweep: value})
        family = MikadoFamily(grid, params, profile)
        pert = build_perturbations(mol.R, family, path_l)
        w_norm = sg.sobolev_norm(family.velocity(0.), config.theta, config.p_tilde)
        predicted = (1. + params.ratio) * params.mu ** (d / params.s_prime - d / config.p_tilde) * \
            params.nu ** config.theta
        rows.append(dict(sweep=sweep, value=value, lam=params.lam, mu=params.mu, sigma=params.sigma,
                         nu=params.nu, theta_Ls=pert.theta.norm(params.s, sample.tau),
                         theta_L1=pert.theta.norm(1., sample.tau),
                         q_L1_sigma=pert.q.norm(1., sample.tau) * params.sigma,
                         w_sobolev=w_norm, w_predicted=predicted, w_ratio=w_norm / predicted))
    frame = pd.DataFrame(rows)
    fits = {}
    if len(values) >= 3:
        x = frame['value'].values.astype(float)
        for column in ('theta_Ls', 'theta_L1', 'q_L1_sigma', 'w_ratio'):
            fits[column] = fit_power_law(x, frame[column].values, name='{}_{}'.format(column, sweep))
    return dict(frame=frame, fits=fits, predicted=dict(
        theta_Ls=0., theta_L1=-d / base.s_prime if sweep == 'mu' else 0., q_L1_sigma=0., w_ratio=0.))


def defect_exponent_probe(triple, lams, config, eps, index=0, tol=0.5):
    """
    ||R_name||_{C_tau L^1} of sample `index` across a lam sweep at fixed eps, block parameters realised
    from config.exponents at every lam. Each term is fitted to a power of lam and passes when its slope
    stays below the predicted exponent plus tol. R_com depends on eps only and terms that vanish on
    the sweep are reported as degenerate.
    """
    grid = triple.grid
    sample = triple.samples[index]
    profile = config.profile or BlobProfile(grid.d)
    mol = mollify_sample(sample, triple.shifted_velocity(index), eps, config.kernel)
    names = list(constant.DEFECT_NAMES) + ([constant.DIFFUSION_DEFECT] if triple.diffusion else [])
    rows, N = [], None
    for lam in lams:
        params = realise(lam, config.exponents, config.s, config.kappa, 1., eps, config.n_max)
        check_stage_resolution(grid, params.block, profile)
        N = params.N
        family = MikadoFamily(grid, params.block, profile)
        result = compute_defects(sample, mol, family, mollify_path(sample.frozen_path, params.ell, config.kernel),
                                 config.p, triple.diffusion)
        row = dict(lam=lam, mu=params.mu, sigma=params.sigma, nu=params.nu, ell=params.ell, N=params.N)
        row.update({name: _ctau(result.norms[name], sample) for name in names})
        rows.append(row)
    frame = pd.DataFrame(rows)
    predicted = defect_exponents(config.exponents, grid.d, config.s, config.kappa, N)
    x = frame['lam'].values.astype(float)
    fits, passed = {}, {}
    for name in names:
        fit = fit_power_law(x, frame[name].values, name=name, floor=constant.ROUNDOFF_TOL)
        fits[name] = fit
        if predicted[name] is None or fit.degenerate:
            passed[name] = None
            continue
        passed[name] = bool(fit.exponent <= predicted[name] + tol)
    logger.info('defect exponents over lam=%s: %s', list(lams),
                {name: round(fit.exponent, 3) for name, fit in fits.items() if not fit.degenerate})
    return dict(frame=frame, fits=fits, predicted=predicted, passed=passed, tol=tol,
                passed_all=all(v for v in passed.values() if v is not None))
