"""
Mikado building blocks: concentrated blobs sliced by directional waves and moved along e_j.

For a direction j the blocks at time t are fixed profiles translated by sigma t e_j:

    Theta^j  = (phi^j_mu)_lam(x - sigma t e_j) psi^j_nu(x)
    W^j      = (phit^j_mu)_lam(x - sigma t e_j) psi^j_nu(x) e_j
    Q^j      = sigma^-1 (phi^j_mu phit^j_mu)_lam(x - sigma t e_j) psi^j_nu(x)^2
    W^j + W^{j,corr} = div S,  S = nu^-1 (phit^j_mu)_lam(x - sigma t e_j) (e_j (x) b_nu - b_nu (x) e_j)
    A^j_N    = lam sigma R_N((d_j phi^j_mu)_lam(x - sigma t e_j), psi^j_nu)

Time derivatives are taken as -sigma D_j of the sampled block, D_j the spectral derivative, so the
transport, potential and corrector identities hold to round-off on the grid.
"""
import logging
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from construction import spectral_grid as sg
from construction.antidivergence import closure_defect, improved_antidiv, std_antidiv_centered
from construction.errors import InvalidConfigurationError, ResolutionError
from utils import constant
from utils.common import fit_power_law

logger = logging.getLogger(__name__)

BLOCK_NAMES = ['theta', 'Q', 'W', 'W_corr', 'A_N']


def transverse_axis(j):
    """Coordinate the wave psi^j oscillates along; never j itself."""
    return 1 if j == 0 else 0


@dataclass(frozen=True)
class BlobProfile:
    """Radial bump phi(w) = c cos^power(pi |w - P| / 2r) on B(P, r), P the cell centre, int phi^2 = 1."""
    d: int
    radius: float = 0.125
    power: int = 8

    def __post_init__(self):
        if not 0. < self.radius < 0.5:
            raise InvalidConfigurationError('blob_radius', 'need 0 < r < 1/2, got {}'.format(self.radius))
        if self.power < 2:
            raise InvalidConfigurationError('blob_power', 'need power >= 2, got {}'.format(self.power))

    @cached_property
    def scale(self):
        radial, _ = integrate.quad(lambda rho: np.cos(np.pi * rho / 2.) ** (2 * self.power) * rho ** (self.d - 1),
                                   0., 1., epsabs=1e-14, epsrel=1e-13)
        sphere = 2. * np.pi ** (self.d / 2.) / special.gamma(self.d / 2.)
        return 1. / np.sqrt(sphere * self.radius ** self.d * radial)

    @property
    def centre(self):
        return np.full(self.d, 0.5)

    def shift(self, j):
        out = np.zeros(self.d)
        out[0] = j / float(self.d)
        return out

    def __call__(self, w):
        dist = np.sqrt(np.sum((w - self.centre.reshape((self.d,) + (1,) * (w.ndim - 1))) ** 2, axis=0))
        inside = dist < self.radius
        return np.where(inside, self.scale * np.cos(np.pi * np.minimum(dist, self.radius)
                                                    / (2. * self.radius)) ** self.power, 0.)

    def separation(self, mu, samples=4096):
        """Smallest torus distance between centres of two co-moving tubes, in units of the blob diameter."""
        s = np.arange(samples) / samples
        best = np.inf
        for i in range(self.d):
            for j in range(i + 1, self.d):
                direction = np.zeros(self.d)
                direction[i], direction[j] = 1., -1.
                delta = (self.shift(i) - self.shift(j))[:, None] + s[None] * direction[:, None]
                delta = np.abs(delta - np.round(delta))
                best = min(best, float(np.sqrt(np.sum(delta ** 2, axis=0)).min()))
        return best * mu / (2. * self.radius)

    def check_disjoint(self, mu):
        ratio = self.separation(mu)
        if ratio <= 1.:
            raise InvalidConfigurationError(
                'disjoint_support', 'tubes overlap at mu={} (separation / diameter = {:.3f})'.format(mu, ratio))
        return ratio


@dataclass(frozen=True)
class BlockParams:
    lam: int
    mu: int
    sigma: float
    nu: int
    s: float
    N: int = 1
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        for name in ('lam', 'mu', 'nu', 'N'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidConfigurationError('block_{}'.format(name), 'must be a positive integer, got {}'.format(value))
        if self.nu % self.lam:
            raise InvalidConfigurationError('block_nu', 'nu={} is not a multiple of lam={}'.format(self.nu, self.lam))
        if self.sigma <= 0.:
            raise InvalidConfigurationError('block_sigma', 'sigma must be positive')
        if self.s <= 1.:
            raise InvalidConfigurationError('exponent_s', 's must exceed 1, got {}'.format(self.s))
        if self.strict and self.ratio > 0.5:
            raise InvalidConfigurationError('block_ratio', 'lam mu / nu = {:.3f} > 1/2'.format(self.ratio))

    @property
    def s_prime(self):
        return self.s / (self.s - 1.)

    @property
    def ratio(self):
        return self.lam * self.mu / float(self.nu)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dict(lam=self.lam, mu=self.mu, sigma=self.sigma, nu=self.nu, s=self.s, N=self.N)


def check_block_resolution(grid, params, profile):
    points = profile.radius * grid.n / float(params.lam * params.mu)
    if points < constant.MIN_BLOB_POINTS_PER_RADIUS:
        raise ResolutionError('blob radius spans {:.2f} points at lam*mu={}, need {}'.format(
            points, params.lam * params.mu, constant.MIN_BLOB_POINTS_PER_RADIUS))
    sg.check_resolved(2 * params.nu, grid, 'psi^2 at nu={}'.format(params.nu))


def spectral_margin(grid, params, profile):
    """
    (n/2 - 2 nu) over twice the spectral width of one blob. cos^P(pi rho / 2r) is close to a Gaussian
    of width 2r / (pi sqrt(P)), so the blob products multiplying psi^2 alias at a level of order
    exp(-margin^2).
    """
    return 2. * profile.radius * (grid.n / 2. - 2. * params.nu) / (params.lam * params.mu * np.sqrt(profile.power))


def check_stage_resolution(grid, params, profile):
    """Blocks resolved and the defect products clear of aliasing."""
    check_block_resolution(grid, params, profile)
    margin = spectral_margin(grid, params, profile)
    if margin < constant.MIN_BLOB_SPECTRAL_MARGIN:
        raise ResolutionError('blob spectrum at lam*mu={}, nu={} is {:.2f} widths below n/2, need {}'.format(
            params.lam * params.mu, params.nu, margin, constant.MIN_BLOB_SPECTRAL_MARGIN))
    return margin


def blob_values(grid, profile, mu, exponent, j, lam=1, drift=0., shift=None):
    """mu^exponent phi(mu z) with z = (lam (x + shift - drift e_j) - zeta_j) mod 1."""
    d = grid.d
    y = grid.coords if shift is None else grid.coords + np.asarray(shift, dtype=float).reshape((d,) + (1,) * d)
    offset = profile.shift(j).copy()
    offset[j] += lam * drift
    z = np.mod(lam * y - offset.reshape((d,) + (1,) * d), 1.)
    return float(mu) ** exponent * profile(mu * z)


def blob(grid, mu, variant, j, s, profile=None):
    """Periodised concentrated blob phi^j_mu (variant 'density') or phit^j_mu (variant 'field')."""
    profile = profile or BlobProfile(grid.d)
    if int(mu) != mu or mu < 1:
        raise InvalidConfigurationError('block_mu', 'mu must be a positive integer, got {}'.format(mu))
    if profile.radius * grid.n / mu < constant.MIN_BLOB_POINTS_PER_RADIUS:
        raise ResolutionError('blob at mu={} not resolved on n={}'.format(mu, grid.n))
    if variant not in ('density', 'field'):
        raise ValueError('unknown blob variant {}'.format(variant))
    exponent = grid.d / s if variant == 'density' else grid.d * (s - 1.) / s
    return sg.ScalarField(grid, blob_values(grid, profile, mu, exponent, j))


def psi_values(grid, j, nu, shift=None):
    m = transverse_axis(j)
    y = grid.coords[m] if shift is None else grid.coords[m] + float(np.asarray(shift)[m])
    return np.sqrt(2.) * np.cos(2. * np.pi * nu * y)


def b_values(grid, j, nu, shift=None):
    m = transverse_axis(j)
    y = grid.coords[m] if shift is None else grid.coords[m] + float(np.asarray(shift)[m])
    return np.sqrt(2.) / (2. * np.pi) * np.sin(2. * np.pi * nu * y)


def mikado_psi(grid, j, nu):
    sg.check_resolved(nu, grid, 'psi')
    return sg.ScalarField(grid, psi_values(grid, j, nu))


def potential_b(grid, j, nu):
    """nu^-1 b^j(nu x): div of it is psi^j_nu and its d_j derivative vanishes."""
    sg.check_resolved(nu, grid, 'b')
    out = np.zeros((grid.d,) + grid.shape)
    out[transverse_axis(j)] = b_values(grid, j, nu) / nu
    return sg.VectorField(grid, out)


class MikadoBlock(object):
    """All block families for one direction j at fixed BlockParams."""

    def __init__(self, grid, params, j, profile=None):
        self.grid = grid
        self.params = params
        self.j = j
        self.m = transverse_axis(j)
        self.profile = profile or BlobProfile(grid.d)
        check_block_resolution(grid, params, self.profile)

    def at(self, t, shift=None):
        return BlockSnapshot(self, t, shift)


class BlockSnapshot(object):
    """Blocks of one direction at time t, evaluated at x + shift."""

    def __init__(self, block, t, shift=None):
        self.block = block
        self.grid = block.grid
        self.params = block.params
        self.t = t
        self.shift = None if shift is None else np.asarray(shift, dtype=float)

    def _blob(self, exponent):
        p = self.params
        return blob_values(self.grid, self.block.profile, p.mu, exponent, self.block.j,
                           lam=p.lam, drift=p.sigma * self.t, shift=self.shift)

    @cached_property
    def density_blob(self):
        return self._blob(self.grid.d / self.params.s)

    @cached_property
    def field_blob(self):
        return self._blob(self.grid.d / self.params.s_prime)

    @cached_property
    def psi(self):
        return psi_values(self.grid, self.block.j, self.params.nu, self.shift)

    @cached_property
    def blob_product(self):
        """(phi phit)_lam at the current position, the unit-mass density of Theta W."""
        return sg.ScalarField(self.grid, self.density_blob * self.field_blob)

    @cached_property
    def psi_sq_minus_one(self):
        return sg.ScalarField(self.grid, self.psi ** 2 - 1.)

    @cached_property
    def theta(self):
        return sg.ScalarField(self.grid, self.density_blob * self.psi)

    @cached_property
    def W(self):
        out = np.zeros((self.grid.d,) + self.grid.shape)
        out[self.block.j] = self.field_blob * self.psi
        return sg.VectorField(self.grid, out)

    @cached_property
    def Q(self):
        return sg.ScalarField(self.grid, self.theta.values * self.W.values[self.block.j] / self.params.sigma)

    @cached_property
    def W_corr(self):
        j, m, nu = self.block.j, self.block.m, self.params.nu
        flux = self.field_blob * b_values(self.grid, j, nu, self.shift)
        div_s = np.zeros((self.grid.d,) + self.grid.shape)
        div_s[j] = sg.derivative_values(flux, self.grid, m) / nu
        div_s[m] = -sg.derivative_values(flux, self.grid, j) / nu
        return sg.VectorField(self.grid, div_s - self.W.values)

    @cached_property
    def _potential(self):
        p = self.params
        f = sg.ScalarField(self.grid, sg.derivative_values(self.density_blob, self.grid, self.block.j) / p.lam)
        psi = sg.ScalarField(self.grid, self.psi)
        raw = improved_antidiv(f, psi, p.N, guard=False)
        defect, size = closure_defect(f, psi, raw)
        return raw + std_antidiv_centered(defect), float(np.abs(defect.values).max()), size

    @cached_property
    def A_N(self):
        p = self.params
        return p.lam * p.sigma * self._potential[0]

    @property
    def A_N_closure(self):
        """Relative aliasing defect folded into A_N; zero for a resolved block."""
        return self._potential[2]

    @cached_property
    def dtheta_dt(self):
        return -self.params.sigma * sg.derivative(self.theta, self.block.j)

    @cached_property
    def dQ_dt(self):
        return -self.params.sigma * sg.derivative(self.Q, self.block.j)

    def get(self, name):
        return getattr(self, name)


def _snapshot(grid, params, j, t, profile, shift):
    return MikadoBlock(grid, params, j, profile).at(t, shift)


def theta(grid, params, j, t, profile=None, shift=None):
    return _snapshot(grid, params, j, t, profile, shift).theta


def mikado_W(grid, params, j, t, profile=None, shift=None):
    return _snapshot(grid, params, j, t, profile, shift).W


def mikado_Q(grid, params, j, t, profile=None, shift=None):
    return _snapshot(grid, params, j, t, profile, shift).Q


def W_corr(grid, params, j, t, profile=None, shift=None):
    return _snapshot(grid, params, j, t, profile, shift).W_corr


def A_N(grid, params, j, t, profile=None, shift=None):
    return _snapshot(grid, params, j, t, profile, shift).A_N


def _relative(residual, scale):
    return residual / scale if scale > 0. else residual


def mikado_identity_check(grid, params, times, profile=None, directions=None):
    """
    Max residuals over times and directions of
        transport:  d_t Q + div(Theta W) = 0
        potential:  d_t Theta + div A_N = 0
        corrector:  div(W + W_corr) = 0
    reported absolute and relative to the size of the leading term, plus the aliasing defect that the
    potential absorbs (closure).
    """
    profile = profile or BlobProfile(grid.d)
    directions = range(grid.d) if directions is None else directions
    report = {name: dict(abs=0., rel=0.) for name in ('transport', 'potential', 'corrector', 'closure')}
    for j in directions:
        block = MikadoBlock(grid, params, j, profile)
        for t in times:
            snap = block.at(t)
            flux = snap.theta.values * snap.W.values[j]
            div_flux = sg.derivative_values(flux, grid, j)
            terms = dict(
                transport=(snap.dQ_dt.values + div_flux, np.abs(div_flux).max()),
                potential=(snap.dtheta_dt.values + sg.divergence(snap.A_N).values, np.abs(snap.dtheta_dt.values).max()),
                corrector=(sg.divergence(snap.W + snap.W_corr).values,
                           np.abs(sg.divergence(snap.W).values).max()))
            for name, (residual, scale) in terms.items():
                err = float(np.abs(residual).max())
                report[name]['abs'] = max(report[name]['abs'], err)
                report[name]['rel'] = max(report[name]['rel'], _relative(err, scale))
            report['closure']['abs'] = max(report['closure']['abs'], snap._potential[1])
            report['closure']['rel'] = max(report['closure']['rel'], snap.A_N_closure)
    logger.debug('mikado identities %s', report)
    return report


def interaction_check(grid, params, t=0., profile=None, shift=None):
    """Mean of Theta^j W^j per direction and the largest |Theta^i W^j| for i != j."""
    profile = profile or BlobProfile(grid.d)
    profile.check_disjoint(params.mu)
    snaps = [MikadoBlock(grid, params, j, profile).at(t, shift) for j in range(grid.d)]
    means = np.array([(snap.theta * snap.W).mean() for snap in snaps])
    cross = 0.
    for i in range(grid.d):
        for j in range(grid.d):
            if i != j:
                cross = max(cross, float(np.abs(snaps[i].theta.values * snaps[j].W.values[j]).max()))
    return dict(means=means, cross=cross)


def predicted_block_exponents(block, d, s, k, r):
    """Exponents of (lam, mu, sigma, nu) in the norm of grad^k block in L^r."""
    sp = s / (s - 1.)
    dr = 0. if r == np.inf else d / r
    table = dict(
        theta=dict(lam=0., mu=d / s - dr, sigma=0., nu=float(k)),
        Q=dict(lam=0., mu=d - dr, sigma=-1., nu=float(k)),
        W=dict(lam=0., mu=d / sp - dr, sigma=0., nu=float(k)),
        W_corr=dict(lam=1., mu=1. + d / sp - dr, sigma=0., nu=k - 1.),
        A_N=dict(lam=1., mu=1. + d / s - dr, sigma=1., nu=k - 1.))
    if block not in table:
        raise ValueError('unknown block {}, expected one of {}'.format(block, BLOCK_NAMES))
    return table[block]


def _block_norm(field_, k, r):
    if k == 0:
        return sg.lebesgue_norm(field_, r)
    grid = field_.grid
    comps = [field_] if field_.rank == 0 else field_.components
    jac = np.concatenate([sg.gradient(c).values for c in comps])
    mag = np.sqrt(np.sum(jac ** 2, axis=0))
    return float(sg.lebesgue_norm_values(mag, grid, r))


def mikado_estimate_probe(grid, base, sweep, values, block='theta', k=0, r=2., j=0, profile=None):
    """Fit the norm of grad^k block against one of lam, mu, sigma, nu and compare to the predicted exponent."""
    if sweep not in ('lam', 'mu', 'sigma', 'nu'):
        raise ValueError('cannot sweep {}'.format(sweep))
    profile = profile or BlobProfile(grid.d)
    norms = []
    for value in values:
        params = base.replace(**{sweep: value})
        snap = MikadoBlock(grid, params, j, profile).at(0.)
        norms.append(_block_norm(snap.get(block), k, r))
    fit = fit_power_law(np.asarray(values, dtype=float), np.asarray(norms),
                        name='{}_k{}_r{}_{}'.format(block, k, r, sweep))
    predicted = predicted_block_exponents(block, grid.d, base.s, k, r)[sweep]
    return dict(block=block, sweep=sweep, values=list(values), norms=norms, k=k, r=r,
                fit=fit, predicted=predicted, error=abs(fit.exponent - predicted), degenerate=fit.degenerate)


class MikadoFamily(object):
    """The d directions of one stage; w = sum_j W^j and w_c = sum_j W^{j,corr}."""

    def __init__(self, grid, params, profile=None):
        self.grid = grid
        self.params = params
        self.profile = profile or BlobProfile(grid.d)
        self.profile.check_disjoint(params.mu)
        self.blocks = [MikadoBlock(grid, params, j, self.profile) for j in range(grid.d)]

    def at(self, t, shift=None):
        return [b.at(t, shift) for b in self.blocks]

    def velocity(self, t, shift=None):
        """(w + w_c)(t, x + shift), divergence free to round-off."""
        snaps = self.at(t, shift)
        return sg.VectorField(self.grid, sum(s.W.values + s.W_corr.values for s in snaps))
