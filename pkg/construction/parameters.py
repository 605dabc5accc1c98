"""
Exponent and parameter selection for one convex-integration stage.

With mu = lam^alpha, nu = lam^gamma, sigma = lam^beta and ell = lam^-zeta the admissible exponents
satisfy, writing D = d/s' and c = ((1/2 - kappa) / (1/2 + kappa)) D:

    alpha   (d/theta)(1/s + 1/pt - 1 - theta/d) alpha > 2   (dropped for theta = 0)
            (c - 1) alpha > 2
    gamma   integer with alpha + 1 < gamma < min((d/theta)(1/s + 1/pt - 1), c) alpha
    beta    D alpha < beta < D alpha + gamma - alpha - 1,  beta > 1
    N       N / (N - 1) < gamma / (1 + alpha)
    zeta    gamma / (1/2 - kappa) < zeta < D alpha / (1/2 + kappa),  zeta > 1
"""
import logging
from dataclasses import dataclass, asdict

import numpy as np

from construction.errors import ConsistencyError, InvalidConfigurationError
from construction.mikado_blocks import BlockParams
from utils.common import open_interval

logger = logging.getLogger(__name__)

ALPHA_FACTOR = 2.


def hypothesis_violations(p, p_tilde, theta, d):
    """Named hypotheses on (p, pt, theta, d) that fail."""
    failed = []
    if d < 2:
        failed.append('dimension')
    if p < 1. or p_tilde < 1.:
        failed.append('integrability_range')
    if not 0. <= theta <= 1.:
        failed.append('theta_range')
    if failed:
        return failed
    if not 1. / p + 1. / p_tilde > 1. + theta / d:
        failed.append('integrability')
    if not d / p_tilde > 1. + theta:
        failed.append('regularity')
    return failed


def check_hypotheses(p, p_tilde, theta, d):
    failed = hypothesis_violations(p, p_tilde, theta, d)
    if failed:
        raise InvalidConfigurationError(failed[0], 'p={} p_tilde={} theta={} d={}'.format(p, p_tilde, theta, d))


def exponent_s_interval(p, p_tilde, theta, d):
    """Open interval for 1/s."""
    lo = max(1. + theta / d - 1. / p_tilde, 0.)
    hi = min(1. / p, 1. - 1. / d)
    return lo, hi


def choose_exponent_s(p, p_tilde, theta, d):
    check_hypotheses(p, p_tilde, theta, d)
    lo, hi = exponent_s_interval(p, p_tilde, theta, d)
    interval = open_interval(lo, hi)
    if interval is None:
        raise InvalidConfigurationError('exponent_s', 'empty interval for 1/s: ({:.4f}, {:.4f})'.format(lo, hi))
    s = 1. / interval[0]
    s_prime = s / (s - 1.)
    if not (s > p and s_prime < d):
        raise ConsistencyError('s={} fails s > p or s\' < d'.format(s))
    return s


def r_kappa(kappa):
    return (0.5 + kappa) / (0.5 - kappa)


def choose_kappa(d, s_prime):
    """kappa with r(kappa) halfway between 1 and d/s'."""
    bound = d / s_prime
    if bound <= 1.:
        raise InvalidConfigurationError('kappa', 'need s\' < d, got s\'={}'.format(s_prime))
    target = 0.5 * (1. + bound)
    return (target - 1.) / (2. * (1. + target))


@dataclass(frozen=True)
class Exponents:
    alpha: float
    beta: float
    gamma: float
    zeta: float
    N: int

    def as_dict(self):
        return asdict(self)


def _gamma_factors(theta, d, s, p_tilde, kappa):
    D = d / (s / (s - 1.))
    c_kappa = D / r_kappa(kappa)
    if theta == 0.:
        return [c_kappa]
    return [(d / theta) * (1. / s + 1. / p_tilde - 1.), c_kappa]


def alpha_lower_bound(p_tilde, theta, d, s, kappa):
    factors = _gamma_factors(theta, d, s, p_tilde, kappa)
    if min(factors) <= 1.:
        raise InvalidConfigurationError('alpha', 'no alpha works: gamma factor {:.4f} <= 1'.format(min(factors)))
    return max(2. / (c - 1.) for c in factors)


def gamma_interval(alpha, p_tilde, theta, d, s, kappa):
    return alpha + 1., min(_gamma_factors(theta, d, s, p_tilde, kappa)) * alpha


def beta_interval(alpha, gamma, d, s):
    D = d * (s - 1.) / s
    return max(D * alpha, 1.), D * alpha + gamma - alpha - 1.


def zeta_interval(alpha, gamma, d, s, kappa):
    D = d * (s - 1.) / s
    return max(gamma / (0.5 - kappa), 1.), D * alpha / (0.5 + kappa)


def minimal_order(alpha, gamma):
    g = gamma / (1. + alpha)
    if g <= 1.:
        raise InvalidConfigurationError('N', 'gamma / (1 + alpha) = {:.4f} <= 1'.format(g))
    ratio = g / (g - 1.)
    if abs(ratio - round(ratio)) <= 1e-9 * ratio:
        return int(round(ratio)) + 1
    return int(np.floor(ratio)) + 1


def _nearest_integer_inside(lo, hi):
    """Integer in (lo, hi) nearest the midpoint, ties to the lower one."""
    mid = round(0.5 * (lo + hi), 9)
    for candidate in sorted({int(np.floor(mid)), int(np.ceil(mid))}, key=lambda k: (abs(k - mid), k)):
        if lo < candidate < hi:
            return candidate
    inside = [k for k in range(int(np.floor(lo)) + 1, int(np.ceil(hi))) if lo < k < hi]
    return inside[0] if inside else None


def choose_parameters(p, p_tilde, theta, d, s, kappa):
    """Midpoint choices in the order alpha, gamma, beta, N, zeta; alpha is ALPHA_FACTOR times its lower bound."""
    alpha = ALPHA_FACTOR * alpha_lower_bound(p_tilde, theta, d, s, kappa)
    gamma = _nearest_integer_inside(*gamma_interval(alpha, p_tilde, theta, d, s, kappa))
    if gamma is None:
        raise ConsistencyError('no integer gamma in {}'.format(gamma_interval(alpha, p_tilde, theta, d, s, kappa)))
    beta_iv = open_interval(*beta_interval(alpha, gamma, d, s))
    zeta_iv = open_interval(*zeta_interval(alpha, gamma, d, s, kappa))
    if beta_iv is None or zeta_iv is None:
        raise ConsistencyError('empty beta or zeta interval at alpha={} gamma={}'.format(alpha, gamma))
    exponents = Exponents(alpha=alpha, beta=beta_iv[0], gamma=float(gamma), zeta=zeta_iv[0],
                          N=minimal_order(alpha, gamma))
    failed = check_parameters(p, p_tilde, theta, d, s, kappa, exponents)
    if failed:
        raise ConsistencyError('selected exponents violate {}'.format(failed))
    logger.debug('exponents %s', exponents)
    return exponents


def check_parameters(p, p_tilde, theta, d, s, kappa, exponents):
    """Independent re-check of every admissibility condition; returns the names that fail."""
    e = exponents
    failed = list(hypothesis_violations(p, p_tilde, theta, d))
    lo, hi = exponent_s_interval(p, p_tilde, theta, d)
    if not lo < 1. / s < hi:
        failed.append('exponent_s')
    s_prime = s / (s - 1.)
    D = d / s_prime
    if not (0. < kappa < 0.5 and r_kappa(kappa) < D):
        failed.append('kappa')
        return failed
    c_kappa = D / r_kappa(kappa)
    alpha_ok = (c_kappa - 1.) * e.alpha > 2.
    gamma_hi = c_kappa * e.alpha
    if theta > 0.:
        c_theta = (d / theta) * (1. / s + 1. / p_tilde - 1.)
        alpha_ok = alpha_ok and (d / theta) * (1. / s + 1. / p_tilde - 1. - theta / d) * e.alpha > 2.
        gamma_hi = min(gamma_hi, c_theta * e.alpha)
    if not alpha_ok:
        failed.append('alpha')
    if not (e.alpha + 1. < e.gamma < gamma_hi and float(e.gamma).is_integer()):
        failed.append('gamma')
    if not (D * e.alpha < e.beta < D * e.alpha + e.gamma - e.alpha - 1. and e.beta > 1.):
        failed.append('beta')
    if not (e.N >= 2 and e.N / (e.N - 1.) < e.gamma / (1. + e.alpha)):
        failed.append('N')
    if not (e.gamma / (0.5 - kappa) < e.zeta < D * e.alpha / (0.5 + kappa) and e.zeta > 1.):
        failed.append('zeta')
    return failed


def defect_exponents(exponents, d, s, kappa, N=None):
    """Predicted lam-exponent of every defect term; None where the bound is set by eps, not lam."""
    e = exponents
    N = e.N if N is None else N
    D = d * (s - 1.) / s
    quadr = max(1. + e.alpha - e.gamma, -1.)
    time_2 = 1. + (1. - D) * e.alpha + e.beta - e.gamma
    time_2 = max(time_2, time_2 + (1. + e.alpha) * N - e.gamma * (N - 1.))
    sto_2 = e.zeta * (0.5 + kappa) - e.beta
    sto_4 = -D * e.alpha + (0.5 + kappa) * e.zeta
    table = dict(
        R_com=None,
        R_quadr_1=quadr, R_quadr_2=quadr,
        R_time_1=-e.beta, R_time_2=time_2, R_time_3=time_2,
        R_sto_1=e.gamma - e.zeta * (0.5 - kappa), R_sto_2=sto_2, R_sto_3=sto_2,
        R_sto_4=sto_4, R_sto_5=sto_4,
        R_lin=max(-(d / s) * e.alpha, -D * e.alpha),
        R_q=D * e.alpha - e.beta,
        R_corr=max(1. + e.alpha - e.gamma, D * e.alpha - e.beta + 1. + e.alpha - e.gamma),
        R_diff=e.gamma - D * e.alpha)
    return table


@dataclass(frozen=True)
class StageParams:
    delta: float
    eps: float
    ell: float
    lam: int
    mu: int
    sigma: float
    nu: int
    N: int
    s: float
    kappa: float
    exponents: Exponents

    @property
    def block(self):
        return BlockParams(lam=self.lam, mu=self.mu, sigma=self.sigma, nu=self.nu, s=self.s, N=self.N)

    def as_dict(self):
        return asdict(self)


def manual_exponents(alpha, beta, gamma, zeta, N=None):
    """Hand-picked exponents for desk-scale runs; N defaults to the minimal order when one exists."""
    if N is None:
        try:
            N = minimal_order(alpha, gamma)
        except InvalidConfigurationError:
            N = 1
    return Exponents(alpha=float(alpha), beta=float(beta), gamma=float(gamma), zeta=float(zeta), N=int(N))


def realise(lam, exponents, s, kappa, delta, eps, n_max=None):
    """Integer block parameters from the exponents: mu rounds, nu is the nearest multiple of lam, N is capped at n_max."""
    e = exponents
    N = e.N if n_max is None else min(e.N, n_max)
    mu = max(1, int(round(lam ** e.alpha)))
    nu = lam * max(1, int(round(lam ** e.gamma / lam)))
    return StageParams(delta=delta, eps=eps, ell=float(lam) ** (-e.zeta), lam=int(lam), mu=mu,
                       sigma=float(lam) ** e.beta, nu=nu, N=int(N), s=s, kappa=kappa, exponents=e)
