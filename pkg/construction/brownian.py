"""
Brownian paths on the time grid, Hoelder stopping times, mollified paths and the space shifts
Psi(t, x) = (t, x + B(t)), Psi_ell(t, x) = (t, x + B_ell(t)).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from construction import spectral_grid as sg
from construction.errors import UnsupportedExponentError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BrownianPath:
    seed: int
    values: np.ndarray
    _running: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.values.setflags(write=False)

    @property
    def n_t(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def dt(self):
        return 1. / (self.n_t - 1)

    @property
    def times(self):
        return np.linspace(0., 1., self.n_t)

    def at(self, t):
        """B(t) with B = 0 for t < 0, linear between grid times."""
        if t <= 0.:
            return np.zeros(self.d)
        return np.array([np.interp(t, self.times, self.values[:, i]) for i in range(self.d)])

    def running_seminorm(self, exponent):
        """[B]_{C^exponent([0, t_k])} for every grid index k."""
        if not 0. < exponent < 1.:
            raise UnsupportedExponentError('Hoelder exponent must lie in (0, 1), got {}'.format(exponent))
        key = round(exponent, 12)
        if key not in self._running:
            t = self.times
            out = np.zeros(self.n_t)
            for k in range(1, self.n_t):
                gaps = np.linalg.norm(self.values[k] - self.values[:k], axis=1)
                out[k] = max(out[k - 1], float(np.max(gaps / (t[k] - t[:k]) ** exponent)))
            self._running[key] = out
        return self._running[key]

    def truncated(self, index):
        """The path frozen after grid index `index`."""
        values = np.array(self.values)
        values[index + 1:] = values[index]
        return BrownianPath(self.seed, values)

    def to_csv(self, path):
        data = np.column_stack([self.times, self.values])
        header = 'seed={} n_t={} d={}\ntime,'.format(self.seed, self.n_t, self.d) + \
            ','.join('B{}'.format(i + 1) for i in range(self.d))
        np.savetxt(path, data, delimiter=',', header=header)

    @staticmethod
    def from_csv(path):
        with open(path) as f:
            meta = dict(item.split('=') for item in f.readline().lstrip('# ').split())
        data = np.loadtxt(path, delimiter=',')
        return BrownianPath(int(meta['seed']), data[:, 1:])

    @staticmethod
    def zero(n_t, d):
        return BrownianPath(-1, np.zeros((n_t, d)))


@dataclass(frozen=True)
class StoppingData:
    kappa: float
    L: float
    tau: float
    index: int

    @property
    def survives(self):
        return self.tau >= 1.


@dataclass(frozen=True, eq=False)
class MollifiedPath:
    ell: float
    values: np.ndarray
    derivative: np.ndarray


def sample_path(seed, n_t, d):
    """B(0) = 0 and independent N(0, dt) increments per component."""
    if n_t < 2:
        raise ValueError('need at least 2 time points, got {}'.format(n_t))
    rng = np.random.default_rng(seed)
    dt = 1. / (n_t - 1)
    increments = rng.normal(0., np.sqrt(dt), size=(n_t - 1, d))
    return BrownianPath(int(seed), np.vstack([np.zeros((1, d)), np.cumsum(increments, axis=0)]))


def holder_seminorm(path, exponent, t_max=1.):
    if not 0. <= t_max <= 1.:
        raise ValueError('t_max must lie in [0, 1], got {}'.format(t_max))
    k = int(np.floor(t_max / path.dt + 1e-9))
    return float(path.running_seminorm(exponent)[k])


def stopping_time(path, L, kappa):
    """First grid time where the C^{1/2-kappa} seminorm exceeds L, else 1."""
    if L <= 0.:
        raise ValueError('threshold L must be positive, got {}'.format(L))
    running = path.running_seminorm(0.5 - kappa)
    over = np.nonzero(running > L)[0]
    if len(over) == 0:
        return StoppingData(kappa, L, 1., path.n_t - 1)
    index = int(over[0])
    return StoppingData(kappa, L, float(path.times[index]), index)


def calibration_seeds(seed, n_paths):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_paths, dtype=np.uint32)]


def _full_seminorm(seed, n_t, d, exponent):
    return float(sample_path(seed, n_t, d).running_seminorm(exponent)[-1])


def calibrate_L(prob, kappa, n_paths, n_t, d, seed=0, n_jobs=1):
    """Empirical prob-quantile of [B]_{C^{1/2-kappa}([0,1])} over a fresh batch of paths."""
    if not 0. <= prob < 1.:
        raise ValueError('probability level must lie in [0, 1), got {}'.format(prob))
    seeds = calibration_seeds(seed, n_paths)
    norms = Parallel(n_jobs=n_jobs)(delayed(_full_seminorm)(s, n_t, d, 0.5 - kappa) for s in seeds)
    L = float(np.quantile(norms, prob))
    logger.info('calibrated L=%.4f at level %.3f over %d paths', L, prob, n_paths)
    return max(L, np.finfo(float).tiny)


def mollify_path(path, ell, kernel=None):
    """B_ell = B *_t chi_ell with B = 0 before t = 0, and its time derivative."""
    kernel = kernel or sg.MollifierKernel()
    w, dw, snapped = kernel.time_weights(path.dt, ell)
    return MollifiedPath(snapped, sg.convolve_in_time(path.values, w), sg.convolve_in_time(path.values, dw))


def shift_by_path(F, shifts, sign=1):
    """
    F(t, x + sign * shift(t)) at every sample time; shift is a BrownianPath, a MollifiedPath
    or an (n_t, d) array. sign=-1 gives the inverse map.
    """
    values = shifts.values if hasattr(shifts, 'values') else np.asarray(shifts)
    grid = F.grid
    out = np.empty_like(F.samples)
    for i in range(grid.n_t):
        coeffs = sg.fft(F.samples[i], grid)
        out[i] = sg.ifft(coeffs * sg.translation_phase(grid, -sign * values[i]), grid)
    return sg.TimeField(grid, out)
