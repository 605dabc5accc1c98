# sys
import logging
import numpy as np
import os

from joblib import Parallel, delayed
from os.path import join as j
from tqdm import tqdm

from construction.brownian import BrownianPath, calibrate_L, sample_path, stopping_time
from construction.parameters import choose_exponent_s, choose_kappa

logger = logging.getLogger(__name__)


def ensemble_seeds(seeds=None, n_seeds=8, base_seed=0):
    """Explicit seeds when given, otherwise base_seed, base_seed + 1, ..."""
    if seeds:
        return [int(s) for s in seeds]
    if n_seeds < 1:
        raise ValueError('the ensemble needs at least one seed')
    return list(range(base_seed, base_seed + n_seeds))


def analysis_kappa(p, p_tilde, theta, d):
    s = choose_exponent_s(p, p_tilde, theta, d)
    return choose_kappa(d, s / (s - 1.))


def load_ensemble(seeds, n_t, d, kappa, prob, calib_paths=500, calib_seed=12345, n_jobs=1, L=None,
                  progress=True):
    """
    Sample one Brownian path per seed, calibrate the Hoelder threshold L at level prob on a separate
    batch (unless L is given) and attach the stopping time of every path.
    Returns (list of (path, StoppingData), L).
    """
    if L is None:
        L = calibrate_L(prob, kappa, calib_paths, n_t, d, seed=calib_seed, n_jobs=n_jobs)
    iterator = tqdm(seeds, desc='paths', disable=not progress)
    paths = Parallel(n_jobs=n_jobs)(delayed(sample_path)(seed, n_t, d) for seed in iterator)
    ensemble = [(path, stopping_time(path, L, kappa)) for path in paths]
    survivors = sum(stop.survives for _, stop in ensemble)
    logger.info('ensemble of %d paths, L=%.4f, %d reach t = 1', len(ensemble), L, survivors)
    return ensemble, L


def save_ensemble(ensemble, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for path, _ in ensemble:
        path.to_csv(j(out_dir, 'path_{}.csv'.format(path.seed)))


def load_paths(out_dir):
    """Paths previously written by save_ensemble, ordered by seed."""
    files = sorted(f for f in os.listdir(out_dir) if f.startswith('path_') and f.endswith('.csv'))
    paths = [BrownianPath.from_csv(j(out_dir, f)) for f in files]
    return sorted(paths, key=lambda path: path.seed)


def stopping_summary(ensemble):
    taus = np.array([stop.tau for _, stop in ensemble])
    return dict(n_paths=len(taus), survivor_fraction=float(np.mean(taus >= 1.)),
                tau_min=float(taus.min()), tau_mean=float(taus.mean()),
                L=float(ensemble[0][1].L), kappa=float(ensemble[0][1].kappa))
