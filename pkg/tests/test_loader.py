import numpy as np
import pytest

import loader


def test_ensemble_seeds():
    assert loader.ensemble_seeds([5, '7']) == [5, 7]
    assert loader.ensemble_seeds(None, n_seeds=3, base_seed=10) == [10, 11, 12]
    with pytest.raises(ValueError):
        loader.ensemble_seeds([], n_seeds=0)


def test_analysis_kappa():
    assert loader.analysis_kappa(2., 1.5, 0., 2) == pytest.approx(1. / 50.)


def test_load_ensemble_with_fixed_threshold():
    ensemble, L = loader.load_ensemble([1, 2, 3], 17, 2, 0.02, 0.9, L=1e6, progress=False)
    assert L == 1e6
    assert [path.seed for path, _ in ensemble] == [1, 2, 3]
    summary = loader.stopping_summary(ensemble)
    assert summary['n_paths'] == 3
    assert summary['survivor_fraction'] == 1.
    assert summary['tau_min'] == 1.


def test_calibrated_threshold_is_reproducible():
    first = loader.load_ensemble([0], 17, 2, 0.02, 0.5, calib_paths=16, progress=False)[1]
    second = loader.load_ensemble([0], 17, 2, 0.02, 0.5, calib_paths=16, progress=False)[1]
    assert first == second and first > 0.


def test_saved_paths_reload_in_seed_order(tmp_path):
    ensemble, _ = loader.load_ensemble([12, 3], 17, 2, 0.02, 0.9, L=1e6, progress=False)
    loader.save_ensemble(ensemble, str(tmp_path))
    paths = loader.load_paths(str(tmp_path))
    assert [p.seed for p in paths] == [3, 12]
    np.testing.assert_allclose(paths[1].values, ensemble[0][0].values, rtol=1e-11, atol=1e-14)
