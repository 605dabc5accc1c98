import numpy as np
import os
import pandas as pd
import sys
import time

from os.path import join as jn
from cilight.cilight.io import IO

import loader
import utils.constant as constant

from construction import spectral_grid as sg
from construction.antidivergence import antidiv_decay_probe
from construction.brownian import StoppingData, calibrate_L, sample_path, stopping_time
from construction.errors import ContractViolation, InvalidConfigurationError, ResolutionError
from construction.iteration_stage import (StageConfig, defect_exponent_probe, initial_stage, ramp_window,
                                          run_iteration)
from construction.mikado_blocks import (BLOCK_NAMES, BlobProfile, BlockParams, check_block_resolution,
                                        check_stage_resolution, mikado_estimate_probe, mikado_identity_check)
from construction.parameters import check_parameters, hypothesis_violations, realise
from construction.residual_verify import (TestFunctionBank, interpolation_check, nonuniqueness_exhibit,
                                          triple_residuals)
from utils.average_meter import AverageMeter
from utils.gen_utils import delta_sequence, file_sha256, set_random_seed, time_since

HOLDER_PAIRS = 50


def resolve_work_dir(work_dir):
    root = os.environ.get(constant.OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(work_dir):
        return jn(root, work_dir)
    return work_dir


def package_versions():
    import configargparse
    import h5py
    import joblib
    import scipy
    import yaml
    return dict(python=sys.version.split()[0], numpy=np.__version__, scipy=scipy.__version__,
                pandas=pd.__version__, joblib=joblib.__version__, h5py=h5py.__version__,
                pyyaml=yaml.__version__, configargparse=getattr(configargparse, '__version__', 'unknown'))


def _block_resolved(grid, params, profile):
    try:
        check_block_resolution(grid, params, profile)
    except ResolutionError:
        return False
    return True


def summary_row(report):
    params = report['params']
    row = dict(stage=report['stage'], lam=params['lam'], mu=params['mu'], sigma=params['sigma'],
               nu=params['nu'], ell=params['ell'], eps=params['eps'], N=params['N'])
    row.update(report['contract'])
    row.update(report['defects'])
    return row


class Processor(object):
    """
        Processor for convex-integration runs, validation and standalone probes
    """

    def __init__(self, args):
        self.args = args
        self.work_dir = resolve_work_dir(args.work_dir)
        self.result = dict()
        self.stage_info = dict()
        self.meta_info = dict(stage=0)
        self.io = IO(
            self.work_dir,
            save_log=self.args.save_log,
            print_log=self.args.print_log)
        try:
            self.grid = sg.GridSpec(args.d, args.n, args.n_t)
            self.seeds = loader.ensemble_seeds(args.seeds, args.n_seeds, args.base_seed)
        except ValueError as err:
            raise InvalidConfigurationError('grid', str(err))
        self.deltas = delta_sequence(args.delta_first, args.delta_ratio, args.n_stages)

    @property
    def manual(self):
        values = (self.args.alpha, self.args.beta, self.args.gamma, self.args.zeta)
        if all(v is None for v in values):
            return None
        if any(v is None for v in values):
            raise InvalidConfigurationError('manual_exponents', 'alpha, beta, gamma and zeta must be set together')
        return values

    def stage_config(self):
        a = self.args
        return StageConfig.from_problem(
            a.p, a.p_tilde, a.theta, a.d, manual=self.manual, lam_min=a.lam_min, lam_max=a.lam_max,
            n_max=a.n_max, eps_max=a.eps_max, momentum_constant=a.momentum_constant,
            profile=BlobProfile(a.d, a.blob_radius, a.blob_power), kernel=sg.MollifierKernel(a.kernel_power),
            n_jobs=a.n_jobs)

    def show_stage_info(self):
        for k, v in self.stage_info.items():
            if isinstance(v, float):
                self.io.print_log('\t{}: {:.4e}'.format(k, v))
            else:
                self.io.print_log('\t{}: {}'.format(k, v))

    # validation

    def validate(self):
        a = self.args
        failed = hypothesis_violations(a.p, a.p_tilde, a.theta, a.d)
        if sum(self.deltas) >= 1. / 6.:
            failed.append('delta_sum')
        for name in failed:
            self.io.print_log('Violated condition [{}].'.format(name))
        if failed:
            raise InvalidConfigurationError(failed[0], 'p={} p_tilde={} theta={} d={} deltas={}'.format(
                a.p, a.p_tilde, a.theta, a.d, self.deltas))
        config = self.stage_config()
        admissibility = check_parameters(a.p, a.p_tilde, a.theta, a.d, config.s, config.kappa, config.exponents)
        ramp = ramp_window(self.grid)
        feasible, reason = True, ''
        try:
            params = realise(a.lam_min, config.exponents, config.s, config.kappa, self.deltas[0] if self.deltas
                             else a.delta_first, a.eps_max, a.n_max)
            check_stage_resolution(self.grid, params.block, config.profile)
        except (ResolutionError, InvalidConfigurationError) as err:
            feasible, reason = False, str(err)
        self.stage_info = dict(s=config.s, kappa=config.kappa, manual=config.manual,
                               admissibility=admissibility or 'all conditions hold', ramp=ramp,
                               first_stage_resolved=feasible)
        self.stage_info.update(config.exponents.as_dict())
        self.io.print_log('Derived parameters:')
        self.show_stage_info()
        if not feasible:
            self.io.print_log('First stage is not resolved at lam={}: {}'.format(a.lam_min, reason))
        return dict(valid=True, s=config.s, kappa=config.kappa, exponents=config.exponents.as_dict(),
                    manual=config.manual, admissibility=admissibility, deltas=self.deltas,
                    first_stage_resolved=feasible, resolution_detail=reason)

    # run

    def load_ensemble(self, kappa):
        a = self.args
        ensemble, L = loader.load_ensemble(self.seeds, a.n_t, a.d, kappa, a.prob, a.calib_paths, a.calib_seed,
                                           a.n_jobs, progress=a.print_log)
        self.result['L'] = L
        self.result['stopping'] = loader.stopping_summary(ensemble)
        return ensemble

    def save_fields(self, triple):
        fields = {}
        for sample in triple.samples:
            fields['rho_{}'.format(sample.path.seed)] = sample.rho.samples
            fields['R_{}'.format(sample.path.seed)] = sample.R.samples
            fields['path_{}'.format(sample.path.seed)] = sample.path.values
        self.io.save_h5(fields, 'fields_stage_{}.h5'.format(triple.stage),
                        attrs=dict(d=self.grid.d, n=self.grid.n, n_t=self.grid.n_t))
        for sample in triple.samples:
            sample.rho.sample(self.grid.n_t - 1).to_csv(
                self.io.path('rho_final_stage_{}_{}.csv'.format(triple.stage, sample.path.seed)))
        if triple.stage == 0:
            loader.save_ensemble([(s.path, s.stop) for s in triple.samples], self.io.path('paths'))

    def save_manifest(self, config_file):
        manifest = dict(seeds=self.seeds, calib_seed=self.args.calib_seed,
                        config_sha256=file_sha256(config_file), versions=package_versions(),
                        command_line=' '.join(sys.argv), deltas=self.deltas)
        self.io.save_json(manifest, 'manifest.json')

    def run(self):
        a = self.args
        start = time.time()
        set_random_seed(a.base_seed)
        self.validate()
        self.save_manifest(self.io.save_arg(a))
        self.io.init_timer('ensemble', 'initial', 'stages', 'certificate')
        config = self.stage_config()
        ensemble = self.load_ensemble(config.kappa)
        self.io.check_time('ensemble')

        initial = initial_stage(a.p, self.grid, ensemble, a.diffusion)
        bank = TestFunctionBank(self.grid)
        residual = AverageMeter('initial_residual', ':.4e')
        for value in triple_residuals(initial, bank):
            residual.update(value)
        initial_report = dict(stage=0, R_norm=initial.R_norm(), rho_norm=initial.rho_norm(a.p),
                              ramp=ramp_window(self.grid), residual=residual.as_dict(),
                              seeds=self.seeds, taus=initial.taus, L=self.result['L'],
                              stopping=self.result['stopping'], diffusion=a.diffusion)
        self.io.save_json(initial_report, 'stage_0.json')
        self.io.print_log('Initial stage: R_norm {:.4e}, residual {}.'.format(initial_report['R_norm'], residual))
        if a.save_fields:
            self.save_fields(initial)
        self.io.check_time('initial')

        trajectory = run_iteration(initial, self.deltas, config, a.n_stages)
        self.io.check_time('stages')
        rows, passed = [], True
        for report in trajectory.reports:
            self.meta_info['stage'] = report['stage']
            terms = report.pop('terms', None)
            self.io.save_json(report, 'stage_{}.json'.format(report['stage']))
            rows.append(summary_row(report))
            self.stage_info = dict(lam=report['params']['lam'], **report['contract'],
                                   passed=report['passed_all'])
            self.io.print_log('Stage {} done.'.format(report['stage']))
            self.show_stage_info()
            passed = passed and report['passed_all']
            del terms
        if a.save_fields:
            for triple in trajectory.triples[1:]:
                self.save_fields(triple)
        columns = constant.SUMMARY_COLUMNS + ([constant.DIFFUSION_DEFECT] if a.diffusion else [])
        self.io.save_csv(pd.DataFrame(rows, columns=columns), 'summary.csv', columns=columns)

        convergence = dict(trajectory.convergence, stopped=trajectory.stopped)
        if trajectory.reports:
            certificate = nonuniqueness_exhibit(trajectory, a.p, bank)
            certificate['convergence'] = convergence
            self.io.save_json(certificate, 'certificate.json')
            self.io.print_log('Certificate: nonvanishing {}, inconclusive {}.'.format(
                certificate['nonvanishing'], certificate['inconclusive']))
        self.io.check_time('certificate')
        self.io.print_timer()
        self.io.print_log('Run finished in {}.'.format(time_since(start)))
        self.result.update(convergence=convergence, passed=passed and trajectory.stopped is None)
        if trajectory.stopped is not None:
            self.io.print_log('Stopped early: {}'.format(trajectory.stopped))
        if trajectory.reports and not passed:
            raise ContractViolation(next(r for r in trajectory.reports if not r['passed_all']))
        return self.result

    # probes

    def probe(self, name):
        if name not in constant.PROBE_NAMES:
            raise InvalidConfigurationError('probe', 'unknown probe {}, expected one of {}'.format(
                name, constant.PROBE_NAMES))
        set_random_seed(self.args.base_seed)
        rows = getattr(self, 'probe_{}'.format(name))()
        frame = pd.DataFrame(rows)
        self.io.save_csv(frame, 'probe_{}.csv'.format(name))
        self.io.print_log('Probe {} wrote {} rows.'.format(name, len(frame)))
        return frame

    def _probe_grid(self):
        return sg.GridSpec(self.args.d, self.args.n, 9)

    def probe_mikado(self):
        grid = self._probe_grid()
        a = self.args
        profile = BlobProfile(a.d, a.blob_radius, a.blob_power)
        s = StageConfig.from_problem(a.p, a.p_tilde, a.theta, a.d).s
        rows = []
        base = BlockParams(lam=1, mu=2, sigma=2., nu=8, s=s)
        check_block_resolution(grid, base, profile)
        for N in (1, 2, 3):
            report = mikado_identity_check(grid, base.replace(N=N), [0., 0.3], profile)
            for identity, values in report.items():
                rows.append(dict(kind='identity', name=identity, N=N, abs=values['abs'], rel=values['rel']))
        sweeps = dict(mu=[1, 2, 4], sigma=[1., 2., 4.], nu=[4, 8, 16])
        for sweep, values in sweeps.items():
            values = [v for v in values if _block_resolved(grid, base.replace(**{sweep: v}), profile)]
            if len(values) < 3:
                self.io.print_log('Skipping the {} sweep: fewer than 3 values resolved on n={}.'.format(sweep, grid.n))
                continue
            for block in BLOCK_NAMES:
                for k in (0, 1):
                    out = mikado_estimate_probe(grid, base, sweep, values, block=block, k=k, profile=profile)
                    rows.append(dict(kind='scaling', name=block, k=k, sweep=sweep, exponent=out['fit'].exponent,
                                     predicted=out['predicted'], error=out['error'], degenerate=out['degenerate']))
        return rows

    def probe_antidiv(self):
        grid = self._probe_grid()
        rng = np.random.default_rng(self.args.base_seed)
        f = sg.random_field(grid, 2, rng)
        g = sg.random_field(grid, 1, rng)
        lams = [lam for lam in (2, 4, 8, 16, 32, 64) if 3 * lam < grid.n // 2]
        if len(lams) < 3:
            raise ResolutionError('the antidivergence probe needs n >= 64, got n={}'.format(grid.n))
        out = antidiv_decay_probe(f, g, lams)
        return [dict(lam=lam, norm=norm, slope=out['fit'].exponent, predicted=out['predicted_slope'])
                for lam, norm in zip(out['lams'], out['norms'])]

    def probe_brownian(self):
        a = self.args
        kappa = loader.analysis_kappa(a.p, a.p_tilde, a.theta, a.d)
        rows = []
        for level in a.probe_levels:
            L = calibrate_L(level, kappa, a.calib_paths, a.n_t, a.d, seed=a.calib_seed, n_jobs=a.n_jobs)
            fresh = [stopping_time(sample_path(a.calib_seed + 1 + k, a.n_t, a.d), L, kappa)
                     for k in range(a.calib_paths)]
            rows.append(dict(level=level, L=L, kappa=kappa,
                             survivor_fraction=float(np.mean([stop.survives for stop in fresh]))))
        return rows

    def probe_interpolation(self):
        grid = sg.GridSpec(self.args.d, min(self.args.n, 64), 9)
        rows = []
        for theta, q in ((0.3, 1.5), (0.7, 2.)):
            rows.append(interpolation_check(grid, theta, q, n_fields=2 * self.args.probe_fields,
                                            seed=self.args.base_seed))
        return rows

    def probe_holder(self):
        grid = self._probe_grid()
        rng = np.random.default_rng(self.args.base_seed)
        lams = [lam for lam in (1, 2, 4, 8, 16) if 2 * lam < grid.n // 2]
        pairs = [(sg.random_field(grid, 2, rng), sg.random_field(grid, 1, rng)) for _ in range(HOLDER_PAIRS)]
        rows = []
        for r in (1., 2.):
            out = sg.improved_holder_constant(pairs, lams, r)
            for lam in lams:
                checks = [row for row in out['rows'] if row['lam'] == lam]
                rows.append(dict(r=r, lam=lam, c_r=out['c_r'], n_pairs=out['n_pairs'], n_fitted=out['n_fitted'],
                                 worst_ratio=max(row['ratio'] for row in checks),
                                 passed=all(row['passed'] for row in checks)))
            self.io.print_log('Hoelder r={}: C_r {:.4f} from {} pairs, worst lhs/rhs {:.4f} over {}.'.format(
                r, out['c_r'], out['n_fitted'], out['worst_ratio'], out['n_pairs']))
        return rows

    def probe_defects(self):
        a = self.args
        if len(a.defect_lams) < 3:
            raise InvalidConfigurationError('defect_lams', 'need at least 3 values, got {}'.format(a.defect_lams))
        grid = sg.GridSpec(a.d, a.n, a.n_t)
        config = self.stage_config()
        path = sample_path(self.seeds[0], a.n_t, a.d)
        ensemble = [(path, StoppingData(config.kappa, np.inf, 1., a.n_t - 1))]
        triple = initial_stage(a.p, grid, ensemble, a.diffusion)
        out = defect_exponent_probe(triple, a.defect_lams, config, a.eps_max)
        rows = []
        for name, fit in out['fits'].items():
            rows.append(dict(term=name, exponent=fit.exponent, predicted=out['predicted'][name],
                             tol=out['tol'], degenerate=fit.degenerate, passed=out['passed'][name]))
        self.io.print_log('Defect exponents over lam={}: all within tolerance {}.'.format(
            a.defect_lams, out['passed_all']))
        return rows
