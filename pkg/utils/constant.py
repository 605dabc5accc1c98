MIN_POINTS = 8
MIN_BLOB_POINTS_PER_RADIUS = 4
MIN_BLOB_SPECTRAL_MARGIN = 3.
MIN_KERNEL_STEPS = 4

MEAN_TOL = 1e-10
ROUNDOFF_TOL = 1e-10
IDENTITY_TOL = 1e-8
CLOSURE_TOL = 1e-2
DETERMINISM_TOL = 1e-14

DEFECT_NAMES = ['R_com', 'R_quadr_1', 'R_quadr_2',
                'R_time_1', 'R_time_2', 'R_time_3',
                'R_sto_1', 'R_sto_2', 'R_sto_3', 'R_sto_4', 'R_sto_5',
                'R_lin', 'R_q', 'R_corr']
DIFFUSION_DEFECT = 'R_diff'

CONTRACT_NAMES = ['rho_dist', 'momentum', 'u_sobolev', 'R_norm']

SUMMARY_COLUMNS = ['stage', 'lam', 'mu', 'sigma', 'nu', 'ell', 'eps', 'N'] + CONTRACT_NAMES + DEFECT_NAMES

PROBE_NAMES = ['mikado', 'antidiv', 'brownian', 'interpolation', 'holder', 'defects']

OUTPUT_ROOT_ENV = 'CONVINT_OUTPUT_ROOT'

EXIT_PASS = 0
EXIT_CONTRACT = 1
EXIT_CONFIG = 2
