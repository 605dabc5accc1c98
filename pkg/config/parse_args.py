import configargparse

from cilight.cilight.io import str2bool


def _optional_float(v):
    if v is None or str(v).lower() in ('', 'none', 'null'):
        return None
    return float(v)


def build_parser(config_file=None):
    parser = configargparse.ArgParser(default_config_files=[config_file] if config_file else [])
    parser.add("-c", "--config", is_config_file=True, help="config file path")
    parser.add("--name", type=str, default="convint")

    # problem
    parser.add("--d", type=int, default=2)
    parser.add("--p", type=float, default=2.)
    parser.add("--p_tilde", type=float, default=1.5)
    parser.add("--theta", type=float, default=0.)
    parser.add("--prob", type=float, default=0.9)

    # grid
    parser.add("--n", type=int, default=256)
    parser.add("--n_t", type=int, default=513)

    # stages
    parser.add("--n_stages", type=int, default=2)
    parser.add("--delta_first", type=float, default=0.08)
    parser.add("--delta_ratio", type=float, default=0.25)
    parser.add("--momentum_constant", type=_optional_float, default=None)

    # ensemble
    parser.add("--seeds", type=int, nargs='*', default=[])
    parser.add("--n_seeds", type=int, default=8)
    parser.add("--base_seed", type=int, default=0)
    parser.add("--calib_paths", type=int, default=500)
    parser.add("--calib_seed", type=int, default=12345)

    # construction
    parser.add("--diffusion", type=str2bool, default=False)
    parser.add("--blob_radius", type=float, default=0.125)
    parser.add("--blob_power", type=int, default=8)
    parser.add("--kernel_power", type=int, default=4)
    parser.add("--lam_min", type=int, default=2)
    parser.add("--lam_max", type=int, default=64)
    parser.add("--n_max", type=int, default=3)
    parser.add("--eps_max", type=float, default=0.25)
    parser.add("--alpha", type=_optional_float, default=None)
    parser.add("--beta", type=_optional_float, default=None)
    parser.add("--gamma", type=_optional_float, default=None)
    parser.add("--zeta", type=_optional_float, default=None)
    parser.add("--n_jobs", type=int, default=1)

    # probes
    parser.add("--probe_fields", type=int, default=100)
    parser.add("--probe_levels", type=float, nargs='*', default=[0.5, 0.9, 0.99])
    parser.add("--defect_lams", type=int, nargs='*', default=[2, 3, 4])

    # output
    parser.add("--work_dir", type=str, default="outputs/convint")
    parser.add("--print_log", type=str2bool, default=True)
    parser.add("--save_log", type=str2bool, default=True)
    parser.add("--save_fields", type=str2bool, default=False)
    return parser


def parse_args(config_file, argv=None):
    parser = build_parser(config_file)
    args, _ = parser.parse_known_args(argv if argv is not None else [])
    return args
