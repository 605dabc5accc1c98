import argparse
import logging
import os
import sys
import warnings

import processor
import utils.constant as constant

from config.parse_args import parse_args
from construction.errors import ContractViolation, InvalidConfigurationError, ResolutionError
from utils.gen_utils import set_logger

warnings.filterwarnings('ignore', category=RuntimeWarning)


def build_parser():
    parser = argparse.ArgumentParser(description='Convex integration for the stochastic transport equation')
    commands = parser.add_subparsers(dest='command')
    commands.required = True
    for command, text in (('run', 'run the iteration and write the reports'),
                          ('validate', 'check the hypotheses and print the derived parameters')):
        sub = commands.add_parser(command, help=text)
        sub.add_argument('config', type=str, help='config file path')
    sub = commands.add_parser('probe', help='run one probe suite and write its CSV')
    sub.add_argument('config', type=str, help='config file path')
    sub.add_argument('name', type=str, help='one of {}'.format(', '.join(constant.PROBE_NAMES)))
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args, overrides = build_parser().parse_known_args(argv)
    if not os.path.isfile(args.config):
        print('Config file {} not found.'.format(args.config), file=sys.stderr)
        return constant.EXIT_CONFIG
    config_args = parse_args(args.config, overrides)
    set_logger()
    logging.getLogger('joblib').setLevel(logging.WARNING)

    try:
        pr = processor.Processor(config_args)
        if args.command == 'validate':
            pr.validate()
            return constant.EXIT_PASS
        if args.command == 'probe':
            pr.probe(args.name)
            return constant.EXIT_PASS
        result = pr.run()
    except InvalidConfigurationError as err:
        print(str(err), file=sys.stderr)
        return constant.EXIT_CONFIG
    except ResolutionError as err:
        print('Invalid configuration: {}'.format(err), file=sys.stderr)
        return constant.EXIT_CONFIG
    except ContractViolation as err:
        print(str(err), file=sys.stderr)
        return constant.EXIT_CONTRACT
    return constant.EXIT_PASS if result['passed'] else constant.EXIT_CONTRACT


if __name__ == '__main__':
    sys.exit(main())
