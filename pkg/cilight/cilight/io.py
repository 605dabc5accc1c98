#!/usr/bin/env python
import argparse
import json
import os
import sys
import time
import warnings

import numpy as np
import pandas as pd
import yaml

with warnings.catch_warnings():
    warnings.filterwarnings("ignore", category=FutureWarning)
    import h5py


def _plain(value):
    """numpy scalars and arrays, dataclasses with as_dict and tuples to JSON-ready values."""
    if hasattr(value, 'as_dict'):
        return _plain(value.as_dict())
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    return value


class IO():
    def __init__(self, work_dir, save_log=True, print_log=True):
        self.work_dir = work_dir
        self.save_log = save_log
        self.print_to_screen = print_log
        self.cur_time = time.time()
        self.split_timer = {}
        self.session_file = None
        os.makedirs(self.work_dir, exist_ok=True)

    def path(self, filename):
        return os.path.join(self.work_dir, filename)

    def save_json(self, result, filename):
        with open(self.path(filename), 'w') as f:
            json.dump(_plain(result), f, indent=2, sort_keys=True)
        return self.path(filename)

    def save_csv(self, frame, filename, columns=None):
        if not isinstance(frame, pd.DataFrame):
            frame = pd.DataFrame(frame)
        if columns is not None:
            frame = frame.reindex(columns=columns)
        frame.to_csv(self.path(filename), index=False, float_format='%.12e')
        return self.path(filename)

    def save_h5(self, result, filename, attrs=None):
        with h5py.File(self.path(filename), 'w') as f:
            for k in result.keys():
                f[k] = result[k]
            for k, v in (attrs or {}).items():
                f.attrs[k] = v
        return self.path(filename)

    def save_arg(self, arg):
        self.session_file = self.path('config.yaml')
        arg_dict = vars(arg)
        with open(self.session_file, 'w') as f:
            f.write('# command line: {}\n\n'.format(' '.join(sys.argv)))
            yaml.dump(_plain(arg_dict), f, default_flow_style=False, indent=4)
        return self.session_file

    def print_log(self, str, print_time=True):
        if print_time:
            str = time.strftime("[%m.%d.%y|%X] ", time.localtime()) + str

        if self.print_to_screen:
            print(str)
        if self.save_log:
            with open(self.path('log.txt'), 'a') as f:
                print(str, file=f)

    def init_timer(self, *name):
        self.record_time()
        self.split_timer = {k: 0.0000001 for k in name}

    def check_time(self, name):
        self.split_timer[name] = self.split_timer.get(name, 0.0000001) + self.split_time()

    def record_time(self):
        self.cur_time = time.time()
        return self.cur_time

    def split_time(self):
        split_time = time.time() - self.cur_time
        self.record_time()
        return split_time

    def timings(self):
        return dict(self.split_timer)

    def print_timer(self):
        proportion = {
            k: '{:02d}%'.format(int(round(v * 100 / sum(self.split_timer.values()))))
            for k, v in self.split_timer.items()
        }
        self.print_log('Time consumption:')
        for k in proportion:
            self.print_log(
                '\t[{}][{}]: {:.4f}'.format(k, proportion[k], self.split_timer[k])
            )


def str2bool(v):
    if isinstance(v, bool):
        return v
    if v.lower() in ('yes', 'true', 't', 'y', '1'):
        return True
    elif v.lower() in ('no', 'false', 'f', 'n', '0'):
        return False
    else:
        raise argparse.ArgumentTypeError('Boolean value expected.')


def _split(v):
    return [item for item in v.replace('[', ' ').replace(']', ' ').replace(',', ' ').split() if item]


def str2ints(v):
    if v is None or v == '' or v.lower() == 'none':
        return []
    try:
        return [int(item) for item in _split(v)]
    except ValueError:
        raise argparse.ArgumentTypeError('Comma-separated integers expected, got {}.'.format(v))


def str2floats(v):
    if v is None or v == '' or v.lower() == 'none':
        return []
    try:
        return [float(item) for item in _split(v)]
    except ValueError:
        raise argparse.ArgumentTypeError('Comma-separated numbers expected, got {}.'.format(v))
