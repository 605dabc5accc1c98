import numpy as np


class AverageMeter(object):
    """Computes and stores the average, the max and the current value over an omega-ensemble"""
    def __init__(self, name, fmt=':f'):
        self.name = name
        self.fmt = fmt
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.max = -np.inf
        self.count = 0

    def update(self, val, n=1):
        val = float(val)
        self.val = val
        self.sum += val * n
        self.count += n
        self.avg = self.sum / self.count
        self.max = max(self.max, val)

    def as_dict(self):
        return dict(mean=self.avg, max=self.max if self.count else 0., count=self.count)

    def __str__(self):
        fmt_str = '{name} {val' + self.fmt + '} ({avg' + self.fmt + '}, max {max' + self.fmt + '})'
        return fmt_str.format(**self.__dict__)


def meters(names, fmt=':.4e'):
    return {name: AverageMeter(name, fmt) for name in names}
