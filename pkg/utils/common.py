import numpy as np
import scipy.stats as stats

from dataclasses import dataclass, asdict

from construction.errors import DegenerateProbeError


@dataclass(frozen=True)
class PowerLawFit:
    """y ~ coefficient * x^exponent, fitted in log-log space."""
    name: str
    coefficient: float
    exponent: float
    r_squared: float
    n_points: int
    degenerate: bool = False

    def predict(self, x):
        return self.coefficient * np.asarray(x, dtype=float) ** self.exponent

    def as_dict(self):
        return asdict(self)


def fit_power_law(x, y, name='fit', floor=0.):
    """
    Least-squares line through (log x, log y).
    Points with y <= floor are dropped; if fewer than two survive or all y vanish,
    the fit is flagged degenerate with exponent -inf.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError('x and y differ in length: {} vs {}'.format(len(x), len(y)))
    if len(x) < 3:
        raise DegenerateProbeError('{} needs at least 3 sweep points, got {}'.format(name, len(x)))
    keep = (x > 0.) & (y > floor)
    if keep.sum() < 2:
        return PowerLawFit(name, 0., -np.inf, 0., int(keep.sum()), degenerate=True)
    res = stats.linregress(np.log(x[keep]), np.log(y[keep]))
    return PowerLawFit(name, float(np.exp(res.intercept)), float(res.slope), float(res.rvalue ** 2),
                       int(keep.sum()))


def open_interval(lo, hi):
    """Midpoint and half-width of (lo, hi), or None when empty."""
    if not hi > lo:
        return None
    return 0.5 * (lo + hi), 0.5 * (hi - lo)


def geometric_ladder(start, stop, factor=2):
    values = []
    v = start
    while v <= stop:
        values.append(v)
        v *= factor
    return values
