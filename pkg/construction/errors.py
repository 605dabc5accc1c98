class ConstructionError(Exception):
    """Base class for every failure raised by the construction engine."""


class GridMismatchError(ConstructionError):
    pass


class ResolutionError(ConstructionError):
    """A frequency, blob, or kernel is not resolved by the grid."""


class UnsupportedExponentError(ConstructionError):
    pass


class MeanViolationError(ConstructionError):
    """An antidivergence received an argument with nonzero mean."""

    def __init__(self, mean, tol):
        super(MeanViolationError, self).__init__(
            'argument mean {:.3e} exceeds tolerance {:.1e}'.format(mean, tol))
        self.mean = mean
        self.tol = tol


class InvalidConfigurationError(ConstructionError):
    """A hypothesis inequality fails. `condition` names the inequality."""

    def __init__(self, condition, detail=''):
        msg = 'violated condition [{}]'.format(condition)
        if detail:
            msg += ': ' + detail
        super(InvalidConfigurationError, self).__init__(msg)
        self.condition = condition
        self.detail = detail


class ConsistencyError(ConstructionError):
    pass


class ContractViolation(ConstructionError):
    """A stage finished but missed one of its contract bounds."""

    def __init__(self, report):
        failed = [k for k, v in report.get('passed', {}).items() if not v]
        super(ContractViolation, self).__init__('stage contract failed: {}'.format(', '.join(failed)))
        self.report = report


class DegenerateProbeError(ConstructionError):
    pass
