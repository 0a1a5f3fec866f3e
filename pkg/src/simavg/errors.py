"""Exception types raised by the estimation and averaging routines."""


class DegenerateRowError(ArithmeticError):
    """All admissible kernel weights of a smoother row underflowed to zero."""

    def __init__(self, row, message=None):
        self.row = int(row)
        super().__init__(
            message
            or f"smoother row {self.row} has no nonzero kernel weight; "
            "the bandwidth is too small for this index configuration"
        )


class NoValidBandwidthError(ArithmeticError):
    pass


class ConditioningError(ArithmeticError):
    pass


class NoSelectableModelError(ValueError):
    pass


class DegenerateScreenError(ValueError):
    pass


class QpNotConvergedWarning(RuntimeWarning):
    pass


class RankDeficiencyWarning(RuntimeWarning):
    pass
