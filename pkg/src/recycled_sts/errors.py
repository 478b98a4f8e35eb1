"""Exception hierarchy. The CLI maps these onto exit codes."""

import numpy as np


class RecycledStsError(Exception):
    pass


class InvalidArgumentError(RecycledStsError, ValueError):
    pass


class NumericDomainError(RecycledStsError, ArithmeticError):
    pass


class RankDeficiencyError(RecycledStsError, np.linalg.LinAlgError):
    """Fewer than p usable observations, or a singular normal system."""


class SingularDesignError(RecycledStsError, np.linalg.LinAlgError):
    """The averaged gradient outer-product matrix is not positive definite."""


class EstimationError(RecycledStsError):
    """Too few individuals survived Stage I."""


class ConfigError(InvalidArgumentError):
    pass
