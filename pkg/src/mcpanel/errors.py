"""Exception and warning types shared across the package."""


class PanelError(ValueError):
    """Base class for invalid panel inputs."""


class DimensionError(PanelError):
    """Matrix and mask shapes disagree."""


class EmptyMaskError(PanelError):
    """An operation needs at least one observed (or missing) cell."""


class InfeasibleError(PanelError):
    """An estimator cannot be applied to the given missingness pattern."""


class IllPosedError(InfeasibleError):
    """Unregularized regression is singular or numerically rank deficient."""


class IdentificationError(InfeasibleError):
    """Two-way fixed effects are not identified (disconnected design)."""


class ParseError(PanelError):
    """Malformed input file."""


class ObjectiveIncreaseWarning(RuntimeWarning):
    """A descent method produced an objective increase beyond round-off."""
