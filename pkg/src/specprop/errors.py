"""Exception types raised across the package."""


class SpecPropError(Exception):
    """Base class for all package errors."""


class LoadError(SpecPropError):
    """Malformed dataset file (ragged rows, bad tokens, empty file)."""


class EpisodeError(SpecPropError):
    """Episode sampling impossible for the requested way/shot/queries."""


class NoiseError(SpecPropError):
    """Noise injection undefined (e.g. zero-power input series)."""


class SplitError(SpecPropError):
    """Band splitting undefined for the given spectrum."""


class FilterError(SpecPropError):
    """Invalid bandpass frequency bounds."""


class ShapeError(SpecPropError):
    """Incompatible array shapes for an operation."""


class ContractError(SpecPropError):
    """An API precondition was violated."""


class TrainError(SpecPropError):
    """Training diverged or could not proceed."""


class EvalError(SpecPropError):
    """Evaluation could not proceed."""
