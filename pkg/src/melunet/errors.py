"""Exception types shared across the package."""


class MelunetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MelunetError):
    """Invalid configuration: bad shapes, bad hyperparameters, bad CLI options."""


class DatasetParseError(MelunetError):
    """A dataset file could not be parsed; the message carries line or byte offset."""


class TrainingFault(MelunetError):
    """Training diverged or hit a runtime fault; the message records where."""
