"""Exception hierarchy. CLI exit codes are keyed off these categories."""


class LanHdrError(Exception):
    exit_code = 4


class InvalidInputError(LanHdrError, ValueError):
    """Argument outside an operation's domain (negative radiance, e <= 0, ...)."""


class ContractError(LanHdrError, ValueError):
    """Shape, scale or channel-count precondition violated by the caller."""


class DegenerateInputError(InvalidInputError):
    pass


class ConfigError(LanHdrError):
    exit_code = 2


class DataError(LanHdrError):
    exit_code = 3


class TrainingDivergenceError(LanHdrError, RuntimeError):
    def __init__(self, message, last_checkpoint=None, components=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
        self.components = components or {}
