"""
Error Types
Exception hierarchy shared by the library and the command line.
Every error carries the process exit code the CLI reports for it.
"""

from typing import Tuple


class PruneKitError(Exception):
    """Base class for all prunekit errors"""
    exit_code: int = 1


class ConfigError(PruneKitError):
    """Missing, unparsable or invalid configuration"""
    exit_code = 2


class PlanError(ConfigError):
    """Prune plan could not be constructed for a layout"""


class SpecError(ConfigError):
    """Pipeline stage list is malformed"""


class DataError(PruneKitError):
    """Input data is inconsistent (ids, run directories, records)"""
    exit_code = 3


class CheckpointError(DataError):
    """Checkpoint is unreadable, of the wrong version, or mismatches its config"""


class NumericError(PruneKitError):
    """Non-finite values reached a place that requires finite ones"""
    exit_code = 4


class SamplerError(NumericError):
    """Uniform sampler produced a value outside the open unit interval"""


class UsageError(PruneKitError):
    """Library called with arguments that violate its contract"""
    exit_code = 5


class DimensionError(UsageError):
    """Tensor shapes do not line up"""

    def __init__(self, op: str, left: Tuple[int, ...], right: Tuple[int, ...]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")
