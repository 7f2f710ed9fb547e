"""Exception hierarchy.

Every error carries a ``kind`` (its class name, used in the CLI's
``code=<kind>`` line) and an ``exit_code`` grouping it into config (2),
data (3) or numeric (4) failures.
"""


class MGPError(Exception):
    exit_code = 1

    @property
    def kind(self):
        return type(self).__name__


class ConfigError(MGPError, ValueError):
    exit_code = 2


class DataError(MGPError, ValueError):
    exit_code = 3


class NumericError(MGPError, ArithmeticError):
    exit_code = 4


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class SingularAtEndpoint(ConfigError):
    pass


class MixedFrameCounts(ConfigError):
    pass


class NonScalarRoot(DataError):
    pass


class NonFiniteEnergy(NumericError):
    pass


class DataConfigMismatch(ConfigError):
    pass


class ConfigMismatch(ConfigError):
    pass


class BadChannelIndex(ConfigError):
    pass


class EmptyDataset(DataError):
    pass


class GlyphTooLarge(ConfigError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass
