"""Exception hierarchy shared by every module."""


class RestylingError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFormat(RestylingError):
    pass


class CorruptData(RestylingError):
    pass


class ZeroDimension(RestylingError):
    pass


class WrongColorspace(RestylingError):
    pass


class NotSquare(RestylingError):
    pass


class NotGray(RestylingError):
    pass


class DuplicateId(RestylingError):
    pass


class EmptyIndex(RestylingError):
    pass


class UnknownId(RestylingError):
    pass


class ConfigError(RestylingError):
    pass


class EmptyCorpus(RestylingError):
    pass


class NonPSD(RestylingError):
    pass


class DimensionMismatch(RestylingError):
    pass


class MissingDir(RestylingError):
    pass
