"""Exception hierarchy shared by all erpqa modules."""


class ErpqaError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ErpqaError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class FormatError(ErpqaError):
    """An input file or raster does not follow the expected format."""


class SceneFormatError(FormatError):
    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path is not None else message)


class MissingFileError(SceneFormatError):
    pass


class DimensionMismatchError(SceneFormatError):
    pass


class MetadataError(SceneFormatError):
    pass


class NoDepthError(ErpqaError):
    """An object mask contains no valid-depth pixel."""


class ConfigurationError(ErpqaError, ValueError):
    pass


class RoutingError(ErpqaError):
    """A reward strategy or judge type tag is not recognised."""


class JudgeParseError(ErpqaError, ValueError):
    def __init__(self, message: str, tail: str):
        self.tail = tail
        super().__init__(f"{message}: ...{tail!r}")
