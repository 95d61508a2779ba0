"""Exception hierarchy shared by every stage of the pipeline.

Input/format problems derive from :class:`InputError` so the command line
can map them to exit code 2 without knowing every concrete type.
"""


class GenreError(Exception):
    """Base class for all package errors."""


class InputError(GenreError, ValueError):
    """Invalid input data, file or configuration."""


# audio
class MalformedContainer(InputError):
    pass


class UnsupportedEncoding(InputError):
    pass


class EmptyAudio(InputError):
    pass


class ClipTooShort(InputError):
    pass


# features
class FrameLongerThanClip(InputError):
    pass


class DegenerateBand(InputError):
    pass


class FeatureFileError(InputError):
    pass


# network
class DimensionMismatch(InputError):
    pass


class BatchTooSmall(InputError):
    pass


class BadMagic(InputError):
    pass


class VersionMismatch(InputError):
    pass


class ShapeChainBroken(InputError):
    pass


class TruncatedFile(InputError):
    pass


# datasets
class ManifestError(InputError):
    """Manifest problem; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownGenre(ManifestError):
    pass


class DuplicatePath(ManifestError):
    pass


class EmptyManifest(ManifestError):
    pass


class ParseError(ManifestError):
    pass


class GenreTooSmall(InputError):
    pass


class KTooLarge(InputError):
    pass
