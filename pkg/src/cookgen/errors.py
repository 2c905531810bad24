"""Error taxonomy shared by every pipeline stage.

The CLI maps these onto process exit codes: config problems exit 2, missing
or unusable inputs exit 3, backend failures exit 4, anything else 5.
"""


class PipelineError(Exception):
    """Base class for all cookgen errors."""


class ConfigInvalid(PipelineError):
    pass


class MissingInput(PipelineError):
    pass


class EmptyInput(MissingInput):
    pass


class SchemaMismatch(MissingInput):
    pass


class AlignmentMismatch(MissingInput):
    pass


class NegativeDuration(PipelineError):
    pass


class MissingKeyframes(PipelineError):
    pass


class TimestampOutOfRange(PipelineError):
    pass


class DecodeFailure(PipelineError):
    pass


class BackendUnavailable(PipelineError):
    pass


class BackendTimeout(BackendUnavailable):
    pass


class MalformedBackendReply(PipelineError):
    pass


class MalformedFixtureKey(PipelineError):
    pass


class EmptyRelevantSet(PipelineError):
    pass


class MissingPixelMask(PipelineError):
    pass


class DegenerateMask(PipelineError):
    pass


class DimensionMismatch(PipelineError):
    pass


class EmptyMask(PipelineError):
    pass


class MissingPlan(PipelineError):
    pass


class ZeroReferenceSimilarity(PipelineError):
    pass


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, ConfigInvalid):
        return EXIT_CONFIG
    if isinstance(exc, MissingInput):
        return EXIT_INPUT
    if isinstance(exc, BackendUnavailable):
        return EXIT_BACKEND
    return EXIT_INTERNAL
