"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class for all errors raised by subjectswap."""


class DimensionMismatch(PipelineError, ValueError):
    pass


class EmptyMask(PipelineError, ValueError):
    pass


class InvalidValue(PipelineError, ValueError):
    """A value violates a domain-type invariant."""


class IndexOutOfBounds(PipelineError, IndexError):
    pass


class SubjectVanishes(PipelineError):
    """The affinely transformed subject has less than one pixel of alpha mass."""


class CaptionRejectedAfterRetries(PipelineError):
    def __init__(self, attempts: int, last_caption: str):
        super().__init__(f"caption contained an avoid word on all {attempts} attempts")
        self.attempts = attempts
        self.last_caption = last_caption


class NoDetection(PipelineError):
    pass


class BackendError(PipelineError):
    pass


class BackendUnreachable(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class EmptyMaskReturned(BackendError):
    pass


class DuplicateImageId(PipelineError, ValueError):
    pass


class UnresolvableSuperclass(PipelineError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unresolvable superclass"


class UnreadableManifest(PipelineError):
    pass


class FatalIOError(PipelineError):
    pass


class ConfigError(PipelineError):
    pass


class DecodeError(PipelineError):
    pass
