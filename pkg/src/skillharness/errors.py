"""Exception types shared across the harness."""


class HarnessError(Exception):
    """Base class for all harness errors."""


class StoreUnavailable(HarnessError):
    """Filesystem-level failure on a workspace or skill store root."""


class SkillNotFound(HarnessError):
    """Named skill does not exist in the store."""


class MalformedSkill(HarnessError):
    """Skill violates an invariant or cannot be parsed."""


class InvalidUserId(HarnessError):
    """User id fails sanitization (must match [A-Za-z0-9_-]{1,64})."""


class ConfirmationRequired(HarnessError):
    """Behavior-suggestion delta applied without user confirmation."""


class DimensionMismatch(HarnessError):
    """Vector operands have different lengths."""


class ProviderError(HarnessError):
    """Chat or embedding provider call failed."""


class CompressionFailed(HarnessError):
    """History compression aborted; history is left untouched."""


class SubAgentConfigError(HarnessError):
    """Sub-agent skill names a tool absent from the registry."""


class IllegalPhase(HarnessError):
    """Session operation invoked in the wrong lifecycle phase."""


class SuggestionNotFound(HarnessError):
    """Suggestion id unknown or already consumed."""


class TurnNotFound(HarnessError):
    """Feedback addressed a turn index the session never produced."""


class FeedbackNotApplicable(HarnessError):
    """Feedback addressed a turn that did not use a skill."""


class ReplayError(HarnessError):
    """Session log is corrupt; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number
